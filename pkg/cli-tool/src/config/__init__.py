"""
Run configuration and canonical output file names.
"""
