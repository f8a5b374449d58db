"""
Test package for the scene text detector CLI.
"""
