"""
Utility modules including error handling, logging and atomic file writes.
"""
