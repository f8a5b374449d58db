"""
Polygon geometry, kernel labels and annotation files.
"""
