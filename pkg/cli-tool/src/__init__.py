"""
Scene Text Detector - Source Package
Tensor engine, detector model, geometry, training and evaluation modules.
"""

__version__ = "1.0.0"
__author__ = "Scene Text Detector Team"
