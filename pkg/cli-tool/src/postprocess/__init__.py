"""
Mask post-processing and model inference.
"""
