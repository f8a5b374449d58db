"""
Detector layers, blocks and weight containers.
"""
