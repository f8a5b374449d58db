"""
Image I/O, network input transforms and overlays.
"""
