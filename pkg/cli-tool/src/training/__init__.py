"""
Optimizer, synthetic data, training loop and checkpoints.
"""
