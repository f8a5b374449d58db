"""
Core numeric modules: tensors, differentiable operators, gradient checks and losses.
"""
