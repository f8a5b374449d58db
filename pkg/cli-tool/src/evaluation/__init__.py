"""
Evaluation modules: detection matching, cost accounting and timing.
"""
