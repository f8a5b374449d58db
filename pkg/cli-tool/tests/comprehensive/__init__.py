"""Long-running training and gradient suites."""
