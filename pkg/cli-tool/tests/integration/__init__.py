"""End-to-end CLI workflow tests."""
