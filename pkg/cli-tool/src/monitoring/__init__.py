"""
Built-in verification modules.
"""
