"""
Test suite for coded diverging-wave imaging.
"""
