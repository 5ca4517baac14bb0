"""
satlab test suite.
"""
