"""
Test suite for vicos
"""
