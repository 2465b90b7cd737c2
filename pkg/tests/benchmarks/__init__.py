"""
Performance benchmarks
"""
