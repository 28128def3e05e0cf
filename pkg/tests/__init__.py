"""
Tests package for Market Causality Portal
"""
