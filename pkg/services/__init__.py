"""
Services module for Market Causality Portal
"""
