"""
pmtune Tests Package
"""
