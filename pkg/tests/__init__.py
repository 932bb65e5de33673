"""
Test package for spheroid-cld.
"""
