"""
spheroid-cld - chord length distributions of spheroid particle populations: forward model,
Tikhonov inversion, population balance transport and a back-and-forth nudging observer.
"""

__version__ = "0.1.0"
