"""Numerical laboratory for the King model of the spherical Vlasov-Poisson system."""
__version__ = "0.1.0"
