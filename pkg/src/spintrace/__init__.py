"""Symmetry- and spin-resolved semiclassical trace formula toolkit."""

__version__ = "0.1.0"
