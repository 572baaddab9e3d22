"""Iterative MR fingerprinting reconstruction with Bloch, low-rank and TV priors."""

__version__ = "0.1.0"
