"""Quantile constraint learning for wind farm siting and sizing."""

__version__ = "0.1.0"
