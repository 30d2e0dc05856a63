"""Partitioned sampling of public opinions under the voter model with innate opinions."""

__version__ = "0.1.0"
