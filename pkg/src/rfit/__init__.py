"""Influence-based robust fitting for quasiconvex geometric models."""

__version__ = "0.1.0"
