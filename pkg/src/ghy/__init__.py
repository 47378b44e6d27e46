"""Hyperbolic graph embeddings and two-phase node anomaly detection."""

__version__ = "0.1.0"
