"""Predict website cyber-risk from externally observable web technologies."""

__version__ = "0.1.0"
