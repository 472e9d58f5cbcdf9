"""Regression fairness audits for deterministic pricing algorithms."""

__version__ = "0.1.0"
