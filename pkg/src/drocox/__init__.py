"""Distributionally robust training and fairness evaluation of Cox models."""

__version__ = "0.1.0"
