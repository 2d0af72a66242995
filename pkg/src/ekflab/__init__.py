"""Continuous-time extended Kalman filter laboratory."""

__version__ = "0.1.0"
