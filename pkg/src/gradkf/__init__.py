"""Kalman filtering by gradient descent on prediction errors, with Hebbian model learning."""
__version__ = "0.1.0"
