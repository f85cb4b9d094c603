"""Adaptive quadratic finite elements for fourth-order semilinear plate problems."""
__version__ = "0.1.0"
