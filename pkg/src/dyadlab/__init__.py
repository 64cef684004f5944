"""Dyadic-model laboratory for matrix weights, sparse bounds and convex-body averages."""
__version__ = "0.1.0"
