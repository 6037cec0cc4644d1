"""Reachability of multi-agent systems with distributed ReLU controllers via per-agent SDPs."""
__version__ = "0.1.0"
