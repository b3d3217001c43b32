"""Hierarchical multi-label prediction with label-graph GNNs."""

__version__ = "0.1.0"
