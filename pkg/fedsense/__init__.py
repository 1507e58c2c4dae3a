"""Distributed federated learning over multi-hop wireless sensor networks."""

__version__ = "0.1.0"
