"""Gossip-based decentralized stochastic multi-level optimization."""

__version__ = "0.1.0"
