"""Hierarchical federated learning over a space-air-ground network with a
hybrid-action distributional soft-actor-critic controller."""

__version__ = "0.1.0"
