"""Belief-state pre-training and decentralized I2Q learning for cooperative Dec-POMDPs."""

__version__ = "0.1.0"
