"""Wasserstein-robust reinforcement learning: exact robust MDP solver and WRAAC."""

__version__ = "0.1.0"
