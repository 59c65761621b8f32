"""Decentralized multi-agent Q-learning lab: grid navigation, shared Double DQN,
stability metrics and (L, rho) phase maps."""

__version__ = "0.1.0"
