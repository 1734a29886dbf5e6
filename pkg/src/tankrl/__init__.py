"""Residual multi-goal PPO for set-point control of a cascaded two-tank plant."""

__version__ = "0.1.0"
