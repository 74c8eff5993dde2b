"""Simulation laboratory for weighted tallying bandits under repeated exposure optimality."""

__version__ = "0.1.0"
