"""Freeway cell transmission model with a charging station and a charging game for plug-in EVs."""

__version__ = "0.1.0"
