"""Smell-event forecasting and notification-effect analysis from citizen odor reports."""

__version__ = "0.1.0"
