"""Deflection-routed mesh NoC simulator with learned proactive source throttling."""

__version__ = "0.1.0"
