"""LITT: timing-aware recurrent modelling with a time-transformation gate."""

__version__ = "0.1.0"
