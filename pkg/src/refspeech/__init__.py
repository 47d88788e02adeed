"""Reference intervals for speech features and glass-box disease detection."""

__version__ = "0.1.0"
