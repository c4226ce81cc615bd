"""Component-decomposed deep time-series clustering for transaction histories."""

__version__ = "0.1.0"
