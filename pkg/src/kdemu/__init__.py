"""Data-informed emulators for the time-dependent uranium distribution
coefficient of an engineered clay buffer."""

__version__ = "0.1.0"
