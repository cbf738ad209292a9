"""Sum-of-squares estimators for mixture means and robust mean estimation."""

__version__ = "0.1.0"
