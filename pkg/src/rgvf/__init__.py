"""Question networks of interdependent general value functions."""

__version__ = "0.1.0"
