"""Sum-of-squares certificates of orbital stability for hybrid limit cycles."""

__version__ = "0.1.0"
