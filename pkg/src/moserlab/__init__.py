"""Certified Moser-iteration and Harnack constants on weighted graphs."""

__version__ = "0.1.0"
