"""Kidney-biopsy chip pipeline and eGFR regression network."""

__version__ = "0.1.0"
