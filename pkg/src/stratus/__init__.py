"""Layered monitoring testbed for scientific workflows on a simulated cluster."""

__version__ = "0.1.0"
