"""Desk-scale optical/SAR registration with text-assisted feature matching."""

__version__ = "0.1.0"
