"""Jamming detection for V2X platoons via coupled positional/communication world models."""

__version__ = "0.1.0"
