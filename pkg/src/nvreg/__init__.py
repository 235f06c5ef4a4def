"""Pulse optimization toolkit for a decoherence-protected NV nuclear-spin register."""
__version__ = "0.1.0"
