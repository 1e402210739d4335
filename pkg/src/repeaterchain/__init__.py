"""Discrete-event simulator for entanglement swapping over repeater chains."""

__version__ = "0.1.0"
