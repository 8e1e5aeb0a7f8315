"""Discrete-event simulator for dual-radio make-before-break 802.11 handoffs."""

__version__ = "0.1.0"
