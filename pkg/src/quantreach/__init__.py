"""Quantized backreachability for a neural-network air-to-air collision avoidance loop."""

__version__ = "0.1.0"
