"""Diffusion-based printer classification and authentication of copy detection patterns."""

__version__ = "0.1.0"
