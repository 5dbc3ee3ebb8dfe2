"""Turbulence and adaptive-optics channel for orbital-angular-momentum photon states."""

__version__ = "0.1.0"
