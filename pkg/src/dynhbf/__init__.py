"""Hybrid analog/digital transmit beamforming for a dual-function radar-communication base station."""

__version__ = "0.1.0"
