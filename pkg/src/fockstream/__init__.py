"""Photon-counting trajectories of an open system driven by an N-photon wave packet."""

__version__ = "0.1.0"
