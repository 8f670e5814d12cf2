"""Simulation of broadband polarization-entangled photon pairs from an AlGaAs
Bragg reflection waveguide, from layer stack to reconstructed density matrices."""

__version__ = "0.1.0"
