"""Spin-noise simulation of a spin-1 ensemble in a noisy uniaxial magnetic field."""

__version__ = "0.1.0"
