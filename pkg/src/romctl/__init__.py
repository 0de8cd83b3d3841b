"""Reduced-order modeling and control workbench for a 1D reaction-diffusion
system: DMDc, a linear autoencoding ROM with closed-form oracles, a deep
nonlinear autoencoding ROM, and a stability-constrained learned controller."""

__version__ = "0.1.0"
