"""Noise-robust speech editing toolkit.

Separate a noisy recording into speech and background, suppress residual
noise in the speech with sparse Bayesian recovery and zero-phase filtering,
edit a region, refine the edit by cross-attention against the suppressed
speech and add the background back.
"""
__version__ = "0.1.0"
