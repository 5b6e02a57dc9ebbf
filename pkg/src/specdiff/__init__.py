"""Resonantly driven two-level emitter with spectral diffusion.

Closed-form and numerically integrated observables, Monte Carlo photon
streams, a log-binned correlator and least-squares fitting.
"""

__version__ = "0.1.0"
