"""Gradient-free policy search for finite-horizon stochastic control.

Neural-network policies are trained with consensus-based optimizers
(momentum and adaptive-momentum variants) that only ever query Monte-Carlo
estimates of the control cost, never its gradient.  The package bundles

* flat-parameter feedforward and mean-field policy networks (``nets``),
* the consensus optimizers and their driver loop (``cbo``),
* three benchmark control problems with Euler-Maruyama cost evaluation
  (``problems``),
* reference oracles: exact linear-quadratic values, Monte-Carlo policy
  evaluation, finite-difference value gradients and a Riccati solution
  for the systemic-risk model (``oracles``),
* an empirical convergence lab around the population energy (``energy``),
* a reproducible experiment CLI (``cli``).

This module intentionally avoids importing numpy so the command line can
configure thread limits before any BLAS initialisation happens.
"""

__version__ = "0.1.0"
