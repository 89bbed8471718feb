"""Empirical validation of the optimizer's energy decay.

The population energy is the mean squared distance of agents (and their
mass-weighted momenta) from a known minimizer; on benchmark objectives
with a known optimum its logarithm should fall linearly in continuous
time, and ``decay_fit`` measures that rate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError

__all__ = [
    "EnergyRecord",
    "empirical_energy",
    "decay_fit",
    "benchmark_objective",
    "BenchmarkObjective",
]


@dataclass(frozen=True)
class EnergyRecord:
    """Energy sample at one optimizer step (continuous time = step * lam)."""

    step: int
    time: float
    energy: float
    mass: float


def empirical_energy(pop, theta_ref, mass: float) -> float:
    """Mean of ``(|theta_i - ref|^2 + |omega_i|^2 / mass) / 2`` over agents.

    Zero exactly when every agent sits at the target with zero momentum;
    homogeneous of degree 2 in the deviations; invariant under agent
    permutations and joint translations of all parameters and the target.
    """
    if mass <= 0:
        raise ValueError(f"mass must be positive, got {mass}")
    theta_ref = np.asarray(theta_ref, dtype=np.float64).reshape(-1)
    if theta_ref.shape[0] != pop.theta.shape[1]:
        raise DimensionError(
            f"target has dim {theta_ref.shape[0]}, population has dim {pop.theta.shape[1]}"
        )
    sq_theta = ((pop.theta - theta_ref) ** 2).sum(axis=1)
    sq_omega = (pop.omega ** 2).sum(axis=1)
    return float(0.5 * np.mean(sq_theta + sq_omega / mass))


def decay_fit(records, window: tuple[float, float] = (0.2, 0.8)) -> tuple[float, float]:
    """Least-squares slope of ``ln E`` against time over a record window.

    ``window`` selects a fraction of the (time-sorted) records, by default
    the middle 60% to skip burn-in and any late noise floor.  Nonpositive
    energies inside the window are excluded with a warning.  Returns
    ``(rate, r_squared)``; the rate is negative on contracting runs.
    """
    records = sorted(records, key=lambda r: r.time)
    lo, hi = window
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError(f"window must satisfy 0 <= lo < hi <= 1, got {window}")
    start = int(np.floor(lo * len(records)))
    stop = max(start + 2, int(np.ceil(hi * len(records))))
    selected = records[start:stop]

    positive = [r for r in selected if r.energy > 0]
    if len(positive) < len(selected):
        warnings.warn(
            f"excluded {len(selected) - len(positive)} nonpositive energies from decay fit",
            stacklevel=2,
        )
    if len(positive) < 10:
        raise ValueError(f"need >= 10 positive-energy records in window, got {len(positive)}")

    t = np.array([r.time for r in positive])
    log_e = np.log([r.energy for r in positive])
    if log_e.max() == log_e.min():
        return 0.0, 1.0
    slope, intercept = np.polyfit(t, log_e, 1)
    fitted = slope * t + intercept
    ss_res = float(((log_e - fitted) ** 2).sum())
    ss_tot = float(((log_e - log_e.mean()) ** 2).sum())
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), r_squared


@dataclass(frozen=True)
class BenchmarkObjective:
    """Vectorized cost callback with a documented global minimizer."""

    name: str
    dim: int
    minimizer: np.ndarray

    def __call__(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=np.float64)
        squeeze = thetas.ndim == 1
        if squeeze:
            thetas = thetas[None, :]
        if self.name == "quadratic":
            vals = (thetas ** 2).sum(axis=1)
        elif self.name == "shifted_quadratic":
            vals = ((thetas - self.minimizer) ** 2).sum(axis=1)
        else:  # rastrigin
            vals = (thetas ** 2 + 10.0 * (1.0 - np.cos(2.0 * np.pi * thetas))).sum(axis=1)
        return float(vals[0]) if squeeze else vals


def benchmark_objective(name: str, dim: int, shift: float = 1.0) -> BenchmarkObjective:
    """Objectives with known minimizers: quadratic and rastrigin at the
    origin, shifted_quadratic at ``shift`` in every coordinate."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if name in ("quadratic", "rastrigin"):
        minimizer = np.zeros(dim)
    elif name == "shifted_quadratic":
        minimizer = np.full(dim, float(shift))
    else:
        raise ConfigError(f"unknown benchmark objective {name!r}")
    return BenchmarkObjective(name=name, dim=dim, minimizer=minimizer)
