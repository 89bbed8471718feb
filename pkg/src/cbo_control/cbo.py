"""Consensus-based optimization with momentum and adaptive momentum.

A population of N parameter vectors ("agents") is pulled toward a
cost-weighted consensus point while exploring with scheduled Gaussian
noise.  Two steppers are provided:

* momentum CBO: each agent carries a momentum vector driven by the
  distance to the consensus of its batch;
* adaptive-momentum CBO: the momentum mass is replaced by the inverse of
  a bias-corrected moving average of the batch-weighted second moment,
  mirroring the moment bookkeeping of the Adam optimizer.

All randomness flows through explicitly passed generators; a full run is
bit-reproducible from its seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .energy import empirical_energy
from .errors import NumericError
from .seeding import substream

__all__ = [
    "CboConfig",
    "Population",
    "StepReport",
    "RunRecord",
    "init_population",
    "consensus_point",
    "weighted_variance",
    "sigma_schedule",
    "partition_batches",
    "mcbo_step",
    "adamcbo_step",
    "run_optimizer",
    "write_history_csv",
]

VARIANTS = ("mcbo", "adamcbo")


@dataclass
class CboConfig:
    """Hyperparameters shared by both steppers.

    ``sigma2`` defaults to a decay rate that shrinks the exploration noise
    by a factor of 1000 over the configured number of steps.  The two
    ``literal_*`` switches reproduce the printed update rules verbatim
    (second-moment drift in the parameter update, sign-flipped momentum
    damping); the defaults follow the underlying SDE instead, and
    ``theta_noise_sigma`` likewise scales the parameter noise of the
    momentum stepper by sigma(t) rather than leaving it unscaled.

    ``adam_commit`` controls when the adaptive stepper folds batch
    statistics into its global moving averages: ``"per_batch"`` (default)
    commits after every batch, so a single weight-degenerate batch is
    immediately diluted by its neighbours; ``"per_step"`` commits once per
    optimizer step using the last processed batch.  Per-step commits let
    one degenerate batch set the whole preconditioner for the next step,
    which destabilizes large populations (many batches per step make such
    batches likely), hence the per-batch default.
    """

    lam: float = 0.01
    beta: float = 30.0
    gamma1: float = 1.0
    gamma2: float = 1.0
    mass: float = 1.0
    batch_size: int = 50
    sigma1: float = 1.0
    sigma2: float | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    eps: float = 1e-8
    total_steps: int = 1000
    theta_noise_sigma: bool = True
    adam_commit: str = "per_batch"
    literal_adam_theta: bool = False
    literal_adam_damping: bool = False

    def __post_init__(self):
        if self.adam_commit not in ("per_batch", "per_step"):
            raise ValueError(
                f"adam_commit must be 'per_batch' or 'per_step', got {self.adam_commit!r}"
            )
        if self.lam <= 0:
            raise ValueError(f"time step lam must be positive, got {self.lam}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("adam_beta1 and adam_beta2 must lie in [0, 1)")
        if self.beta < 0 or self.sigma1 < 0 or self.mass <= 0:
            raise ValueError("beta and sigma1 must be >= 0 and mass > 0")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma1 and gamma2 must be >= 0")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.sigma2 is None:
            if self.total_steps > 0:
                self.sigma2 = math.log(1000.0) / (self.lam * self.total_steps)
            else:
                self.sigma2 = 0.0
        if self.sigma2 < 0:
            raise ValueError(f"sigma2 must be >= 0, got {self.sigma2}")


@dataclass
class Population:
    """Agent parameters, momenta and the global Adam moment state."""

    theta: np.ndarray       # (N, D)
    omega: np.ndarray       # (N, D)
    adam_m: np.ndarray      # (D,) moving average of batch consensus points
    adam_v: np.ndarray      # (D,) moving average of batch weighted variances
    step_counter: int = 1   # bias-correction exponent; counts committed steps

    @property
    def size(self) -> int:
        return self.theta.shape[0]

    @property
    def dim(self) -> int:
        return self.theta.shape[1]


@dataclass
class StepReport:
    """Diagnostics of one batch update."""

    consensus: np.ndarray
    cost_min: float
    cost_mean: float
    sigma: float
    weight_entropy: float   # in [0, ln(batch size)]


@dataclass
class RunRecord:
    """Per-iteration summary; serializable via ``to_dict``."""

    step: int
    sigma: float
    batch_min_cost: float
    batch_mean_cost: float
    consensus_norm: float
    energy: float | None = None
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "sigma": self.sigma,
            "batch_min_cost": self.batch_min_cost,
            "batch_mean_cost": self.batch_mean_cost,
            "consensus_norm": self.consensus_norm,
            "energy": self.energy,
            "wall_clock": self.wall_clock,
        }


def init_population(n_agents: int, dim: int, rng: np.random.Generator) -> Population:
    """Standard-normal parameters, zero momenta, zeroed moment state."""
    if n_agents < 1 or dim < 1:
        raise ValueError(f"need n_agents >= 1 and dim >= 1, got {n_agents}, {dim}")
    theta = rng.standard_normal((n_agents, dim))
    return Population(
        theta=theta,
        omega=np.zeros((n_agents, dim)),
        adam_m=np.zeros(dim),
        adam_v=np.zeros(dim),
    )


def _softmin_weights(costs: np.ndarray, beta: float) -> np.ndarray:
    """Normalized exp(-beta * cost) weights, max-shifted so the smallest
    cost maps to weight exp(0); exact by shift invariance."""
    shifted = costs - costs.min()
    w = np.exp(-beta * shifted)
    return w / w.sum()


def _check_batch(theta_batch, costs):
    theta_batch = np.asarray(theta_batch, dtype=np.float64)
    if theta_batch.ndim == 1:
        theta_batch = theta_batch[:, None]
    costs = np.asarray(costs, dtype=np.float64).reshape(-1)
    if theta_batch.shape[0] == 0:
        raise ValueError("empty batch")
    if theta_batch.shape[0] != costs.shape[0]:
        raise ValueError(
            f"batch has {theta_batch.shape[0]} rows but {costs.shape[0]} costs"
        )
    if not np.all(np.isfinite(costs)):
        raise NumericError("batch costs contain non-finite values")
    return theta_batch, costs


def consensus_point(theta_batch, costs, beta: float) -> np.ndarray:
    """Cost-weighted average of the batch rows, weight exp(-beta * cost).

    Lies in the convex hull of the rows, is invariant under adding a
    constant to every cost and under joint row permutations, reduces to
    the arithmetic mean at beta = 0 and to the best row as beta -> inf.
    """
    theta_batch, costs = _check_batch(theta_batch, costs)
    w = _softmin_weights(costs, beta)
    return w @ theta_batch


def weighted_variance(theta_batch, costs, beta: float, consensus) -> np.ndarray:
    """Coordinatewise weighted second moment about the consensus point."""
    theta_batch, costs = _check_batch(theta_batch, costs)
    consensus = np.asarray(consensus, dtype=np.float64).reshape(-1)
    if consensus.shape[0] != theta_batch.shape[1]:
        raise ValueError(
            f"consensus has dim {consensus.shape[0]}, batch has dim {theta_batch.shape[1]}"
        )
    w = _softmin_weights(costs, beta)
    return w @ (theta_batch - consensus) ** 2


def sigma_schedule(step: int, sigma1: float, sigma2: float, lam: float) -> float:
    """Exponentially decaying exploration noise sigma1 * exp(-sigma2 * t)
    evaluated at continuous time t = step * lam."""
    return sigma1 * math.exp(-sigma2 * step * lam)


def partition_batches(n_agents: int, batch_size: int, rng: np.random.Generator):
    """Uniformly shuffled partition of ``range(n_agents)``.

    Every index appears exactly once; all batches have ``batch_size``
    elements except possibly a shorter final one.
    """
    if not 1 <= batch_size <= n_agents:
        raise ValueError(f"need 1 <= batch_size <= {n_agents}, got {batch_size}")
    perm = rng.permutation(n_agents)
    return [perm[i:i + batch_size] for i in range(0, n_agents, batch_size)]


def _entropy(weights: np.ndarray) -> float:
    nz = weights[weights > 0]
    return float(-(nz * np.log(nz)).sum())


def _check_finite_update(new_theta, new_omega, batch, step):
    bad = ~(np.isfinite(new_theta).all(axis=1) & np.isfinite(new_omega).all(axis=1))
    if bad.any():
        agent = int(np.asarray(batch)[np.argmax(bad)])
        raise NumericError(f"non-finite update for agent {agent} at step {step}")


def mcbo_step(pop: Population, batch, costs, cfg: CboConfig, step: int,
              rng: np.random.Generator) -> StepReport:
    """One momentum-CBO update of the agents in ``batch``.

    theta <- theta + lam*omega - gamma1*lam*(theta - M) + s_theta * xi_theta
    omega <- omega - lam*mass*(theta - M) - lam*gamma2*omega
                   + sigma(t) * sqrt(lam*mass) * xi_omega

    where M is the batch consensus and s_theta is sigma(t)*sqrt(lam)
    (or sqrt(lam) when ``cfg.theta_noise_sigma`` is off).  Only rows in
    ``batch`` are touched; noise is drawn fresh per agent and coordinate,
    theta noise first.
    """
    theta = pop.theta[batch]
    omega = pop.omega[batch]
    theta_b, costs_arr = _check_batch(theta, costs)
    w = _softmin_weights(costs_arr, cfg.beta)
    consensus = w @ theta_b
    sigma = sigma_schedule(step, cfg.sigma1, cfg.sigma2, cfg.lam)
    lam = cfg.lam

    xi_theta = rng.standard_normal(theta.shape)
    xi_omega = rng.standard_normal(theta.shape)
    theta_noise = (sigma if cfg.theta_noise_sigma else 1.0) * math.sqrt(lam)

    dev = theta - consensus
    new_theta = theta + lam * omega - cfg.gamma1 * lam * dev + theta_noise * xi_theta
    new_omega = (omega - lam * cfg.mass * dev - lam * cfg.gamma2 * omega
                 + sigma * math.sqrt(lam * cfg.mass) * xi_omega)

    _check_finite_update(new_theta, new_omega, batch, step)
    pop.theta[batch] = new_theta
    pop.omega[batch] = new_omega
    return StepReport(consensus, float(costs_arr.min()), float(costs_arr.mean()),
                      sigma, _entropy(w))


def adamcbo_step(pop: Population, batch, costs, cfg: CboConfig, step: int,
                 rng: np.random.Generator, commit: bool = True) -> StepReport:
    """One adaptive-momentum update of the agents in ``batch``.

    The batch consensus M and weighted variance V are blended into the
    global moving averages, bias-corrected with exponent
    ``pop.step_counter``, and the momentum drift is preconditioned by
    ``1 / (V_hat + eps)`` (entries therefore bounded by ``1/eps``).  The
    moving averages are committed once per optimizer step: callers pass
    ``commit=True`` only for the step's final batch, so every batch of a
    step sees the same global state and the same correction exponent.
    """
    theta = pop.theta[batch]
    omega = pop.omega[batch]
    theta_b, costs_arr = _check_batch(theta, costs)
    w = _softmin_weights(costs_arr, cfg.beta)
    consensus = w @ theta_b
    variance = w @ (theta_b - consensus) ** 2
    sigma = sigma_schedule(step, cfg.sigma1, cfg.sigma2, cfg.lam)
    lam = cfg.lam

    m_new = cfg.adam_beta1 * pop.adam_m + (1.0 - cfg.adam_beta1) * consensus
    v_new = cfg.adam_beta2 * pop.adam_v + (1.0 - cfg.adam_beta2) * variance
    k = pop.step_counter
    m_hat = m_new / (1.0 - cfg.adam_beta1 ** k)
    v_hat = v_new / (1.0 - cfg.adam_beta2 ** k)

    xi = rng.standard_normal(theta.shape)
    if cfg.literal_adam_theta:
        new_theta = theta + lam * v_hat
    else:
        new_theta = theta + lam * omega
    damping = cfg.gamma2 * lam * omega
    if not cfg.literal_adam_damping:
        damping = -damping
    new_omega = (omega - lam * (theta - m_hat) / (v_hat + cfg.eps) + damping
                 + sigma * math.sqrt(lam) * xi)

    _check_finite_update(new_theta, new_omega, batch, step)
    pop.theta[batch] = new_theta
    pop.omega[batch] = new_omega
    if commit:
        pop.adam_m = m_new
        pop.adam_v = v_new
        pop.step_counter += 1
    return StepReport(consensus, float(costs_arr.min()), float(costs_arr.mean()),
                      sigma, _entropy(w))


def _evaluate(objective, thetas: np.ndarray, step: int) -> np.ndarray:
    """Call the vectorized objective and validate its output."""
    try:
        costs = np.asarray(objective(thetas), dtype=np.float64).reshape(-1)
    except Exception as exc:
        raise NumericError(f"objective failed at step {step}: {exc}") from exc
    if costs.shape[0] != thetas.shape[0]:
        raise NumericError(
            f"objective returned {costs.shape[0]} costs for {thetas.shape[0]} agents at step {step}"
        )
    if not np.all(np.isfinite(costs)):
        agent = int(np.argmax(~np.isfinite(costs)))
        raise NumericError(f"objective returned non-finite cost for agent {agent} at step {step}")
    return costs


def run_optimizer(objective, cfg: CboConfig, n_agents: int, dim: int,
                  variant: str, seed: int, theta_ref=None,
                  progress=None) -> tuple[np.ndarray, list[RunRecord]]:
    """Drive a full optimization run.

    ``objective`` maps a parameter matrix ``(K, D)`` to a cost vector
    ``(K,)``; it is called exactly once per step with the whole population
    (batches are disjoint, so per-batch evaluation would see the same
    parameters).  Costs inside a step may be computed concurrently by the
    objective, but all update noise is drawn serially here, so a run is a
    pure function of ``(cfg, n_agents, dim, variant, seed)``.

    Returns the parameters of the agent with the smallest last-evaluated
    cost and one ``RunRecord`` per step.  With ``theta_ref`` given, each
    record carries the population energy relative to that target.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if cfg.batch_size > n_agents:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds population size {n_agents}")
    pop = init_population(n_agents, dim, substream(seed, "init"))
    if theta_ref is not None:
        theta_ref = np.asarray(theta_ref, dtype=np.float64)

    history: list[RunRecord] = []
    started = time.perf_counter()

    if cfg.total_steps == 0:
        costs = _evaluate(objective, pop.theta, step=0)
        best = int(np.argmin(costs))
        return pop.theta[best].copy(), history

    last_costs = None
    for step in range(cfg.total_steps):
        batches = partition_batches(n_agents, cfg.batch_size, substream(seed, "batching", step))
        costs = _evaluate(objective, pop.theta, step)
        update_rng = substream(seed, "update", step)
        report = None
        for j, batch in enumerate(batches):
            if variant == "mcbo":
                report = mcbo_step(pop, batch, costs[batch], cfg, step, update_rng)
            else:
                commit = (cfg.adam_commit == "per_batch") or j == len(batches) - 1
                report = adamcbo_step(pop, batch, costs[batch], cfg, step, update_rng,
                                      commit=commit)
        energy = None
        if theta_ref is not None:
            energy = empirical_energy(pop, theta_ref, cfg.mass)
        record = RunRecord(
            step=step,
            sigma=report.sigma,
            batch_min_cost=float(costs.min()),
            batch_mean_cost=float(costs.mean()),
            consensus_norm=float(np.linalg.norm(report.consensus)),
            energy=energy,
            wall_clock=time.perf_counter() - started,
        )
        history.append(record)
        last_costs = costs
        if progress is not None:
            progress(record)

    best = int(np.argmin(last_costs))
    return pop.theta[best].copy(), history


def write_history_csv(path, history: list[RunRecord]) -> None:
    """Write the run history; byte-identical for identical runs.

    Columns: step, sigma, batch_min_cost, batch_mean_cost, consensus_norm
    and, when energies were tracked, energy.  Wall-clock stays out of the
    file so reruns hash equal.
    """
    import csv

    with_energy = any(r.energy is not None for r in history)
    fields = ["step", "sigma", "batch_min_cost", "batch_mean_cost", "consensus_norm"]
    if with_energy:
        fields.append("energy")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for rec in history:
            row = [rec.step, repr(rec.sigma), repr(rec.batch_min_cost),
                   repr(rec.batch_mean_cost), repr(rec.consensus_norm)]
            if with_energy:
                row.append("" if rec.energy is None else repr(rec.energy))
            writer.writerow(row)
