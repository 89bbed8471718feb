"""Benchmark stochastic control problems and Monte-Carlo cost evaluation.

Three problem families sit behind one ``ControlProblem`` interface:

* a linear-quadratic model with drift ``2a``, diffusion ``sqrt(2)``,
  running cost ``|a|^2`` and a choice of log-form terminal costs (convex,
  double well, or a well shifted to ``|x|^2 = 5``);
* control of a discretized Ginzburg-Landau free energy through an
  external field acting on a sub-interval of the lattice;
* a systemic-risk model of ``n`` banks whose log-reserves mean-revert to
  the empirical mean, with quadratic borrowing/lending costs.

Costs are estimated by Euler-Maruyama rollouts with a left-endpoint
quadrature of the running cost.  All drift/cost callables broadcast over
leading axes with the state in the trailing axis, so the same code path
serves single rollouts and the stacked (agents x rollouts) training
evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericError
from .nets import MeanFieldNetShape, make_policy, make_stacked_policy
from .seeding import substream

__all__ = [
    "ControlProblem",
    "LqgSpec",
    "GinzburgLandauSpec",
    "SystemicRiskSpec",
    "InitialDistribution",
    "LQG_TERMINALS",
    "make_lqg",
    "make_ginzburg_landau",
    "make_systemic_risk",
    "gl_field_mask",
    "gl_potential",
    "gl_drift",
    "sr_costs",
    "sample_initial",
    "dist_variance",
    "em_rollout",
    "cost_functional",
    "population_costs",
    "make_training_objective",
    "rollout_trajectories",
]


@dataclass(frozen=True)
class ControlProblem:
    """Finite-horizon controlled diffusion with additive noise.

    ``drift(t, x, a)``, ``running_cost(t, x, a)`` and ``terminal_cost(x)``
    accept arrays whose last axis is the state (or action) dimension and
    broadcast over any leading axes.  ``sample_x0(prefix, rng)`` draws
    initial states of shape ``prefix + (state_dim,)``.
    """

    name: str
    state_dim: int
    action_dim: int
    horizon: float
    n_steps: int
    diffusion_scale: float
    drift: Callable
    running_cost: Callable
    terminal_cost: Callable
    sample_x0: Callable

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("state_dim and action_dim must be >= 1")


# ---------------------------------------------------------------------------
# Initial distributions (shared by the systemic-risk model and evaluation).
# ---------------------------------------------------------------------------

TWO_MIX_OFFSET = math.sqrt(3.0) / 10.0
TWO_MIX_NOISE = 0.1
THREE_MIX_OFFSET = 0.3
THREE_MIX_NOISE = 0.07

_DIST_KINDS = ("delta", "gaussian", "two_mix", "three_mix")


@dataclass(frozen=True)
class InitialDistribution:
    """Scalar initial law.  ``gaussian`` takes an explicit variance (not a
    standard deviation) to avoid the usual N(0, 0.1) ambiguity."""

    kind: str
    value: float = 0.0      # delta location
    mean: float = 0.0       # gaussian mean
    variance: float = 0.01  # gaussian variance

    def __post_init__(self):
        if self.kind not in _DIST_KINDS:
            raise ConfigError(f"unknown initial distribution {self.kind!r}; choose from {_DIST_KINDS}")
        if self.kind == "gaussian" and self.variance < 0:
            raise ConfigError(f"gaussian variance must be >= 0, got {self.variance}")


def _sample_initial_array(dist: InitialDistribution, shape, rng: np.random.Generator) -> np.ndarray:
    if dist.kind == "delta":
        return np.full(shape, float(dist.value))
    if dist.kind == "gaussian":
        return dist.mean + math.sqrt(dist.variance) * rng.standard_normal(shape)
    if dist.kind == "two_mix":
        sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
        return sign * TWO_MIX_OFFSET + TWO_MIX_NOISE * rng.standard_normal(shape)
    # three equally weighted components at -k, +k and 0
    comp = rng.integers(0, 3, size=shape)
    offset = np.choose(comp, [-THREE_MIX_OFFSET, THREE_MIX_OFFSET, 0.0])
    return offset + THREE_MIX_NOISE * rng.standard_normal(shape)


def sample_initial(dist: InitialDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. samples from the named mixture."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return _sample_initial_array(dist, (n,), rng)


def dist_variance(dist: InitialDistribution) -> float:
    """Exact variance of the initial law (used by the Riccati reference)."""
    if dist.kind == "delta":
        return 0.0
    if dist.kind == "gaussian":
        return float(dist.variance)
    if dist.kind == "two_mix":
        return TWO_MIX_OFFSET ** 2 + TWO_MIX_NOISE ** 2
    return (2.0 / 3.0) * THREE_MIX_OFFSET ** 2 + THREE_MIX_NOISE ** 2


def _delta_sampler(x0: np.ndarray):
    def sample(prefix, rng):
        return np.broadcast_to(x0, tuple(prefix) + x0.shape).copy()

    return sample


# ---------------------------------------------------------------------------
# Linear-quadratic model.
# ---------------------------------------------------------------------------

def _lqg_convex(x):
    return np.log(0.5 * (1.0 + (x ** 2).sum(axis=-1)))


def _lqg_double_well(x):
    return np.log(0.5 * (1.0 + ((x ** 2).sum(axis=-1) - 1.0) ** 2))


def _lqg_shifted_well(x):
    return np.log(0.5 * (1.0 + ((x ** 2).sum(axis=-1) - 5.0) ** 2))


LQG_TERMINALS = {
    "convex": _lqg_convex,
    "double_well": _lqg_double_well,
    "shifted_well": _lqg_shifted_well,
}


@dataclass(frozen=True)
class LqgSpec:
    """Linear-quadratic problem: dx = 2a dt + sqrt(2) dW, f = |a|^2."""

    dim: int
    terminal: str = "convex"
    horizon: float = 1.0
    n_steps: int = 20

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.terminal not in LQG_TERMINALS:
            raise ConfigError(
                f"unknown terminal {self.terminal!r}; choose from {tuple(LQG_TERMINALS)}"
            )


def make_lqg(spec: LqgSpec) -> ControlProblem:
    g = LQG_TERMINALS[spec.terminal]

    def drift(t, x, a):
        return 2.0 * a

    def running_cost(t, x, a):
        return (a ** 2).sum(axis=-1)

    return ControlProblem(
        name=f"lqg-{spec.terminal}-d{spec.dim}",
        state_dim=spec.dim,
        action_dim=spec.dim,
        horizon=spec.horizon,
        n_steps=spec.n_steps,
        diffusion_scale=math.sqrt(2.0),
        drift=drift,
        running_cost=running_cost,
        terminal_cost=g,
        sample_x0=_delta_sampler(np.zeros(spec.dim)),
    )


# ---------------------------------------------------------------------------
# Ginzburg-Landau model.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GinzburgLandauSpec:
    """Discretized double-well free energy controlled by an external field.

    The lattice has ``dim`` interior points with zero boundary values and
    spacing ``h = 1/(dim+1)``.  The scalar control enters the drift as
    ``2 * a * mask`` where the mask marks lattice points with
    ``i/(dim+1)`` in [0.25, 0.6].  The printed running cost uses ``|a|``;
    ``control_cost="quadratic"`` switches to ``a^2`` (the variant whose
    optimal control is the masked value gradient).
    """

    dim: int
    coupling: float = 0.2    # gradient-term weight
    quartic: float = 10.0    # double-well weight
    horizon: float = 1.0
    n_steps: int = 20
    control_cost: str = "abs"
    x0: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.control_cost not in ("abs", "quadratic"):
            raise ConfigError(f"control_cost must be 'abs' or 'quadratic', got {self.control_cost!r}")

    @property
    def h(self) -> float:
        return 1.0 / (self.dim + 1)


def gl_field_mask(dim: int) -> np.ndarray:
    """Indicator of lattice points i (1-based) with i/(dim+1) in [0.25, 0.6]."""
    frac = np.arange(1, dim + 1) / (dim + 1)
    return ((frac >= 0.25) & (frac <= 0.6)).astype(np.float64)


def _gl_pad(x: np.ndarray) -> np.ndarray:
    """Append the zero boundary values x_0 = x_{d+1} = 0."""
    pad = [(0, 0)] * (x.ndim - 1) + [(1, 1)]
    return np.pad(x, pad)


def gl_potential(spec: GinzburgLandauSpec, x) -> np.ndarray:
    """Free energy ``[c/2 * sum((x_i - x_{i-1})/h)^2 + q/4 * sum(1 - x_i^2)^2] * h``."""
    x = np.asarray(x, dtype=np.float64)
    padded = _gl_pad(x)
    diffs = np.diff(padded, axis=-1) / spec.h
    grad_term = 0.5 * spec.coupling * (diffs ** 2).sum(axis=-1)
    quartic_term = 0.25 * spec.quartic * ((1.0 - x ** 2) ** 2).sum(axis=-1)
    return (grad_term + quartic_term) * spec.h


def _gl_potential_gradient(spec: GinzburgLandauSpec, x: np.ndarray) -> np.ndarray:
    padded = _gl_pad(x)
    left = padded[..., :-2]
    right = padded[..., 2:]
    coupling = (spec.coupling / spec.h) * (2.0 * x - left - right)
    quartic = -spec.quartic * spec.h * (1.0 - x ** 2) * x
    return coupling + quartic


def gl_drift(spec: GinzburgLandauSpec, x, a) -> np.ndarray:
    """Negative analytic free-energy gradient plus ``2 * a * mask``."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    mask = gl_field_mask(spec.dim)
    if a.ndim and a.shape[-1] == 1:
        a = a[..., 0]
    return -_gl_potential_gradient(spec, x) + 2.0 * a[..., None] * mask


def make_ginzburg_landau(spec: GinzburgLandauSpec) -> ControlProblem:
    d = spec.dim
    mask = gl_field_mask(d)

    def drift(t, x, a):
        av = a[..., 0]
        return -_gl_potential_gradient(spec, x) + 2.0 * av[..., None] * mask

    if spec.control_cost == "abs":
        def control_term(a):
            return np.abs(a[..., 0])
    else:
        def control_term(a):
            return a[..., 0] ** 2

    def running_cost(t, x, a):
        return (x ** 2).sum(axis=-1) / d + control_term(a)

    def terminal_cost(x):
        return 10.0 / d * (x ** 2).sum(axis=-1)

    return ControlProblem(
        name=f"ginzburg-landau-d{d}",
        state_dim=d,
        action_dim=1,
        horizon=spec.horizon,
        n_steps=spec.n_steps,
        diffusion_scale=math.sqrt(2.0),
        drift=drift,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        sample_x0=_delta_sampler(np.full(d, spec.x0)),
    )


# ---------------------------------------------------------------------------
# Systemic-risk mean-field model.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemicRiskSpec:
    """Network of ``n_banks`` log-reserves mean-reverting to their average.

    dx_i = [kappa*(xbar - x_i) + a_i] dt + sigma dW_i, with quadratic
    borrowing/lending costs; joint convexity of the running cost requires
    q^2 <= eta.  ``q`` and ``sigma`` default to conventional values for
    this model family; experiment configs must state them explicitly.
    """

    n_banks: int
    kappa: float = 0.6
    eta: float = 2.0
    c: float = 2.0
    q: float = 0.8
    sigma: float = 0.2
    horizon: float = 1.0
    n_steps: int = 20
    initial: InitialDistribution = field(
        default_factory=lambda: InitialDistribution("delta", value=0.0)
    )

    def __post_init__(self):
        if self.n_banks < 2:
            raise ConfigError(f"need at least 2 banks, got {self.n_banks}")
        if self.q ** 2 > self.eta:
            raise ConfigError(
                f"running cost not jointly convex: q^2 = {self.q ** 2} > eta = {self.eta}"
            )


def sr_costs(spec: SystemicRiskSpec, x, xbar, a):
    """Per-bank running and terminal costs at ``(x, xbar, a)``.

    f = a^2/2 - q*a*(xbar - x) + eta/2*(xbar - x)^2, g = c/2*(xbar - x)^2;
    both vanish at a centered bank with zero action, f is convex in ``a``.
    """
    gap = np.asarray(xbar, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    f = 0.5 * a ** 2 - spec.q * a * gap + 0.5 * spec.eta * gap ** 2
    g = 0.5 * spec.c * gap ** 2
    return f, g


def make_systemic_risk(spec: SystemicRiskSpec) -> ControlProblem:
    """The ``n`` banks as one vector state; the policy maps the joint state
    to all bank actions and costs are averaged over banks."""
    n = spec.n_banks

    def drift(t, x, a):
        xbar = x.mean(axis=-1, keepdims=True)
        return spec.kappa * (xbar - x) + a

    def running_cost(t, x, a):
        xbar = x.mean(axis=-1, keepdims=True)
        f, _ = sr_costs(spec, x, xbar, a)
        return f.mean(axis=-1)

    def terminal_cost(x):
        xbar = x.mean(axis=-1, keepdims=True)
        gap = xbar - x
        return 0.5 * spec.c * (gap ** 2).mean(axis=-1)

    def sample_x0(prefix, rng):
        return _sample_initial_array(spec.initial, tuple(prefix) + (n,), rng)

    return ControlProblem(
        name=f"systemic-risk-n{n}",
        state_dim=n,
        action_dim=n,
        horizon=spec.horizon,
        n_steps=spec.n_steps,
        diffusion_scale=spec.sigma,
        drift=drift,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        sample_x0=sample_x0,
    )


# ---------------------------------------------------------------------------
# Euler-Maruyama rollouts.
# ---------------------------------------------------------------------------

def em_rollout(problem: ControlProblem, policy, x0, rng: np.random.Generator,
               n_steps: int | None = None, t0: float = 0.0):
    """Single-path rollout; the readable reference for the batched engine.

    ``policy(t, x)`` returns the action vector.  Per step, in this order:
    evaluate the policy, accumulate ``f * dt`` (left endpoint), advance
    the state by drift, then by ``diffusion * sqrt(dt)`` times one fresh
    standard-normal draw.  Returns ``(terminal_state, running_cost)``; the
    terminal cost is left to the caller.
    """
    steps = problem.n_steps if n_steps is None else int(n_steps)
    if steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {steps}")
    x = np.asarray(x0, dtype=np.float64).reshape(-1).copy()
    dt = (problem.horizon - t0) / steps
    scale = problem.diffusion_scale * math.sqrt(dt)
    running = 0.0
    for k in range(steps):
        t = t0 + k * dt
        a = np.asarray(policy(t, x), dtype=np.float64)
        running += float(problem.running_cost(t, x, a)) * dt
        x = x + problem.drift(t, x, a) * dt + scale * rng.standard_normal(x.shape[0])
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state at rollout step {k}")
    return x, running


def _simulate(problem: ControlProblem, policy, x0: np.ndarray, steps: int,
              rng: np.random.Generator, t0: float = 0.0,
              common_noise: bool = False, dtype=np.float64):
    """Batched engine: ``x0`` of shape (A, R, d), stacked ``policy``.

    Returns ``(terminal (A, R, d), running (A, R))``.  Matches
    ``em_rollout`` draw-for-draw for A = R = 1 at float64.  With
    ``common_noise`` the same rollout noise is reused across the A
    parameter rows (for variance-reduced policy comparisons); off by
    default.  ``dtype=float32`` trades per-rollout precision (~1e-6,
    far below Monte-Carlo noise) for roughly double the throughput.
    """
    dtype = np.dtype(dtype)
    a_rows, r, d = x0.shape
    dt = (problem.horizon - t0) / steps
    scale = problem.diffusion_scale * math.sqrt(dt)
    noise_shape = (1, r, d) if common_noise else (a_rows, r, d)
    x = x0.astype(dtype, copy=True)
    running = np.zeros((a_rows, r), dtype=dtype)
    for k in range(steps):
        t = t0 + k * dt
        act = policy(t, x)
        running += problem.running_cost(t, x, act) * dt
        x += problem.drift(t, x, act) * dt
        x += scale * rng.standard_normal(noise_shape, dtype=dtype)
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite state at rollout step {k}")
    return x, running


def cost_functional(problem: ControlProblem, shape, params, n_rollouts: int,
                    rng: np.random.Generator, n_steps: int | None = None,
                    t0: float = 0.0, x0: np.ndarray | None = None):
    """Monte-Carlo estimate of the expected total cost of one policy.

    Averages ``running + terminal`` over ``n_rollouts`` independent
    rollouts (initial states drawn first, then path noise).  Returns
    ``(value, std_error)``.  ``n_steps`` may refine the problem's training
    discretization for a lower-bias evaluation.
    """
    if n_rollouts < 1:
        raise ValueError(f"n_rollouts must be >= 1, got {n_rollouts}")
    steps = problem.n_steps if n_steps is None else int(n_steps)
    params = np.asarray(params, dtype=np.float64)
    policy = make_stacked_policy(shape, params[None, :])
    if x0 is None:
        starts = problem.sample_x0((1, n_rollouts), rng)
    else:
        starts = np.broadcast_to(
            np.asarray(x0, dtype=np.float64), (1, n_rollouts, problem.state_dim)
        ).copy()
    terminal, running = _simulate(problem, policy, starts, steps, rng, t0=t0)
    total = running[0] + problem.terminal_cost(terminal[0])
    value = float(total.mean())
    stderr = float(total.std(ddof=1) / math.sqrt(n_rollouts)) if n_rollouts > 1 else float("inf")
    return value, stderr


def population_costs(problem: ControlProblem, shape, thetas: np.ndarray,
                     n_rollouts: int, rng: np.random.Generator,
                     n_steps: int | None = None,
                     common_noise: bool = False, dtype=np.float64) -> np.ndarray:
    """Mean rollout cost for every parameter row of ``thetas`` (A, D)."""
    steps = problem.n_steps if n_steps is None else int(n_steps)
    thetas = np.asarray(thetas, dtype=np.float64)
    policy = make_stacked_policy(shape, thetas, dtype=dtype)
    starts = problem.sample_x0((thetas.shape[0], n_rollouts), rng)
    terminal, running = _simulate(problem, policy, starts, steps, rng,
                                  common_noise=common_noise, dtype=dtype)
    total = running.astype(np.float64) + problem.terminal_cost(terminal).astype(np.float64)
    return total.mean(axis=1)


def make_training_objective(problem: ControlProblem, shape, n_rollouts: int,
                            seed: int, n_steps: int | None = None,
                            common_noise: bool = False, dtype=np.float64):
    """Objective for the optimizer driver: (N, D) parameters -> (N,) costs.

    Fresh dynamics noise per call from the ``(seed, "dynamics", call)``
    substream, so reruns of a training loop see identical draws while the
    evaluation streams stay untouched.  ``dtype=float32`` speeds up the
    rollout arithmetic; the per-evaluation error it introduces is orders
    of magnitude below the Monte-Carlo noise of ``n_rollouts`` paths.
    """
    state = {"calls": 0}

    def objective(thetas):
        state["calls"] += 1
        rng = substream(seed, "dynamics", state["calls"])
        return population_costs(problem, shape, thetas, n_rollouts, rng,
                                n_steps=n_steps, common_noise=common_noise,
                                dtype=dtype)

    return objective


def rollout_trajectories(problem: ControlProblem, shape, params, n_traj: int,
                         rng: np.random.Generator, n_steps: int | None = None):
    """Simulate trajectories under one policy, keeping states and actions.

    Returns ``(times (K+1,), states (K+1, n_traj, d), actions (K, n_traj, m))``.
    Used for trajectory dumps and for sampling visited ``(t, x)`` pairs.
    """
    steps = problem.n_steps if n_steps is None else int(n_steps)
    params = np.asarray(params, dtype=np.float64)
    policy = make_stacked_policy(shape, params[None, :])
    x = problem.sample_x0((1, n_traj), rng)
    dt = problem.horizon / steps
    scale = problem.diffusion_scale * math.sqrt(dt)
    states = np.empty((steps + 1, n_traj, problem.state_dim))
    actions = np.empty((steps, n_traj, problem.action_dim))
    states[0] = x[0]
    for k in range(steps):
        t = k * dt
        act = policy(t, x)
        actions[k] = act[0]
        x += problem.drift(t, x, act) * dt
        x += scale * rng.standard_normal(x.shape)
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite state at rollout step {k}")
        states[k + 1] = x[0]
    times = np.arange(steps + 1) * dt
    return times, states, actions
