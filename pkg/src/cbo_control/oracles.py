"""Reference values the experiments are judged against.

* ``lqg_value_mc``: the linear-quadratic model admits the closed form
  ``u(t, x) = -ln E[exp(-g(x + sqrt(2) W_{T-t}))]``; the expectation is
  estimated from exact Gaussian endpoint samples (no path simulation),
  with a delta-method standard error.
* ``policy_value_mc``: Monte-Carlo value of a trained policy from a given
  time and initial law (remaining-horizon cost only).
* ``value_gradient_fd``: central differences of the policy value with
  mandatory common random numbers across the two bumped evaluations.
* ``sr_riccati_reference``: the systemic-risk model is linear-quadratic in
  the deviation from the empirical mean; its value is assembled from a
  scalar Riccati ODE solved backward with fixed-step RK4.  A brute-force
  dynamic-programming oracle (``sr_dp_value``) cross-checks the ODE.

Every stochastic oracle reports a standard error so comparisons can be
stated in multiples of combined standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NumericError
from .nets import make_stacked_policy
from .problems import (
    ControlProblem,
    InitialDistribution,
    SystemicRiskSpec,
    _sample_initial_array,
    _simulate,
    dist_variance,
    gl_field_mask,
    rollout_trajectories,
)
from .seeding import substream

__all__ = [
    "lqg_value_mc",
    "policy_value_mc",
    "policy_values_at_states",
    "value_gradient_fd",
    "RiccatiSolution",
    "solve_sr_riccati",
    "sr_riccati_reference",
    "sr_dp_value",
    "gl_consistency_scatter",
]


def lqg_value_mc(terminal_cost, t: float, x, horizon: float, n_samples: int,
                 rng: np.random.Generator) -> tuple[float, float]:
    """Value of the linear-quadratic problem at ``(t, x)``.

    Estimates ``-ln mean(exp(-g(x + sqrt(2(T-t)) Z)))`` over ``n_samples``
    standard-normal endpoint draws.  At ``t == horizon`` the value is
    ``g(x)`` exactly with zero error.  Returns ``(value, std_error)``.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if t > horizon:
        raise ValueError(f"t = {t} exceeds horizon {horizon}")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if t == horizon:
        return float(terminal_cost(x)), 0.0
    spread = math.sqrt(2.0 * (horizon - t))
    endpoints = x + spread * rng.standard_normal((n_samples, x.shape[0]))
    vals = np.exp(-terminal_cost(endpoints))
    mean = float(vals.mean())
    if mean <= 0:
        raise NumericError("all exp(-g) samples underflowed to zero")
    sem = float(vals.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else float("inf")
    return -math.log(mean), sem / mean


def _eval_steps(problem: ControlProblem, t0: float, n_steps: int | None) -> int:
    base = problem.n_steps if n_steps is None else int(n_steps)
    if t0 == 0.0:
        return base
    return max(1, round(base * (problem.horizon - t0) / problem.horizon))


def _initial_states(problem: ControlProblem, initial, prefix, rng) -> np.ndarray:
    if isinstance(initial, InitialDistribution):
        return _sample_initial_array(initial, tuple(prefix) + (problem.state_dim,), rng)
    x0 = np.asarray(initial, dtype=np.float64).reshape(-1)
    if x0.shape[0] != problem.state_dim:
        raise ValueError(f"initial state has dim {x0.shape[0]}, expected {problem.state_dim}")
    return np.broadcast_to(x0, tuple(prefix) + (problem.state_dim,)).copy()


def policy_value_mc(problem: ControlProblem, shape, params, t0: float, initial,
                    n_rollouts: int, rng: np.random.Generator,
                    n_steps: int | None = None) -> tuple[float, float]:
    """Expected remaining cost of a policy started from ``initial`` at ``t0``.

    ``initial`` is either a fixed state vector or an
    ``InitialDistribution`` applied i.i.d. per coordinate (per bank for
    the systemic-risk model).  ``n_steps`` sets the evaluation grid over
    the full horizon; the remaining window gets its proportional share.
    Returns ``(value, std_error)``.
    """
    if n_rollouts < 1:
        raise ValueError(f"n_rollouts must be >= 1, got {n_rollouts}")
    if not 0.0 <= t0 <= problem.horizon:
        raise ValueError(f"t0 = {t0} outside [0, {problem.horizon}]")
    starts = _initial_states(problem, initial, (1, n_rollouts), rng)
    if t0 == problem.horizon:
        totals = problem.terminal_cost(starts[0])
    else:
        params = np.asarray(params, dtype=np.float64)
        policy = make_stacked_policy(shape, params[None, :])
        steps = _eval_steps(problem, t0, n_steps)
        terminal, running = _simulate(problem, policy, starts, steps, rng, t0=t0)
        totals = running[0] + problem.terminal_cost(terminal[0])
    value = float(totals.mean())
    sem = float(totals.std(ddof=1) / math.sqrt(n_rollouts)) if n_rollouts > 1 else float("inf")
    return value, sem


def policy_values_at_states(problem: ControlProblem, shape, params, ts, xs,
                            n_rollouts: int, rng: np.random.Generator,
                            n_steps: int | None = None) -> np.ndarray:
    """Policy value at many ``(t, x)`` points sharing one evaluation grid.

    Point ``p`` joins the simulation at the grid step nearest ``ts[p]``
    and accumulates costs from there; states stay frozen before entry.
    Noise is drawn for every step and point regardless of entry time, so
    two calls with identically seeded generators and the same ``ts`` see
    identical draws (the common-random-number pairing used by the
    finite-difference gradient).
    """
    ts = np.asarray(ts, dtype=np.float64).reshape(-1)
    xs = np.asarray(xs, dtype=np.float64)
    n_points = ts.shape[0]
    if xs.shape != (n_points, problem.state_dim):
        raise ValueError(f"xs has shape {xs.shape}, expected {(n_points, problem.state_dim)}")
    steps = problem.n_steps if n_steps is None else int(n_steps)
    dt = problem.horizon / steps
    start_idx = np.clip(np.rint(ts / dt).astype(int), 0, steps)

    params = np.asarray(params, dtype=np.float64)
    policy = make_stacked_policy(shape, params[None, :])
    x = np.repeat(xs[:, None, :], n_rollouts, axis=1)[None]  # (1, P*R? no: (1,P,R,d))
    # flatten points into the rollout axis: (1, P * R, d)
    x = np.ascontiguousarray(x.reshape(1, n_points * n_rollouts, problem.state_dim))
    entry = np.repeat(start_idx, n_rollouts)[None, :]         # (1, P*R)
    scale = problem.diffusion_scale * math.sqrt(dt)
    running = np.zeros((1, n_points * n_rollouts))
    for k in range(steps):
        t = k * dt
        act = policy(t, x)
        active = (entry <= k).astype(np.float64)
        running += active * problem.running_cost(t, x, act) * dt
        move = problem.drift(t, x, act) * dt + scale * rng.standard_normal(x.shape)
        x += active[..., None] * move
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite state at evaluation step {k}")
    totals = running[0] + problem.terminal_cost(x[0])
    return totals.reshape(n_points, n_rollouts).mean(axis=1)


def value_gradient_fd(problem: ControlProblem, shape, params, t: float, x,
                      h_fd: float, n_rollouts: int, seed: int,
                      n_steps: int | None = None, coords=None) -> np.ndarray:
    """Central-difference gradient of the policy value at one ``(t, x)``.

    Each coordinate uses one dedicated noise substream for both bumped
    evaluations (common random numbers are mandatory here; independent
    draws would drown the difference in Monte-Carlo noise).  ``coords``
    restricts the computation; untouched coordinates return 0.
    """
    if h_fd <= 0:
        raise ValueError(f"h_fd must be positive, got {h_fd}")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    grad = np.zeros(problem.state_dim)
    coords = range(problem.state_dim) if coords is None else coords
    for c in coords:
        vals = []
        for sign in (+1.0, -1.0):
            bumped = x.copy()
            bumped[c] += sign * h_fd
            values = policy_values_at_states(
                problem, shape, params, np.array([t]), bumped[None, :],
                n_rollouts, substream(seed, "fd", c), n_steps=n_steps,
            )
            vals.append(values[0])
        grad[c] = (vals[0] - vals[1]) / (2.0 * h_fd)
    return grad


# ---------------------------------------------------------------------------
# Systemic-risk references.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RiccatiSolution:
    """Backward Riccati solution ``P`` with its tail integral.

    The model is linear-quadratic in the per-bank deviation
    ``y = x - xbar``: the feedback ``a = -(q + 2 P(t)) y`` is optimal and

        dP/dt = 2 (kappa + q) P + 2 P^2 + (q^2 - eta) / 2,  P(T) = c / 2.

    ``integral(t)`` returns ``int_t^T P(s) ds``, the source term that the
    noise feeds into the value.
    """

    times: np.ndarray
    p_values: np.ndarray
    tail_integrals: np.ndarray

    def p(self, t: float) -> float:
        return float(np.interp(t, self.times, self.p_values))

    def integral(self, t: float) -> float:
        return float(np.interp(t, self.times, self.tail_integrals))

    def feedback_gain(self, t: float, q: float) -> float:
        return -(q + 2.0 * self.p(t))


def _riccati_rhs(spec: SystemicRiskSpec, p: float) -> float:
    return 2.0 * (spec.kappa + spec.q) * p + 2.0 * p * p + 0.5 * (spec.q ** 2 - spec.eta)


@lru_cache(maxsize=32)
def solve_sr_riccati(spec: SystemicRiskSpec, max_step: float = 1e-4) -> RiccatiSolution:
    """Integrate the Riccati ODE backward from ``P(T) = c/2`` with RK4.

    The step is fixed at ``<= max_step``; the tail integral of ``P`` is
    advanced with the same fourth-order stages.
    """
    n = max(1, math.ceil(spec.horizon / max_step))
    h = spec.horizon / n
    p = 0.5 * spec.c
    integral = 0.0
    ps = np.empty(n + 1)
    integrals = np.empty(n + 1)
    ps[n] = p
    integrals[n] = 0.0
    for k in range(n, 0, -1):
        # backward step: tau increases as t decreases, dP/dtau = -rhs(P)
        k1 = -_riccati_rhs(spec, p)
        k2 = -_riccati_rhs(spec, p + 0.5 * h * k1)
        k3 = -_riccati_rhs(spec, p + 0.5 * h * k2)
        k4 = -_riccati_rhs(spec, p + h * k3)
        q1, q2, q3, q4 = p, p + 0.5 * h * k1, p + 0.5 * h * k2, p + h * k3
        p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        integral = integral + (h / 6.0) * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
        if not (math.isfinite(p) and math.isfinite(integral)):
            raise NumericError(f"Riccati integration diverged at t = {(k - 1) * h}")
        ps[k - 1] = p
        integrals[k - 1] = integral
    times = np.linspace(0.0, spec.horizon, n + 1)
    return RiccatiSolution(times=times, p_values=ps, tail_integrals=integrals)


def sr_riccati_reference(spec: SystemicRiskSpec, t: float, initial,
                         n_banks: int | None = None,
                         max_step: float = 1e-4) -> float:
    """Reference value ``u(t, mu0)`` for the systemic-risk model.

    ``u = P(t) Var(mu0) + sigma^2 int_t^T P(s) ds``, multiplied by
    ``(1 - 1/n)`` when ``n_banks`` is given (finite-``n`` convention: both
    the empirical variance of i.i.d. draws and the effective noise carry
    that factor).  ``n_banks=None`` returns the mean-field limit.
    """
    if not 0.0 <= t <= spec.horizon:
        raise ValueError(f"t = {t} outside [0, {spec.horizon}]")
    variance = dist_variance(initial) if isinstance(initial, InitialDistribution) else float(initial)
    sol = solve_sr_riccati(spec, max_step)
    value = sol.p(t) * variance + spec.sigma ** 2 * sol.integral(t)
    if n_banks is not None:
        value *= 1.0 - 1.0 / n_banks
    return value


def sr_dp_value(spec: SystemicRiskSpec, y0: float = 0.0, n_y: int = 1201,
                y_max: float = 1.2, n_t: int = 100, n_actions: int = 161,
                a_max: float = 4.0, gh_nodes: int = 11) -> float:
    """Brute-force dynamic programming for the mean-field surrogate.

    In the infinite-bank limit the representative deviation follows
    ``dy = (-kappa y + a) dt + sigma dW`` with running cost
    ``a^2/2 + q a y + eta/2 y^2`` and terminal ``c/2 y^2``.  This oracle
    performs backward induction on a truncated lattice with a discrete
    action grid and Gauss-Hermite transition quadrature, entirely
    independent of the Riccati route, and returns ``w(0, y0)``.
    """
    ys = np.linspace(-y_max, y_max, n_y)
    actions = np.linspace(-a_max, a_max, n_actions)
    nodes, weights = np.polynomial.hermite_e.hermegauss(gh_nodes)
    weights = weights / weights.sum()
    dt = spec.horizon / n_t
    w = 0.5 * spec.c * ys ** 2

    y_grid = ys[:, None, None]
    a_grid = actions[None, :, None]
    z_grid = nodes[None, None, :]
    y_next = y_grid + (-spec.kappa * y_grid + a_grid) * dt \
        + spec.sigma * math.sqrt(dt) * z_grid
    stage = (0.5 * a_grid[..., 0] ** 2 + spec.q * a_grid[..., 0] * y_grid[..., 0]
             + 0.5 * spec.eta * y_grid[..., 0] ** 2) * dt

    flat_next = y_next.reshape(-1)
    for _ in range(n_t):
        expected = np.interp(flat_next, ys, w).reshape(n_y, n_actions, gh_nodes) @ weights
        w = (stage + expected).min(axis=1)
    return float(np.interp(y0, ys, w))


# ---------------------------------------------------------------------------
# Control-consistency scatter for the Ginzburg-Landau model.
# ---------------------------------------------------------------------------

def gl_consistency_scatter(problem: ControlProblem, shape, params, n_points: int,
                           seed: int, h_fd: float = 0.05, n_rollouts: int = 400,
                           n_steps: int | None = None,
                           policy_override=None) -> dict:
    """Pair the policy's actions with the masked value-gradient projection.

    States are sampled one per controlled trajectory at a uniformly random
    step.  For every masked lattice coordinate the value gradient is
    estimated by central differences under common random numbers, and the
    target is ``-sum_masked grad``.  Returns the scatter arrays plus the
    least-squares slope/intercept and Pearson correlation.

    ``policy_override(ts, xs) -> actions`` substitutes the x-axis values
    (used to validate the pairing machinery on planted value functions).
    """
    times, states, actions = rollout_trajectories(
        problem, shape, params, n_points, substream(seed, "gl-sample"), n_steps=n_steps,
    )
    n_steps_used = actions.shape[0]
    pick_rng = substream(seed, "gl-pick")
    picked = pick_rng.integers(0, n_steps_used, size=n_points)
    idx = np.arange(n_points)
    ts = times[picked]
    xs = states[picked, idx, :]
    if policy_override is None:
        alphas = actions[picked, idx, 0]
    else:
        alphas = np.asarray(policy_override(ts, xs), dtype=np.float64).reshape(-1)

    mask = gl_field_mask(problem.state_dim)
    masked_coords = np.flatnonzero(mask)
    grad_sum = np.zeros(n_points)
    for c in masked_coords:
        vals = []
        for sign in (+1.0, -1.0):
            bumped = xs.copy()
            bumped[:, c] += sign * h_fd
            vals.append(policy_values_at_states(
                problem, shape, params, ts, bumped, n_rollouts,
                substream(seed, "gl-fd", int(c)), n_steps=n_steps,
            ))
        grad_sum += (vals[0] - vals[1]) / (2.0 * h_fd)
    targets = -grad_sum

    slope, intercept = np.polyfit(alphas, targets, 1)
    corr = float(np.corrcoef(alphas, targets)[0, 1])
    return {
        "t": ts,
        "x": xs,
        "alpha": alphas,
        "target": targets,
        "slope": float(slope),
        "intercept": float(intercept),
        "correlation": corr,
    }
