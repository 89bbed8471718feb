"""End-to-end acceptance gate.

Each test here implements one numbered criterion at its stated tolerance,
trains whatever it needs from scratch at desk scale, and prints one
PASS/FAIL line.  Run with ``pytest tests/test_acceptance.py -v -s`` to see
progress; the module is the slow part of the suite (most of an hour on
two cores).

Budget notes: the stated runtimes (15 min for the d=1 training, 1 min for
the energy study) are desk-scale sizing targets for laptop-class
hardware; they are printed, not asserted, since CI boxes vary.
"""

import math
import statistics
import time

import numpy as np
import pytest

from cbo_control.cbo import (
    CboConfig,
    consensus_point,
    init_population,
    mcbo_step,
    adamcbo_step,
    run_optimizer,
    weighted_variance,
    write_history_csv,
)
from cbo_control.energy import EnergyRecord, benchmark_objective, decay_fit, empirical_energy
from cbo_control.nets import (
    default_meanfield_shape,
    default_policy_shape,
    make_policy,
    param_count,
)
from cbo_control.oracles import (
    gl_consistency_scatter,
    lqg_value_mc,
    policy_value_mc,
    sr_riccati_reference,
)
from cbo_control.problems import (
    GinzburgLandauSpec,
    InitialDistribution,
    LQG_TERMINALS,
    LqgSpec,
    SystemicRiskSpec,
    em_rollout,
    gl_drift,
    gl_potential,
    make_ginzburg_landau,
    make_lqg,
    make_systemic_risk,
    make_training_objective,
)
from cbo_control.seeding import substream

pytestmark = pytest.mark.acceptance

SEED = 20240805


def _train(problem, shape, cfg, n_agents, n_rollouts, seed, variant="adamcbo",
           label="", dtype=np.float32):
    objective = make_training_objective(problem, shape, n_rollouts, seed,
                                        dtype=dtype)
    started = time.time()
    every = max(1, cfg.total_steps // 5)

    def progress(rec):
        if rec.step % every == 0:
            print(f"    [{label}] step {rec.step}/{cfg.total_steps} "
                  f"mean={rec.batch_mean_cost:.4f}", flush=True)

    best, history = run_optimizer(objective, cfg, n_agents, param_count(shape),
                                  variant, seed, progress=progress)
    print(f"    [{label}] trained in {time.time() - started:.0f}s", flush=True)
    return best, history


def _report(num, name, ok, detail):
    print(f"ACCEPTANCE {num} [{name}]: {'PASS' if ok else 'FAIL'} ({detail})",
          flush=True)


# ---------------------------------------------------------------------------
# shared desk-scale training configurations (tuned; see configs/ for the
# CLI mirrors)
# ---------------------------------------------------------------------------

def lqg_d1_cbo(total_steps=2000):
    return CboConfig(
        total_steps=total_steps, batch_size=50, lam=0.01, beta=20.0,
        gamma2=0.3, adam_beta1=0.99, adam_beta2=0.99995,
        sigma1=1.0, sigma2=math.log(300.0) / (0.01 * total_steps),
    )


class TestCriterion1ConvexLqg:
    def test_policy_value_matches_reference(self):
        spec = LqgSpec(dim=1, terminal="convex", n_steps=20)
        problem = make_lqg(spec)
        shape = default_policy_shape(1, 1)
        started = time.time()
        best, _ = _train(problem, shape, lqg_d1_cbo(), n_agents=2000,
                         n_rollouts=64, seed=SEED, label="lqg-d1-convex")
        u_ref, u_err = lqg_value_mc(LQG_TERMINALS["convex"], 0.0, np.zeros(1), 1.0,
                                    2_000_000, substream(SEED, "c1-ref"))
        value, err = policy_value_mc(problem, shape, best, 0.0, np.zeros(1),
                                     200_000, substream(SEED, "c1-eval"),
                                     n_steps=200)
        rel = abs(value - u_ref) / abs(u_ref)
        ok = rel <= 0.05
        _report(1, "lqg d=1 convex", ok,
                f"policy {value:.5f} vs reference {u_ref:.5f} -> {rel * 100:.2f}% "
                f"(tol 5%), wall {time.time() - started:.0f}s")
        assert ok, f"relative error {rel:.4f} exceeds 0.05"


class TestCriterion2DoubleWellLqg:
    def test_policy_value_matches_reference(self):
        spec = LqgSpec(dim=1, terminal="double_well", n_steps=20)
        problem = make_lqg(spec)
        shape = default_policy_shape(1, 1)
        started = time.time()
        best, _ = _train(problem, shape, lqg_d1_cbo(), n_agents=2000,
                         n_rollouts=64, seed=SEED + 1, label="lqg-d1-doublewell")
        u_ref, _ = lqg_value_mc(LQG_TERMINALS["double_well"], 0.0, np.zeros(1), 1.0,
                                2_000_000, substream(SEED, "c2-ref"))
        value, err = policy_value_mc(problem, shape, best, 0.0, np.zeros(1),
                                     200_000, substream(SEED, "c2-eval"),
                                     n_steps=200)
        rel = abs(value - u_ref) / abs(u_ref)
        ok = rel <= 0.10
        _report(2, "lqg d=1 double well", ok,
                f"policy {value:.5f} vs reference {u_ref:.5f} -> {rel * 100:.2f}% "
                f"(tol 10%), wall {time.time() - started:.0f}s")
        assert ok, f"relative error {rel:.4f} exceeds 0.10"


class TestCriterion3BatchSizeStudy:
    def test_accuracy_degrades_with_smaller_rollout_batch(self):
        spec = LqgSpec(dim=4, terminal="shifted_well", n_steps=20)
        problem = make_lqg(spec)
        shape = default_policy_shape(4, 4, width=12)
        u_ref, _ = lqg_value_mc(LQG_TERMINALS["shifted_well"], 0.0, np.zeros(4), 1.0,
                                2_000_000, substream(SEED, "c3-ref"))
        total_steps = 700
        errors = {64: [], 8: []}
        for batch in (64, 8):
            for k in range(5):
                cfg = CboConfig(
                    total_steps=total_steps, batch_size=50, lam=0.01, beta=20.0,
                    gamma2=0.3, adam_beta1=0.99, adam_beta2=0.99995,
                    sigma1=1.0, sigma2=math.log(300.0) / (0.01 * total_steps),
                )
                best, _ = _train(problem, shape, cfg, n_agents=500,
                                 n_rollouts=batch, seed=SEED + 10 * batch + k,
                                 label=f"lqg-d4 R={batch} seed{k}")
                value, _ = policy_value_mc(problem, shape, best, 0.0, np.zeros(4),
                                           100_000, substream(SEED, "c3-eval", batch, k),
                                           n_steps=200)
                errors[batch].append(abs(value - u_ref) / abs(u_ref))
                print(f"    R={batch} seed{k}: rel={errors[batch][-1] * 100:.2f}%",
                      flush=True)
        med64 = statistics.median(errors[64])
        med8 = statistics.median(errors[8])
        ok = (med64 <= 0.10) and (med64 < med8)
        _report(3, "lqg d=4 batch-size study", ok,
                f"median rel err: batch64 {med64 * 100:.2f}% (tol 10%), "
                f"batch8 {med8 * 100:.2f}%; require batch64 < batch8")
        assert med64 <= 0.10, f"batch-64 median error {med64:.4f} exceeds 0.10"
        assert med64 < med8, f"no degradation: {med64:.4f} !< {med8:.4f}"


class TestCriterion4SystemicRisk:
    def test_table_against_riccati_reference(self):
        initial = InitialDistribution("gaussian", mean=0.0, variance=0.01)
        train_spec = SystemicRiskSpec(n_banks=16, q=0.8, sigma=0.2, initial=initial)
        problem = make_systemic_risk(train_spec)
        shape = default_meanfield_shape()
        total_steps = 1000
        cfg = CboConfig(
            total_steps=total_steps, batch_size=30, lam=0.01, beta=100.0,
            gamma2=0.3, adam_beta1=0.99, adam_beta2=0.99995,
            sigma1=1.0, sigma2=math.log(300.0) / (0.01 * total_steps),
        )
        best, _ = _train(problem, shape, cfg, n_agents=300, n_rollouts=8,
                         seed=SEED + 4, label="systemic-risk")

        time_grid = [round(0.1 * k, 1) for k in range(10)]
        n_values = [50, 100, 200, 400, 800]
        columns = {}
        for n in n_values:
            spec_n = SystemicRiskSpec(n_banks=n, q=0.8, sigma=0.2, initial=initial)
            problem_n = make_systemic_risk(spec_n)
            rollouts = max(400, int(200_000 / n))
            columns[n] = [
                policy_value_mc(problem_n, shape, best, t, initial, rollouts,
                                substream(SEED, "c4-eval", n, k), n_steps=100)[0]
                for k, t in enumerate(time_grid)
            ]
            print(f"    n={n}: u(0)={columns[n][0]:.5f} u(0.9)={columns[n][-1]:.5f}",
                  flush=True)

        spec_100 = SystemicRiskSpec(n_banks=100, q=0.8, sigma=0.2, initial=initial)
        ref_100 = [sr_riccati_reference(spec_100, t, initial, n_banks=100)
                   for t in time_grid]
        rels = [abs(v - r) / r for v, r in zip(columns[100], ref_100)]
        worst_ref = max(rels)

        spreads = []
        for k in range(len(time_grid)):
            row = [columns[n][k] for n in n_values]
            spreads.append((max(row) - min(row)) / statistics.mean(row))
        worst_spread = max(spreads)

        ok = worst_ref <= 0.05 and worst_spread < 0.03
        _report(4, "systemic-risk table", ok,
                f"n=100 vs finite-n Riccati: worst {worst_ref * 100:.2f}% (tol 5%); "
                f"cross-n spread worst {worst_spread * 100:.2f}% (tol 3%)")
        assert worst_ref <= 0.05, f"worst relative error {worst_ref:.4f} exceeds 0.05"
        assert worst_spread < 0.03, f"cross-n spread {worst_spread:.4f} exceeds 0.03"


class TestCriterion5EnergyDecay:
    def test_exponential_decay_over_seeds(self):
        started = time.time()
        obj = benchmark_objective("quadratic", 2)
        successes = 0
        rates = []
        for seed in range(20):
            cfg = CboConfig(total_steps=2000, batch_size=50, lam=0.01,
                            sigma1=1.0, sigma2=2.0)
            _, history = run_optimizer(obj, cfg, 200, 2, "mcbo", seed=seed,
                                       theta_ref=obj.minimizer)
            records = [EnergyRecord(r.step, r.step * cfg.lam, r.energy, cfg.mass)
                       for r in history]
            # the contraction completes within the first ~20% of the budget
            # and the rest of the run sits on the collapsed plateau; the fit
            # window selects the decay phase (that is what it is for)
            rate, r2 = decay_fit(records, window=(0.02, 0.2))
            drop = history[-1].energy / history[0].energy
            if rate < 0.0 and r2 > 0.8 and drop < 1e-3:
                successes += 1
            rates.append(rate)
        ok = successes >= 18
        _report(5, "energy decay", ok,
                f"{successes}/20 seeds with negative rate, r2>0.8 and 1e-3 drop; "
                f"median rate {statistics.median(rates):.2f}, "
                f"wall {time.time() - started:.0f}s (target 60s)")
        assert ok, f"only {successes}/20 seeds passed"


class TestCriterion6PropertySuite:
    """Compact re-assertion of the load-bearing invariants (the unit suite
    covers each in depth; this keeps the gate self-contained)."""

    def test_property_suite(self):
        rng = substream(SEED, "c6")
        checks = []

        # consensus: shift invariance, permutation invariance, convex hull
        rows = rng.standard_normal((8, 3))
        costs = rng.standard_normal(8)
        base = consensus_point(rows, costs, 7.0)
        checks.append(("cost-shift invariance", np.allclose(
            base, consensus_point(rows, costs + 123.4, 7.0), rtol=1e-12)))
        perm = rng.permutation(8)
        checks.append(("permutation invariance", np.allclose(
            base, consensus_point(rows[perm], costs[perm], 7.0), rtol=1e-12)))
        checks.append(("convex hull", bool(
            np.all(base >= rows.min(0) - 1e-12) and np.all(base <= rows.max(0) + 1e-12))))

        # beta limits
        checks.append(("beta=0 mean", np.allclose(
            consensus_point(rows, costs, 0.0), rows.mean(0), rtol=1e-12)))
        sep_costs = np.arange(8.0)
        checks.append(("beta->inf argmin", np.allclose(
            consensus_point(rows, sep_costs, 1e6), rows[0], atol=1e-6)))

        # weighted variance nonnegative
        var = weighted_variance(rows, costs, 7.0, base)
        checks.append(("variance nonneg", bool(np.all(var >= 0.0))))

        # fixed points of both steppers
        cfg = CboConfig(total_steps=1, batch_size=4, sigma1=0.0, sigma2=0.0)
        theta = np.tile(rng.standard_normal(3), (4, 1))
        pop = init_population(4, 3, substream(SEED, "c6-pop"))
        pop.theta = theta.copy()
        pop.omega = np.zeros_like(theta)
        mcbo_step(pop, np.arange(4), np.ones(4), cfg, 0, substream(SEED, "c6-m"))
        checks.append(("mcbo fixed point", np.array_equal(pop.theta, theta)))
        pop.theta = theta.copy()
        pop.omega = np.zeros_like(theta)
        adamcbo_step(pop, np.arange(4), np.ones(4), cfg, 0, substream(SEED, "c6-a"))
        checks.append(("adamcbo fixed point", np.allclose(pop.theta, theta, atol=5e-8)))

        # Euler-Maruyama vs closed form for linear drift
        from cbo_control.problems import ControlProblem, _delta_sampler
        lin = ControlProblem(
            name="lin", state_dim=1, action_dim=1, horizon=1.0, n_steps=10_000,
            diffusion_scale=0.0,
            drift=lambda t, x, a: -x,
            running_cost=lambda t, x, a: np.zeros(x.shape[:-1]),
            terminal_cost=lambda x: np.zeros(x.shape[:-1]),
            sample_x0=_delta_sampler(np.ones(1)),
        )
        terminal, _ = em_rollout(lin, lambda t, x: np.zeros(1), np.ones(1),
                                 substream(SEED, "c6-em"))
        checks.append(("EM vs exp(-1)", abs(terminal[0] - math.exp(-1.0)) < 1e-3))

        # analytic free-energy gradient vs finite differences
        spec = GinzburgLandauSpec(dim=5)
        ok_grad = True
        h = 1e-5
        for _ in range(20):
            x = rng.standard_normal(5)
            drift = gl_drift(spec, x, 0.0)
            for j in range(5):
                xp, xm = x.copy(), x.copy()
                xp[j] += h
                xm[j] -= h
                fd = (gl_potential(spec, xp) - gl_potential(spec, xm)) / (2 * h)
                denom = max(abs(fd), 1e-3)
                if abs(drift[j] + fd) / denom > 1e-6:
                    ok_grad = False
        checks.append(("gl drift vs FD gradient", ok_grad))

        # energy hand case
        pop = init_population(1, 2, substream(SEED, "c6-e"))
        pop.theta = np.array([[1.0, 0.0]])
        pop.omega = np.array([[0.0, 2.0]])
        checks.append(("energy hand value",
                       empirical_energy(pop, np.zeros(2), 4.0) == pytest.approx(1.0)))

        # bit-identical reruns
        cfg = CboConfig(total_steps=30, batch_size=25)
        quad = benchmark_objective("quadratic", 2)
        best_a, hist_a = run_optimizer(quad, cfg, 50, 2, "adamcbo", seed=7)
        best_b, hist_b = run_optimizer(quad, cfg, 50, 2, "adamcbo", seed=7)
        same = np.array_equal(best_a, best_b) and all(
            ra.batch_min_cost == rb.batch_min_cost for ra, rb in zip(hist_a, hist_b))
        checks.append(("bit-identical rerun", bool(same)))

        failed = [name for name, ok in checks if not ok]
        _report(6, "property suite", not failed,
                f"{len(checks) - len(failed)}/{len(checks)} properties hold"
                + (f"; failed: {failed}" if failed else ""))
        assert not failed, f"failed properties: {failed}"


class TestCriterion7GlConsistency:
    def test_trained_control_tracks_value_gradient(self):
        spec = GinzburgLandauSpec(dim=2, control_cost="quadratic", n_steps=20)
        problem = make_ginzburg_landau(spec)
        shape = default_policy_shape(2, 1)
        total_steps = 1500
        cfg = CboConfig(
            total_steps=total_steps, batch_size=50, lam=0.01, beta=10.0,
            gamma2=0.3, adam_beta1=0.99, adam_beta2=0.99995,
            sigma1=1.0, sigma2=math.log(300.0) / (0.01 * total_steps),
        )
        # float64: divergent rollouts under random nets overflow float32
        # and abort training; in float64 they stay finite-but-huge and the
        # cost weighting discards those agents on its own
        best, _ = _train(problem, shape, cfg, n_agents=600, n_rollouts=16,
                         seed=SEED + 7, label="ginzburg-landau", dtype=np.float64)
        out = gl_consistency_scatter(problem, shape, best, n_points=1000,
                                     seed=SEED + 70, h_fd=0.1, n_rollouts=2000,
                                     n_steps=100)
        ok = out["correlation"] > 0.9
        _report(7, "gl consistency", ok,
                f"correlation {out['correlation']:.4f} (tol > 0.9), "
                f"slope {out['slope']:.3f} over 1000 samples")
        assert ok, f"correlation {out['correlation']:.4f} not above 0.9"
