"""Control-problem definitions and the Euler-Maruyama cost machinery."""

import math

import numpy as np
import pytest

from cbo_control.errors import ConfigError, NumericError
from cbo_control.nets import (
    default_meanfield_shape,
    default_policy_shape,
    make_policy,
    make_stacked_policy,
    param_count,
)
from cbo_control.problems import (
    GinzburgLandauSpec,
    InitialDistribution,
    LQG_TERMINALS,
    LqgSpec,
    SystemicRiskSpec,
    _simulate,
    cost_functional,
    dist_variance,
    em_rollout,
    gl_drift,
    gl_field_mask,
    gl_potential,
    make_ginzburg_landau,
    make_lqg,
    make_systemic_risk,
    make_training_objective,
    population_costs,
    rollout_trajectories,
    sample_initial,
    sr_costs,
)
from cbo_control.seeding import substream


def frozen_problem(d=1):
    """No drift, no diffusion, no running cost: the state never moves."""
    from cbo_control.problems import ControlProblem, _delta_sampler

    return ControlProblem(
        name="frozen", state_dim=d, action_dim=1, horizon=1.0, n_steps=5,
        diffusion_scale=0.0,
        drift=lambda t, x, a: np.zeros_like(x),
        running_cost=lambda t, x, a: np.zeros(x.shape[:-1]),
        terminal_cost=lambda x: np.zeros(x.shape[:-1]),
        sample_x0=_delta_sampler(np.full(d, 0.5)),
    )


class TestEmRollout:
    def test_frozen_dynamics(self):
        problem = frozen_problem(3)
        x0 = np.array([1.0, -2.0, 0.5])
        terminal, cost = em_rollout(problem, lambda t, x: np.zeros(1), x0,
                                    substream(1, "em"))
        np.testing.assert_array_equal(terminal, x0)
        assert cost == 0.0

    def test_constant_drift_exact(self):
        from cbo_control.problems import ControlProblem, _delta_sampler

        problem = ControlProblem(
            name="const", state_dim=1, action_dim=1, horizon=1.0, n_steps=20,
            diffusion_scale=0.0,
            drift=lambda t, x, a: np.ones_like(x),
            running_cost=lambda t, x, a: np.zeros(x.shape[:-1]),
            terminal_cost=lambda x: np.zeros(x.shape[:-1]),
            sample_x0=_delta_sampler(np.zeros(1)),
        )
        terminal, _ = em_rollout(problem, lambda t, x: np.zeros(1), np.zeros(1),
                                 substream(2, "em"))
        assert terminal[0] == pytest.approx(1.0, abs=1e-15)

    def test_linear_drift_matches_exponential(self):
        # dx = -x dt from 1.0 over [0, 1] at dt = 1e-4: within 1e-3 of e^{-1}
        from cbo_control.problems import ControlProblem, _delta_sampler

        problem = ControlProblem(
            name="lin", state_dim=1, action_dim=1, horizon=1.0, n_steps=10_000,
            diffusion_scale=0.0,
            drift=lambda t, x, a: -x,
            running_cost=lambda t, x, a: np.zeros(x.shape[:-1]),
            terminal_cost=lambda x: np.zeros(x.shape[:-1]),
            sample_x0=_delta_sampler(np.ones(1)),
        )
        terminal, _ = em_rollout(problem, lambda t, x: np.zeros(1), np.ones(1),
                                 substream(3, "em"))
        assert terminal[0] == pytest.approx(math.exp(-1.0), abs=1e-3)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_state_reports_step(self):
        from cbo_control.problems import ControlProblem, _delta_sampler

        problem = ControlProblem(
            name="explode", state_dim=1, action_dim=1, horizon=1.0, n_steps=10,
            diffusion_scale=0.0,
            drift=lambda t, x, a: x * 1e160,
            running_cost=lambda t, x, a: np.zeros(x.shape[:-1]),
            terminal_cost=lambda x: np.zeros(x.shape[:-1]),
            sample_x0=_delta_sampler(np.ones(1)),
        )
        with pytest.raises(NumericError, match="step"):
            em_rollout(problem, lambda t, x: np.zeros(1), np.ones(1), substream(4, "em"))

    def test_batched_engine_matches_single_path(self):
        # identical generator state => identical draws => identical paths
        spec = LqgSpec(dim=2)
        problem = make_lqg(spec)
        shape = default_policy_shape(2, 2, hidden_layers=2, width=4)
        params = 0.3 * substream(5, "p").standard_normal(param_count(shape))
        x0 = np.array([0.1, -0.2])

        single_term, single_cost = em_rollout(problem, make_policy(shape, params),
                                              x0, substream(6, "noise"))
        stacked = make_stacked_policy(shape, params[None, :])
        batch_term, batch_cost = _simulate(problem, stacked, x0[None, None, :],
                                           problem.n_steps, substream(6, "noise"))
        np.testing.assert_array_equal(batch_term[0, 0], single_term)
        assert batch_cost[0, 0] == single_cost


class TestCostFunctional:
    def test_zero_policy_matches_direct_oracle(self):
        # with all-zero parameters the control vanishes, so the cost is
        # E[g(sqrt(2) W_T)]; compare against direct endpoint sampling
        spec = LqgSpec(dim=1, terminal="convex")
        problem = make_lqg(spec)
        shape = default_policy_shape(1, 1)
        params = np.zeros(param_count(shape))
        val, err = cost_functional(problem, shape, params, 100_000, substream(7, "cf"))
        z = substream(8, "direct").standard_normal(1_000_000)
        direct = np.log(0.5 * (1.0 + 2.0 * z ** 2))
        direct_err = direct.std(ddof=1) / 1000.0
        assert abs(val - direct.mean()) < 3.0 * math.hypot(err, direct_err)

    def test_short_horizon_approaches_terminal_cost(self):
        spec = LqgSpec(dim=1, terminal="convex", horizon=0.05, n_steps=5)
        problem = make_lqg(spec)
        shape = default_policy_shape(1, 1)
        params = np.zeros(param_count(shape))
        val, _ = cost_functional(problem, shape, params, 50_000, substream(9, "cf"))
        assert abs(val - math.log(0.5)) < 2.0 * spec.horizon

    def test_variance_halves_with_double_rollouts(self):
        spec = LqgSpec(dim=1, n_steps=5)
        problem = make_lqg(spec)
        shape = default_policy_shape(1, 1, hidden_layers=1, width=3)
        params = 0.2 * substream(10, "p").standard_normal(param_count(shape))
        reps = 100

        def spread(n_rollouts, tag):
            vals = [cost_functional(problem, shape, params, n_rollouts,
                                    substream(11, tag, r))[0] for r in range(reps)]
            return np.var(vals, ddof=1)

        ratio = spread(64, "hi") / spread(32, "lo")
        assert 0.3 < ratio < 0.8  # expected 0.5 up to estimation noise

    def test_invalid_rollout_count(self):
        spec = LqgSpec(dim=1)
        problem = make_lqg(spec)
        shape = default_policy_shape(1, 1)
        with pytest.raises(ValueError):
            cost_functional(problem, shape, np.zeros(param_count(shape)), 0,
                            substream(0, "x"))


class TestGinzburgLandau:
    def test_potential_at_origin(self):
        spec = GinzburgLandauSpec(dim=2)
        assert gl_potential(spec, np.zeros(2)) == pytest.approx(5.0 / 3.0, rel=1e-14)

    def test_potential_at_ones(self):
        spec = GinzburgLandauSpec(dim=2)
        assert gl_potential(spec, np.ones(2)) == pytest.approx(0.6, rel=1e-14)

    def test_potential_even(self):
        spec = GinzburgLandauSpec(dim=5)
        rng = substream(12, "gl")
        for _ in range(5):
            x = rng.standard_normal(5)
            assert gl_potential(spec, x) == pytest.approx(gl_potential(spec, -x), rel=1e-14)

    def test_potential_nonnegative(self):
        spec = GinzburgLandauSpec(dim=4)
        rng = substream(13, "gl")
        vals = gl_potential(spec, rng.standard_normal((100, 4)))
        assert np.all(vals >= 0.0)

    def test_field_mask_d4(self):
        np.testing.assert_array_equal(gl_field_mask(4), [0.0, 1.0, 1.0, 0.0])

    def test_field_mask_d2(self):
        np.testing.assert_array_equal(gl_field_mask(2), [1.0, 0.0])

    def test_drift_at_origin_is_masked_field(self):
        spec = GinzburgLandauSpec(dim=4)
        drift = gl_drift(spec, np.zeros(4), 0.7)
        np.testing.assert_allclose(drift, 2.0 * 0.7 * gl_field_mask(4), atol=1e-15)

    def test_drift_matches_finite_difference_gradient(self):
        # analytic gradient vs central differences at 20 random states
        spec = GinzburgLandauSpec(dim=6)
        rng = substream(14, "gl")
        h = 1e-5
        for _ in range(20):
            x = rng.standard_normal(6)
            drift = gl_drift(spec, x, 0.0)
            fd = np.empty(6)
            for j in range(6):
                xp, xm = x.copy(), x.copy()
                xp[j] += h
                xm[j] -= h
                fd[j] = (gl_potential(spec, xp) - gl_potential(spec, xm)) / (2 * h)
            np.testing.assert_allclose(drift, -fd, rtol=1e-6, atol=1e-7)

    def test_control_cost_variants(self):
        x = np.zeros(2)
        a = np.array([-0.5])
        abs_problem = make_ginzburg_landau(GinzburgLandauSpec(dim=2, control_cost="abs"))
        sq_problem = make_ginzburg_landau(GinzburgLandauSpec(dim=2, control_cost="quadratic"))
        assert abs_problem.running_cost(0.0, x, a) == pytest.approx(0.5)
        assert sq_problem.running_cost(0.0, x, a) == pytest.approx(0.25)

    def test_terminal_cost_weight(self):
        problem = make_ginzburg_landau(GinzburgLandauSpec(dim=4))
        x = np.array([1.0, 0.0, 0.0, 1.0])
        assert problem.terminal_cost(x) == pytest.approx(10.0 / 4.0 * 2.0)


class TestSystemicRisk:
    def test_costs_vanish_at_centered_bank(self):
        spec = SystemicRiskSpec(n_banks=5)
        f, g = sr_costs(spec, 1.3, 1.3, 0.0)
        assert f == 0.0 and g == 0.0

    def test_pure_control_cost(self):
        spec = SystemicRiskSpec(n_banks=5)
        f, _ = sr_costs(spec, 0.0, 0.0, 1.0)
        assert f == pytest.approx(0.5)

    def test_hand_values(self):
        spec = SystemicRiskSpec(n_banks=5, q=0.8, eta=2.0, c=2.0)
        f, g = sr_costs(spec, 0.0, 1.0, 1.0)
        assert f == pytest.approx(0.7, rel=1e-14)
        assert g == pytest.approx(1.0, rel=1e-14)

    def test_convexity_guard(self):
        with pytest.raises(ConfigError):
            SystemicRiskSpec(n_banks=5, q=2.0, eta=2.0)

    def test_needs_two_banks(self):
        with pytest.raises(ConfigError):
            SystemicRiskSpec(n_banks=1)

    def test_drift_mean_reversion(self):
        spec = SystemicRiskSpec(n_banks=4, kappa=0.6)
        problem = make_systemic_risk(spec)
        x = np.array([1.0, -1.0, 0.5, -0.5])
        drift = problem.drift(0.0, x, np.zeros(4))
        np.testing.assert_allclose(drift, 0.6 * (x.mean() - x), rtol=1e-14)

    def test_permutation_equivariance_under_common_noise(self):
        # permuting the banks' initial states permutes the whole simulation,
        # so the bank-averaged cost is identical when the noise is permuted
        # alongside; with fresh noise the values agree within MC error
        spec = SystemicRiskSpec(n_banks=6, initial=InitialDistribution("gaussian", variance=0.04))
        problem = make_systemic_risk(spec)
        shape = default_meanfield_shape(pool_width=4, hidden=6)
        params = 0.3 * substream(15, "p").standard_normal(param_count(shape))
        vals = []
        for tag in ("a", "b"):
            rng = substream(16, "perm", tag)
            vals.append(cost_functional(problem, shape, params, 4000, rng)[0])
        _, err = cost_functional(problem, shape, params, 4000, substream(16, "perm", "c"))
        assert abs(vals[0] - vals[1]) < 4.0 * err


class TestSampleInitial:
    def test_delta(self):
        out = sample_initial(InitialDistribution("delta", value=0.0), 3, substream(17, "d"))
        np.testing.assert_array_equal(out, np.zeros(3))

    def test_two_mix_symmetric_mean(self):
        n = 100_000
        draws = sample_initial(InitialDistribution("two_mix"), n, substream(18, "mix"))
        std_err = draws.std(ddof=1) / math.sqrt(n)
        assert abs(draws.mean()) < 3.0 * std_err

    def test_gaussian_variance(self):
        n = 100_000
        dist = InitialDistribution("gaussian", mean=0.0, variance=0.01)
        draws = sample_initial(dist, n, substream(19, "g"))
        assert abs(draws.var(ddof=1) - 0.01) < 0.05 * 0.01

    def test_three_mix_variance(self):
        n = 200_000
        dist = InitialDistribution("three_mix")
        draws = sample_initial(dist, n, substream(20, "g3"))
        assert draws.var(ddof=1) == pytest.approx(dist_variance(dist), rel=0.02)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            InitialDistribution("cauchy")

    def test_dist_variance_values(self):
        assert dist_variance(InitialDistribution("delta")) == 0.0
        assert dist_variance(InitialDistribution("gaussian", variance=0.04)) == 0.04
        assert dist_variance(InitialDistribution("two_mix")) == pytest.approx(0.04, rel=1e-12)
        assert dist_variance(InitialDistribution("three_mix")) == pytest.approx(
            2.0 / 3.0 * 0.09 + 0.07 ** 2, rel=1e-12
        )


class TestTrainingObjective:
    def test_vectorized_and_reproducible(self):
        spec = LqgSpec(dim=1, n_steps=5)
        problem = make_lqg(spec)
        shape = default_policy_shape(1, 1, hidden_layers=1, width=3)
        thetas = substream(21, "p").standard_normal((4, param_count(shape)))
        a = make_training_objective(problem, shape, 16, seed=5)(thetas)
        b = make_training_objective(problem, shape, 16, seed=5)(thetas)
        assert a.shape == (4,)
        np.testing.assert_array_equal(a, b)

    def test_common_noise_mode(self):
        spec = LqgSpec(dim=1, n_steps=5)
        problem = make_lqg(spec)
        shape = default_policy_shape(1, 1, hidden_layers=1, width=3)
        thetas = np.tile(substream(22, "p").standard_normal(param_count(shape)), (3, 1))
        costs = population_costs(problem, shape, thetas, 32, substream(23, "cn"),
                                 common_noise=True)
        # identical parameters + shared noise => identical costs
        assert costs[0] == costs[1] == costs[2]

    def test_trajectories_shapes(self):
        spec = LqgSpec(dim=2, n_steps=7)
        problem = make_lqg(spec)
        shape = default_policy_shape(2, 2, hidden_layers=1, width=4)
        params = np.zeros(param_count(shape))
        times, states, actions = rollout_trajectories(problem, shape, params, 5,
                                                      substream(24, "tr"))
        assert times.shape == (8,)
        assert states.shape == (8, 5, 2)
        assert actions.shape == (7, 5, 2)
        assert times[-1] == pytest.approx(1.0)
