"""Feasibility scans for the Ginzburg-Landau and systemic-risk trainings."""

import math
import time

import numpy as np

from cbo_control.cbo import CboConfig, run_optimizer
from cbo_control.nets import (
    default_meanfield_shape,
    default_policy_shape,
    param_count,
)
from cbo_control.oracles import (
    gl_consistency_scatter,
    policy_value_mc,
    sr_riccati_reference,
)
from cbo_control.problems import (
    GinzburgLandauSpec,
    InitialDistribution,
    SystemicRiskSpec,
    make_ginzburg_landau,
    make_systemic_risk,
    make_training_objective,
)
from cbo_control.seeding import substream


def dec(f, steps, lam=0.01):
    return math.log(f) / (lam * steps)


def sr_trial(tag, beta, steps=600, n_train=16, N=300, R=8, seed=31, lam=0.01,
             sigma_decay=100.0, variant="adamcbo"):
    t0 = time.time()
    init = InitialDistribution("gaussian", variance=0.01)
    spec = SystemicRiskSpec(n_banks=n_train, q=0.8, sigma=0.2, initial=init)
    problem = make_systemic_risk(spec)
    shape = default_meanfield_shape()
    D = param_count(shape)
    obj = make_training_objective(problem, shape, R, seed=seed)
    cfg = CboConfig(total_steps=steps, batch_size=30, beta=beta, lam=lam,
                    adam_beta2=0.9999, sigma2=dec(sigma_decay, steps, lam))
    best, hist = run_optimizer(obj, cfg, N, D, variant, seed=seed)
    # evaluate at n=100 against the finite-n reference on the time grid
    spec100 = SystemicRiskSpec(n_banks=100, q=0.8, sigma=0.2, initial=init)
    p100 = make_systemic_risk(spec100)
    rels = []
    for k, t in enumerate(np.arange(0.0, 1.0, 0.1)):
        v, e = policy_value_mc(p100, shape, best, float(t), init, 1500,
                               substream(77, "ev", k), n_steps=100)
        ref = sr_riccati_reference(spec100, float(t), init, n_banks=100)
        rels.append(abs(v - ref) / ref * 100)
    print(f"{tag}: {time.time()-t0:.0f}s rel%={['%.1f' % r for r in rels]} "
          f"mean={hist[-1].batch_mean_cost:.4f}", flush=True)


def gl_trial(tag, beta, steps=800, N=400, R=16, seed=41, lam=0.01, variant="adamcbo"):
    t0 = time.time()
    spec = GinzburgLandauSpec(dim=2, control_cost="quadratic")
    problem = make_ginzburg_landau(spec)
    shape = default_policy_shape(2, 1)
    D = param_count(shape)
    obj = make_training_objective(problem, shape, R, seed=seed)
    cfg = CboConfig(total_steps=steps, batch_size=50, beta=beta,
                    adam_beta2=0.9999, sigma2=dec(100, steps, lam), lam=lam)
    best, hist = run_optimizer(obj, cfg, N, D, variant, seed=seed)
    v, e = policy_value_mc(problem, shape, best, 0.0, np.zeros(2), 3000,
                           substream(78, "ev"), n_steps=100)
    out = gl_consistency_scatter(problem, shape, best, n_points=300, seed=79,
                                 h_fd=0.1, n_rollouts=800, n_steps=100)
    print(f"{tag}: {time.time()-t0:.0f}s J={v:.3f}+-{e:.2g} "
          f"slope={out['slope']:.3f} corr={out['correlation']:.3f} "
          f"mean={hist[-1].batch_mean_cost:.3f}", flush=True)


for beta in (20.0, 50.0, 100.0):
    sr_trial(f"SR adam b={beta}", beta)
for beta in (1.0, 3.0, 10.0):
    gl_trial(f"GL adam b={beta}", beta)
