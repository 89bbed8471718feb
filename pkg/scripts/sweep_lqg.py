"""Hyperparameter exploration for the d=1 linear-quadratic benchmark.

Dev tool, not part of the package: trains short configurations and prints
the precise policy value against the endpoint-sampled reference.
"""

import math
import sys
import time

import numpy as np

from cbo_control.cbo import CboConfig, run_optimizer
from cbo_control.nets import default_policy_shape, param_count
from cbo_control.oracles import lqg_value_mc, policy_value_mc
from cbo_control.problems import LQG_TERMINALS, LqgSpec, make_lqg, make_training_objective
from cbo_control.seeding import substream

spec = LqgSpec(dim=1, terminal="convex")
problem = make_lqg(spec)
shape = default_policy_shape(1, 1)
D = param_count(shape)
g = LQG_TERMINALS["convex"]
u_ref, _ = lqg_value_mc(g, 0.0, np.zeros(1), 1.0, 4_000_000, substream(99, "ref"))
print(f"reference: {u_ref:.6f}", flush=True)


def trial(tag, variant, N, R, steps, seed=21, **cbo_kw):
    t0 = time.time()
    obj = make_training_objective(problem, shape, R, seed=seed)
    cfg = CboConfig(total_steps=steps, batch_size=50, **cbo_kw)
    best, hist = run_optimizer(obj, cfg, N, D, variant, seed=seed)
    v, e = policy_value_mc(problem, shape, best, 0.0, np.zeros(1), 120_000,
                           substream(99, "pv"), n_steps=200)
    rel = abs(v - u_ref) / abs(u_ref) * 100
    print(f"{tag}: {time.time()-t0:.0f}s J={v:.5f}+-{e:.1g} rel={rel:.1f}% "
          f"mean={hist[-1].batch_mean_cost:.3g} min={hist[-1].batch_min_cost:.3g}",
          flush=True)


decay100 = math.log(100.0) / (0.01 * 1500)
decay30 = math.log(30.0) / (0.01 * 1500)

trial("A adam b2=.9999 dec100 b50", "adamcbo", 500, 64, 1500,
      adam_beta2=0.9999, sigma2=decay100, beta=50.0)
trial("B adam b2=.9999 dec1000 b50", "adamcbo", 500, 64, 1500,
      adam_beta2=0.9999, beta=50.0)
trial("C adam b2=.999 dec100 b50", "adamcbo", 500, 64, 1500,
      sigma2=decay100, beta=50.0)
trial("D adam b2=.9999 dec100 b200", "adamcbo", 500, 64, 1500,
      adam_beta2=0.9999, sigma2=decay100, beta=200.0)
trial("E mcbo dec100 b200 g2", "mcbo", 500, 64, 1500,
      sigma2=decay100, beta=200.0, gamma1=2.0)
trial("F adam b2=.9999 dec30 b50 lam.02", "adamcbo", 500, 64, 1500,
      adam_beta2=0.9999, sigma2=math.log(30.0) / (0.02 * 1500), beta=50.0, lam=0.02)
trial("G adam b2=.9999 dec30 b100", "adamcbo", 500, 64, 1500,
      adam_beta2=0.9999, sigma2=decay30, beta=100.0)
