"""Second exploration round: moderate beta to keep batch weights spread out."""

import math
import time

import numpy as np

from cbo_control.cbo import CboConfig, run_optimizer
from cbo_control.nets import default_policy_shape, param_count
from cbo_control.oracles import policy_value_mc
from cbo_control.problems import LqgSpec, make_lqg, make_training_objective
from cbo_control.seeding import substream

spec = LqgSpec(dim=1, terminal="convex")
problem = make_lqg(spec)
shape = default_policy_shape(1, 1)
D = param_count(shape)
u_ref = -0.087245


def trial(tag, variant, N, R, steps, seed=21, **cbo_kw):
    t0 = time.time()
    obj = make_training_objective(problem, shape, R, seed=seed)
    cfg = CboConfig(total_steps=steps, batch_size=50, **cbo_kw)
    best, hist = run_optimizer(obj, cfg, N, D, variant, seed=seed)
    v, e = policy_value_mc(problem, shape, best, 0.0, np.zeros(1), 120_000,
                           substream(99, "pv"), n_steps=200)
    rel = abs(v - u_ref) / abs(u_ref) * 100
    print(f"{tag}: {time.time()-t0:.0f}s J={v:.5f}+-{e:.1g} rel={rel:.1f}% "
          f"mean={hist[-1].batch_mean_cost:.3g}", flush=True)


steps = 800
dec100 = math.log(100.0) / (0.01 * steps)
for beta in (5.0, 10.0, 20.0):
    trial(f"adam b={beta}", "adamcbo", 400, 64, steps,
          adam_beta2=0.9999, sigma2=dec100, beta=beta)
trial("adam b=10 g2=3", "adamcbo", 400, 64, steps,
      adam_beta2=0.9999, sigma2=dec100, beta=10.0, gamma2=3.0)
trial("adam b=10 b2=.999", "adamcbo", 400, 64, steps,
      sigma2=dec100, beta=10.0)
trial("mcbo b=10", "mcbo", 400, 64, steps, sigma2=dec100, beta=10.0)
trial("mcbo b=10 s1=.5", "mcbo", 400, 64, steps, sigma2=dec100, beta=10.0, sigma1=0.5)
