"""Third round: push the stable beta=20 regime toward the 5% band."""

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
    marks = []

    def progress(rec):
        if rec.step % (steps // 5) == 0:
            marks.append(f"{rec.batch_mean_cost:.3f}")

    best, hist = run_optimizer(obj, cfg, N, D, variant, seed=seed, progress=progress)
    v, e = policy_value_mc(problem, shape, best, 0.0, np.zeros(1), 120_000,
                           substream(99, "pv"), n_steps=200)
    rel = abs(v - u_ref) / abs(u_ref) * 100
    print(f"{tag}: {time.time()-t0:.0f}s J={v:.5f}+-{e:.1g} rel={rel:.1f}% "
          f"meantraj={'/'.join(marks)}", flush=True)


def dec(f, steps, lam=0.01):
    return math.log(f) / (lam * steps)


trial("H adam b20 N400 2000st", "adamcbo", 400, 64, 2000,
      adam_beta2=0.9999, sigma2=dec(100, 2000), beta=20.0)
trial("I adam b30 N400 1500st", "adamcbo", 400, 64, 1500,
      adam_beta2=0.9999, sigma2=dec(100, 1500), beta=30.0)
trial("J adam b20 N1000 1200st", "adamcbo", 1000, 64, 1200,
      adam_beta2=0.9999, sigma2=dec(100, 1200), beta=20.0)
trial("K adam b40 N1000 1200st", "adamcbo", 1000, 64, 1200,
      adam_beta2=0.9999, sigma2=dec(100, 1200), beta=40.0)
trial("L adam b20 N400 dec1000", "adamcbo", 400, 64, 1500,
      adam_beta2=0.9999, sigma2=dec(1000, 1500), beta=20.0)
trial("M mcbo b30 N1000 1500st", "mcbo", 1000, 64, 1500,
      sigma2=dec(100, 1500), beta=30.0)
