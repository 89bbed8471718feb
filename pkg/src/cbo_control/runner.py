"""Implementations behind the command-line subcommands.

Every command reads a validated :class:`~cbo_control.config.ExperimentConfig`,
derives all randomness from the experiment seed through named substreams,
and writes deterministic artifacts (CSV data, JSON checkpoint, JSON
manifest) into the output directory.  Data files never contain
timestamps, so a rerun with the same config and seed is byte-identical.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cbo import run_optimizer, write_history_csv
from .config import ExperimentConfig
from .energy import EnergyRecord, decay_fit
from .errors import ConfigError
from .nets import load_checkpoint, param_count, save_checkpoint
from .oracles import (
    gl_consistency_scatter,
    lqg_value_mc,
    policy_value_mc,
    sr_riccati_reference,
)
from .problems import (
    LQG_TERMINALS,
    SystemicRiskSpec,
    make_systemic_risk,
    make_training_objective,
    rollout_trajectories,
)
from .seeding import substream

__all__ = [
    "cmd_train",
    "cmd_eval",
    "cmd_reference",
    "cmd_table",
    "cmd_gl_consistency",
    "cmd_energy",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig,
                    outputs: list[str], results: dict) -> None:
    manifest = {
        "command": command,
        "code_version": __version__,
        "seed": cfg.seed,
        "config": cfg.resolved_dict(),
        "config_hash": cfg.config_hash(),
        "outputs": sorted(outputs),
        "results": results,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _prepare_out(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, out_dir) -> dict:
    out = _prepare_out(out_dir)
    cbo_cfg = cfg.cbo()

    if cfg.problem_kind == "benchmark":
        objective = cfg.problem_spec()
        dim = objective.dim
        theta_ref = objective.minimizer
        shape = None
    else:
        problem = cfg.problem()
        shape = cfg.network_shape()
        dim = param_count(shape)
        theta_ref = None
        objective = make_training_objective(problem, shape, cfg.train_rollouts,
                                            cfg.seed, dtype=cfg.train_dtype)

    every = max(1, cbo_cfg.total_steps // 10)

    def progress(rec):
        if rec.step % every == 0 or rec.step == cbo_cfg.total_steps - 1:
            _log(f"[train {cfg.name}] step {rec.step}/{cbo_cfg.total_steps} "
                 f"min={rec.batch_min_cost:.4g} mean={rec.batch_mean_cost:.4g} "
                 f"sigma={rec.sigma:.3g}")

    best, history = run_optimizer(objective, cbo_cfg, cfg.n_agents, dim,
                                  cfg.variant, cfg.seed, theta_ref=theta_ref,
                                  progress=progress)

    outputs = ["history.csv", "checkpoint.json"]
    write_history_csv(out / "history.csv", history)
    if shape is not None:
        save_checkpoint(out / "checkpoint.json", shape, best,
                        extra={"config_hash": cfg.config_hash(), "variant": cfg.variant})
    else:
        payload = {"kind": "vector", "params": best.tolist(),
                   "extra": {"config_hash": cfg.config_hash(), "variant": cfg.variant}}
        (out / "checkpoint.json").write_text(json.dumps(payload), encoding="utf-8")

    results = {
        "steps": len(history),
        "final_batch_min_cost": history[-1].batch_min_cost if history else None,
        "final_batch_mean_cost": history[-1].batch_mean_cost if history else None,
    }
    _write_manifest(out, "train", cfg, outputs, results)
    return results


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(cfg: ExperimentConfig, checkpoint_path, out_dir,
             n_trajectories: int = 0) -> dict:
    if cfg.problem_kind == "benchmark":
        raise ConfigError("eval needs a control problem, not a benchmark objective")
    out = _prepare_out(out_dir)
    problem = cfg.problem()
    shape, params = load_checkpoint(checkpoint_path)
    if param_count(shape) != param_count(cfg.network_shape()):
        raise ConfigError("checkpoint network does not match the configured problem")

    n_rollouts = int(cfg.evaluation("n_rollouts"))
    n_steps = cfg.evaluation("n_steps")
    time_grid = [float(t) for t in cfg.evaluation("time_grid")]
    if cfg.problem_kind == "systemic_risk":
        initial = cfg.eval_initial()
    else:
        initial = np.zeros(problem.state_dim)

    rows = []
    for k, t0 in enumerate(time_grid):
        value, err = policy_value_mc(problem, shape, params, t0, initial,
                                     n_rollouts, substream(cfg.seed, "evaluation", k),
                                     n_steps=n_steps)
        rows.append([problem.name, t0, value, err])
        _log(f"[eval {cfg.name}] t={t0:.2f} value={value:.6f} +- {err:.2g}")
    _write_csv(out / "eval.csv", ["problem", "t", "value", "std_error"], rows)
    outputs = ["eval.csv"]

    if n_trajectories > 0:
        times, states, actions = rollout_trajectories(
            problem, shape, params, n_trajectories,
            substream(cfg.seed, "evaluation", "trajectories"), n_steps=n_steps,
        )
        traj_rows = []
        for j in range(n_trajectories):
            for k in range(times.shape[0]):
                row = [j, k, float(times[k])] + [float(v) for v in states[k, j]]
                row += [float(v) for v in actions[k, j]] if k < actions.shape[0] \
                    else [""] * actions.shape[2]
                traj_rows.append(row)
        header = (["traj", "step", "t"]
                  + [f"x{i}" for i in range(problem.state_dim)]
                  + [f"a{i}" for i in range(problem.action_dim)])
        _write_csv(out / "trajectories.csv", header, traj_rows)
        outputs.append("trajectories.csv")

    results = {"values": {str(r[1]): r[2] for r in rows}}
    _write_manifest(out, "eval", cfg, outputs, results)
    return results


# ---------------------------------------------------------------------------
# reference
# ---------------------------------------------------------------------------

def cmd_reference(cfg: ExperimentConfig, out_dir) -> dict:
    out = _prepare_out(out_dir)
    rows = []
    if cfg.problem_kind == "lqg":
        spec = cfg.problem_spec()
        g = LQG_TERMINALS[spec.terminal]
        samples = int(cfg.evaluation("reference_samples"))
        time_grid = [float(t) for t in cfg.evaluation("time_grid")]
        for d in cfg.evaluation("dims"):
            x = np.zeros(int(d))
            for k, t in enumerate(time_grid):
                value, err = lqg_value_mc(g, t, x, spec.horizon, samples,
                                          substream(cfg.seed, "reference", int(d), k))
                rows.append(["lqg", t, int(d), spec.terminal, value, err])
    elif cfg.problem_kind == "systemic_risk":
        spec = cfg.problem_spec()
        initial = cfg.eval_initial()
        time_grid = [float(t) for t in cfg.evaluation("time_grid")]
        for t in time_grid:
            rows.append(["systemic_risk", t, "meanfield", spec.initial.kind,
                         sr_riccati_reference(spec, t, initial), 0.0])
            for n in cfg.evaluation("n_values"):
                rows.append(["systemic_risk", t, int(n), spec.initial.kind,
                             sr_riccati_reference(spec, t, initial, n_banks=int(n)), 0.0])
    else:
        raise ConfigError(
            f"no reference oracle for problem kind {cfg.problem_kind!r}; "
            "the Ginzburg-Landau model is checked via gl-consistency"
        )
    _write_csv(out / "reference.csv",
               ["problem", "t", "dim_or_n", "variant", "value", "std_error"], rows)
    _write_manifest(out, "reference", cfg, ["reference.csv"], {"rows": len(rows)})
    return {"rows": rows}


# ---------------------------------------------------------------------------
# table (systemic risk across population sizes)
# ---------------------------------------------------------------------------

def cmd_table(cfg: ExperimentConfig, checkpoint_path, out_dir) -> dict:
    if cfg.problem_kind != "systemic_risk":
        raise ConfigError("table requires a systemic_risk config")
    out = _prepare_out(out_dir)
    base_spec: SystemicRiskSpec = cfg.problem_spec()
    shape, params = load_checkpoint(checkpoint_path)
    if param_count(shape) != param_count(cfg.network_shape()):
        raise ConfigError("checkpoint network does not match the configured problem")

    initial = cfg.eval_initial()
    n_values = [int(n) for n in cfg.evaluation("n_values")]
    time_grid = [float(t) for t in cfg.evaluation("time_grid")]
    n_rollouts = int(cfg.evaluation("n_rollouts"))
    n_steps = cfg.evaluation("n_steps")

    columns = {}
    for n in n_values:
        spec_n = SystemicRiskSpec(
            n_banks=n, kappa=base_spec.kappa, eta=base_spec.eta, c=base_spec.c,
            q=base_spec.q, sigma=base_spec.sigma, horizon=base_spec.horizon,
            n_steps=base_spec.n_steps, initial=initial,
        )
        problem_n = make_systemic_risk(spec_n)
        vals = []
        for k, t0 in enumerate(time_grid):
            value, _ = policy_value_mc(problem_n, shape, params, t0, initial,
                                       n_rollouts, substream(cfg.seed, "table", n, k),
                                       n_steps=n_steps)
            vals.append(value)
        columns[n] = vals
        _log(f"[table {cfg.name}] n={n}: u(0)={vals[0]:.5f} u({time_grid[-1]})={vals[-1]:.5f}")

    exact = [sr_riccati_reference(base_spec, t, initial) for t in time_grid]
    header = ["t"] + [f"n={n}" for n in n_values] + ["exact"]
    rows = []
    for k, t0 in enumerate(time_grid):
        rows.append([t0] + [columns[n][k] for n in n_values] + [exact[k]])
    _write_csv(out / "table.csv", header, rows)
    _write_manifest(out, "table", cfg, ["table.csv"],
                    {"n_values": n_values, "time_grid": time_grid})
    return {"columns": columns, "exact": exact, "time_grid": time_grid}


# ---------------------------------------------------------------------------
# gl-consistency
# ---------------------------------------------------------------------------

def cmd_gl_consistency(cfg: ExperimentConfig, checkpoint_path, out_dir) -> dict:
    if cfg.problem_kind != "ginzburg_landau":
        raise ConfigError("gl-consistency requires a ginzburg_landau config")
    out = _prepare_out(out_dir)
    problem = cfg.problem()
    shape, params = load_checkpoint(checkpoint_path)
    if param_count(shape) != param_count(cfg.network_shape()):
        raise ConfigError("checkpoint network does not match the configured problem")

    scatter = gl_consistency_scatter(
        problem, shape, params,
        n_points=int(cfg.evaluation("n_points")),
        seed=cfg.seed,
        h_fd=float(cfg.evaluation("h_fd")),
        n_rollouts=int(cfg.evaluation("fd_rollouts")),
        n_steps=cfg.evaluation("n_steps"),
    )
    rows = []
    for i in range(scatter["alpha"].shape[0]):
        rows.append([float(scatter["t"][i])]
                    + [float(v) for v in scatter["x"][i]]
                    + [float(scatter["alpha"][i]), float(scatter["target"][i])])
    header = ["t"] + [f"x{i}" for i in range(problem.state_dim)] + ["alpha", "target"]
    _write_csv(out / "consistency.csv", header, rows)
    results = {"slope": scatter["slope"], "intercept": scatter["intercept"],
               "correlation": scatter["correlation"]}
    _log(f"[gl-consistency {cfg.name}] slope={results['slope']:.4f} "
         f"corr={results['correlation']:.4f}")
    _write_manifest(out, "gl-consistency", cfg, ["consistency.csv"], results)
    return results


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

def cmd_energy(cfg: ExperimentConfig, out_dir) -> dict:
    if cfg.problem_kind != "benchmark":
        raise ConfigError("energy runs need a benchmark problem with a known minimizer")
    out = _prepare_out(out_dir)
    objective = cfg.problem_spec()
    cbo_cfg = cfg.cbo()
    _, history = run_optimizer(objective, cbo_cfg, cfg.n_agents, objective.dim,
                               cfg.variant, cfg.seed, theta_ref=objective.minimizer)
    write_history_csv(out / "history.csv", history)
    records = [EnergyRecord(step=r.step, time=r.step * cbo_cfg.lam,
                            energy=r.energy, mass=cbo_cfg.mass) for r in history]
    window = tuple(cfg.evaluation_table.get("fit_window", (0.2, 0.8)))
    rate, r_squared = decay_fit(records, window=window)
    lambda_thm = max(cbo_cfg.mass, cbo_cfg.gamma1)
    report = {
        "rate": rate,
        "r_squared": r_squared,
        "lambda_thm": lambda_thm,              # max(mass, gamma1); not the timestep
        "gamma_min": min(cbo_cfg.gamma1, cbo_cfg.gamma2),
        "tau_implied": 1.0 + rate / lambda_thm,
        "initial_energy": history[0].energy,
        "final_energy": history[-1].energy,
    }
    (out / "decay_fit.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _log(f"[energy {cfg.name}] rate={rate:.4f} r2={r_squared:.4f} "
         f"final/initial={report['final_energy'] / report['initial_energy']:.3g}")
    _write_manifest(out, "energy", cfg, ["history.csv", "decay_fit.json"], report)
    return report
