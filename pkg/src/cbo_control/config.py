"""Experiment configuration: TOML (or JSON mirror) in, validated objects out.

A config carries everything a command needs to be reproducible: problem
definition, network shape, optimizer hyperparameters, training and
evaluation budgets, and the mandatory seed (wall-clock seeding is
deliberately impossible).  Physical constants that the model definition
leaves open must be stated explicitly; in particular the systemic-risk
``q`` and ``sigma`` have no silent defaults here.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .cbo import CboConfig
from .energy import benchmark_objective
from .errors import ConfigError
from .nets import default_meanfield_shape, default_policy_shape
from .problems import (
    GinzburgLandauSpec,
    InitialDistribution,
    LqgSpec,
    SystemicRiskSpec,
    make_ginzburg_landau,
    make_lqg,
    make_systemic_risk,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ExperimentConfig", "load_config", "config_from_dict"]

PROBLEM_KINDS = ("lqg", "ginzburg_landau", "systemic_risk", "benchmark")

_EVAL_DEFAULTS = {
    "n_rollouts": 5000,
    "n_steps": None,
    "time_grid": [round(0.1 * k, 1) for k in range(10)],
    "n_values": [50, 100, 200, 400, 800],
    "initial": {"kind": "gaussian", "mean": 0.0, "variance": 0.01},
    "n_points": 1000,
    "h_fd": 0.05,
    "fd_rollouts": 400,
    "dims": [1, 2, 4, 8, 16],
    "reference_samples": 1_000_000,
}


def _require(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigError(f"missing required key '{key}' in [{section}]")
    return table[key]


def _initial_from_dict(data: dict) -> InitialDistribution:
    if not isinstance(data, dict) or "kind" not in data:
        raise ConfigError(f"initial distribution must be a table with a 'kind', got {data!r}")
    kind = data["kind"]
    return InitialDistribution(
        kind=kind,
        value=float(data.get("value", 0.0)),
        mean=float(data.get("mean", 0.0)),
        variance=float(data.get("variance", 0.01)),
    )


@dataclass
class ExperimentConfig:
    """Validated experiment description plus the raw resolved dictionary."""

    name: str
    seed: int
    variant: str
    problem_kind: str
    problem_table: dict
    network_table: dict
    cbo_table: dict
    training_table: dict
    evaluation_table: dict

    # ----- builders -------------------------------------------------------

    def problem_spec(self):
        t = self.problem_table
        kind = self.problem_kind
        if kind == "lqg":
            return LqgSpec(
                dim=int(_require(t, "dim", "problem")),
                terminal=t.get("terminal", "convex"),
                horizon=float(t.get("horizon", 1.0)),
                n_steps=int(t.get("n_steps", 20)),
            )
        if kind == "ginzburg_landau":
            return GinzburgLandauSpec(
                dim=int(_require(t, "dim", "problem")),
                coupling=float(t.get("coupling", 0.2)),
                quartic=float(t.get("quartic", 10.0)),
                horizon=float(t.get("horizon", 1.0)),
                n_steps=int(t.get("n_steps", 20)),
                control_cost=t.get("control_cost", "abs"),
                x0=float(t.get("x0", 0.0)),
            )
        if kind == "systemic_risk":
            if "q" not in t or "sigma" not in t:
                raise ConfigError(
                    "systemic_risk needs explicit 'q' and 'sigma' in [problem]: the model "
                    "definition leaves both open, so no silent default is applied"
                )
            return SystemicRiskSpec(
                n_banks=int(_require(t, "n_banks", "problem")),
                kappa=float(t.get("kappa", 0.6)),
                eta=float(t.get("eta", 2.0)),
                c=float(t.get("c", 2.0)),
                q=float(t["q"]),
                sigma=float(t["sigma"]),
                horizon=float(t.get("horizon", 1.0)),
                n_steps=int(t.get("n_steps", 20)),
                initial=_initial_from_dict(
                    t.get("initial", {"kind": "delta", "value": 0.0})
                ),
            )
        # benchmark
        name = _require(t, "objective", "problem")
        dim = int(_require(t, "dim", "problem"))
        return benchmark_objective(name, dim, shift=float(t.get("shift", 1.0)))

    def problem(self):
        if self.problem_kind == "benchmark":
            raise ConfigError("benchmark configs have no control problem; use the objective")
        spec = self.problem_spec()
        if self.problem_kind == "lqg":
            return make_lqg(spec)
        if self.problem_kind == "ginzburg_landau":
            return make_ginzburg_landau(spec)
        return make_systemic_risk(spec)

    def network_shape(self):
        t = self.network_table
        if self.problem_kind == "benchmark":
            raise ConfigError("benchmark configs optimize raw vectors, not networks")
        activation = t.get("activation", "tanh")
        if self.problem_kind == "systemic_risk":
            return default_meanfield_shape(
                pool_width=int(t.get("pool_width", 8)),
                hidden=int(t.get("hidden", 16)),
                activation=activation,
            )
        spec = self.problem_spec()
        action_dim = 1 if self.problem_kind == "ginzburg_landau" else spec.dim
        return default_policy_shape(
            spec.dim,
            action_dim,
            hidden_layers=int(t.get("hidden_layers", 4)),
            width=t.get("hidden_width"),
            activation=activation,
        )

    def cbo(self) -> CboConfig:
        t = dict(self.cbo_table)
        t.pop("n_agents", None)
        known = {
            "lam", "beta", "gamma1", "gamma2", "mass", "batch_size", "sigma1",
            "sigma2", "adam_beta1", "adam_beta2", "eps", "total_steps",
            "theta_noise_sigma", "adam_commit", "literal_adam_theta",
            "literal_adam_damping",
        }
        unknown = set(t) - known
        if unknown:
            raise ConfigError(f"unknown keys in [cbo]: {sorted(unknown)}")
        try:
            return CboConfig(**t)
        except ValueError as exc:
            raise ConfigError(f"invalid [cbo] section: {exc}") from exc

    @property
    def n_agents(self) -> int:
        return int(self.cbo_table.get("n_agents", 5000))

    @property
    def train_rollouts(self) -> int:
        return int(self.training_table.get("n_rollouts", 64))

    @property
    def train_dtype(self):
        import numpy as np

        return np.float32 if self.training_table.get("float32", False) else np.float64

    def evaluation(self, key: str):
        return self.evaluation_table[key]

    def eval_initial(self) -> InitialDistribution:
        return _initial_from_dict(self.evaluation_table["initial"])

    # ----- serialization --------------------------------------------------

    def resolved_dict(self) -> dict[str, Any]:
        return {
            "experiment": {"name": self.name, "seed": self.seed, "variant": self.variant},
            "problem": {"kind": self.problem_kind, **self.problem_table},
            "network": self.network_table,
            "cbo": self.cbo_table,
            "training": self.training_table,
            "evaluation": self.evaluation_table,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.resolved_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def config_from_dict(data: dict, seed_override: int | None = None,
                     variant_override: str | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    exp = data.get("experiment", {})
    seed = seed_override if seed_override is not None else exp.get("seed")
    if seed is None:
        raise ConfigError("a seed is required ([experiment].seed or --seed); "
                          "wall-clock seeding is not supported")
    variant = variant_override or exp.get("variant", "adamcbo")
    if variant not in ("mcbo", "adamcbo"):
        raise ConfigError(f"variant must be 'mcbo' or 'adamcbo', got {variant!r}")

    problem_table = dict(data.get("problem", {}))
    kind = problem_table.pop("kind", None)
    if kind not in PROBLEM_KINDS:
        raise ConfigError(f"[problem].kind must be one of {PROBLEM_KINDS}, got {kind!r}")

    evaluation = dict(_EVAL_DEFAULTS)
    evaluation.update(data.get("evaluation", {}))

    cfg = ExperimentConfig(
        name=str(exp.get("name", kind)),
        seed=int(seed),
        variant=variant,
        problem_kind=kind,
        problem_table=problem_table,
        network_table=dict(data.get("network", {})),
        cbo_table=dict(data.get("cbo", {})),
        training_table=dict(data.get("training", {})),
        evaluation_table=evaluation,
    )
    # fail fast on structurally invalid sections
    cfg.problem_spec()
    cfg.cbo()
    if kind != "benchmark":
        cfg.network_shape()
    return cfg


def load_config(path, seed_override: int | None = None,
                variant_override: str | None = None) -> ExperimentConfig:
    """Load a TOML config (or its JSON mirror, by file extension)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
        else:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    return config_from_dict(data, seed_override, variant_override)
