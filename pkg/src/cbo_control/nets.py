"""Policy networks evaluated as pure functions of a flat parameter vector.

There is no autodiff anywhere: a policy is a shape descriptor plus a flat
float64 vector, and the optimizers treat evaluation as a black box.

Parameter layout (frozen; checkpoints rely on it): layer by layer, the
row-major weight matrix ``W[out, in]`` followed by the bias ``b[out]``.
For mean-field networks the outer-net parameters come first, then the
inner (pooling) net, i.e. the vector splits at ``param_count(outer)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, NumericError, ShapeError

__all__ = [
    "NetworkShape",
    "MeanFieldNetShape",
    "param_count",
    "unpack_params",
    "forward",
    "mf_forward",
    "make_policy",
    "make_stacked_policy",
    "default_policy_shape",
    "default_meanfield_shape",
    "save_checkpoint",
    "load_checkpoint",
]

_ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class NetworkShape:
    """Fully connected architecture: layer widths plus hidden activation.

    ``widths[0]`` is the input width (1 + state dim for ``(t, x)`` inputs),
    ``widths[-1]`` the action dimension.  The activation applies to hidden
    layers only; the output layer is linear.
    """

    widths: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ShapeError(f"need at least 2 layers, got widths {self.widths}")
        if any(w < 1 for w in self.widths):
            raise ShapeError(f"all layer widths must be >= 1, got {self.widths}")
        if self.activation not in _ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}; choose from {_ACTIVATIONS}")


@dataclass(frozen=True)
class MeanFieldNetShape:
    """Permutation-invariant policy for interacting scalar agents.

    The action of agent ``i`` is ``outer(t, x_i, mean_j inner(x_j))``:
    ``inner`` embeds each scalar state into ``pool_width`` features which
    are mean-pooled over all agents, and ``outer`` maps time, own state
    and the pooled vector to a scalar action.
    """

    outer: NetworkShape
    inner: NetworkShape

    def __post_init__(self):
        if self.inner.widths[0] != 1:
            raise ShapeError("inner net must take a single scalar state")
        if self.outer.widths[-1] != 1:
            raise ShapeError("outer net must emit a scalar action")
        if self.outer.widths[0] != 2 + self.pool_width:
            raise ShapeError(
                f"outer input width {self.outer.widths[0]} != 2 + pool width {self.pool_width}"
            )

    @property
    def pool_width(self) -> int:
        return self.inner.widths[-1]


def default_policy_shape(state_dim: int, action_dim: int | None = None,
                         hidden_layers: int = 4, width: int | None = None,
                         activation: str = "tanh") -> NetworkShape:
    """Depth-5, width-5d default used for the vector-state problems."""
    if action_dim is None:
        action_dim = state_dim
    width = 5 * state_dim if width is None else width
    return NetworkShape((1 + state_dim, *([width] * hidden_layers), action_dim), activation)


def default_meanfield_shape(pool_width: int = 8, hidden: int = 16,
                            activation: str = "tanh") -> MeanFieldNetShape:
    inner = NetworkShape((1, hidden, hidden, pool_width), activation)
    outer = NetworkShape((2 + pool_width, hidden, hidden, 1), activation)
    return MeanFieldNetShape(outer=outer, inner=inner)


def _mlp_param_count(shape: NetworkShape) -> int:
    w = shape.widths
    return sum(w[k] * w[k + 1] + w[k + 1] for k in range(len(w) - 1))


def param_count(shape) -> int:
    """Number of parameters D consumed by ``shape``."""
    if isinstance(shape, MeanFieldNetShape):
        return _mlp_param_count(shape.outer) + _mlp_param_count(shape.inner)
    return _mlp_param_count(shape)


def _check_params(shape, params) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != param_count(shape):
        raise DimensionError(
            f"parameter vector has length {params.shape}, expected ({param_count(shape)},)"
        )
    if not np.all(np.isfinite(params)):
        raise NumericError("parameter vector contains non-finite entries")
    return params


def unpack_params(shape: NetworkShape, params) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer ``(W, b)`` with ``W[out, in]``."""
    params = _check_params(shape, params)
    layers = []
    pos = 0
    w = shape.widths
    for k in range(len(w) - 1):
        n_in, n_out = w[k], w[k + 1]
        weight = params[pos:pos + n_in * n_out].reshape(n_out, n_in)
        pos += n_in * n_out
        bias = params[pos:pos + n_out]
        pos += n_out
        layers.append((weight, bias))
    return layers


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _eval_mlp(shape: NetworkShape, layers, inp: np.ndarray) -> np.ndarray:
    h = inp
    last = len(layers) - 1
    for k, (weight, bias) in enumerate(layers):
        h = h @ weight.T + bias
        if k != last:
            h = _act(shape.activation, h)
    return h


def forward(shape: NetworkShape, params, t: float, x) -> np.ndarray:
    """Evaluate the policy at one ``(t, x)``; returns the action vector.

    The input is assembled as ``(t, x_1, ..., x_d)``, so ``len(x)`` must be
    ``widths[0] - 1``.  Pure: identical arguments give identical bits.
    """
    layers = unpack_params(shape, params)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != shape.widths[0] - 1:
        raise DimensionError(
            f"state has dim {x.shape[0]}, network expects {shape.widths[0] - 1}"
        )
    inp = np.concatenate(([float(t)], x))
    return _eval_mlp(shape, layers, inp)


def _split_mf(mfshape: MeanFieldNetShape, params) -> tuple[np.ndarray, np.ndarray]:
    params = _check_params(mfshape, params)
    d_outer = _mlp_param_count(mfshape.outer)
    return params[:d_outer], params[d_outer:]


def mf_forward(mfshape: MeanFieldNetShape, params, t: float, x_all, i: int) -> float:
    """Action of agent ``i`` given the states of all ``n`` agents.

    Exactly invariant under permutations of the other agents' entries
    because the interaction enters only through a mean pool.
    """
    x_all = np.asarray(x_all, dtype=np.float64).reshape(-1)
    n = x_all.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"agent index {i} out of range for {n} agents")
    theta_outer, theta_inner = _split_mf(mfshape, params)
    inner_layers = unpack_params(mfshape.inner, theta_inner)
    pooled = _eval_mlp(mfshape.inner, inner_layers, x_all[:, None]).mean(axis=0)
    outer_layers = unpack_params(mfshape.outer, theta_outer)
    inp = np.concatenate(([float(t), x_all[i]], pooled))
    return float(_eval_mlp(mfshape.outer, outer_layers, inp)[0])


def make_policy(shape, params):
    """Bind parameters into a ``(t, x) -> action`` callback for rollouts.

    For a mean-field shape, ``x`` is the vector of all agent states and the
    returned action vector holds every agent's action.
    """
    if isinstance(shape, MeanFieldNetShape):
        stacked = make_stacked_policy(shape, np.asarray(params, dtype=np.float64)[None, :])

        def mf_policy(t, x):
            x = np.asarray(x, dtype=np.float64)
            return stacked(t, x[None, None, :])[0, 0]

        return mf_policy

    layers = unpack_params(shape, params)

    def policy(t, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        inp = np.concatenate(([float(t)], x))
        return _eval_mlp(shape, layers, inp)

    return policy


# ---------------------------------------------------------------------------
# Stacked (per-agent-parameter) evaluation used by the Monte-Carlo engine.
# ---------------------------------------------------------------------------

def _stack_mlp(shape: NetworkShape, thetas: np.ndarray):
    """Per-layer ``(W[A, in, out], b[A, 1, out])`` for a parameter matrix."""
    a, _ = thetas.shape
    layers = []
    pos = 0
    w = shape.widths
    for k in range(len(w) - 1):
        n_in, n_out = w[k], w[k + 1]
        weight = thetas[:, pos:pos + n_in * n_out].reshape(a, n_out, n_in)
        pos += n_in * n_out
        bias = thetas[:, pos:pos + n_out].reshape(a, 1, n_out)
        pos += n_out
        layers.append((np.ascontiguousarray(weight.transpose(0, 2, 1)), bias))
    return layers


def _eval_mlp_stacked(shape: NetworkShape, layers, inp: np.ndarray) -> np.ndarray:
    # inp: (A, B, in) -> (A, B, out); one matmul per layer across all agents.
    h = inp
    last = len(layers) - 1
    for k, (weight, bias) in enumerate(layers):
        h = np.matmul(h, weight)
        h += bias
        if k != last:
            if shape.activation == "tanh":
                np.tanh(h, out=h)
            else:
                np.maximum(h, 0.0, out=h)
    return h


def make_stacked_policy(shape, thetas: np.ndarray, dtype=np.float64):
    """Vectorized policy over A parameter rows and B samples per row.

    Returns ``policy(t, x)`` with ``x`` of shape ``(A, B, d)`` (``d`` = state
    dim, or number of agents for mean-field nets) producing actions of shape
    ``(A, B, m)``.  ``dtype`` selects the arithmetic used for the network
    evaluation; training configs may drop to float32 for speed while the
    reference oracles stay in float64.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[1] != param_count(shape):
        raise DimensionError(
            f"parameter matrix has shape {thetas.shape}, expected (A, {param_count(shape)})"
        )
    if not np.all(np.isfinite(thetas)):
        raise NumericError("parameter matrix contains non-finite entries")
    dtype = np.dtype(dtype)

    def cast(layers):
        if dtype == np.float64:
            return layers
        return [(w.astype(dtype), b.astype(dtype)) for w, b in layers]

    if isinstance(shape, MeanFieldNetShape):
        d_outer = _mlp_param_count(shape.outer)
        outer_layers = cast(_stack_mlp(shape.outer, thetas[:, :d_outer]))
        inner_layers = cast(_stack_mlp(shape.inner, thetas[:, d_outer:]))
        pool = shape.pool_width

        def mf_policy(t, x):
            a, b, n = x.shape
            flat = x.reshape(a, b * n, 1).astype(dtype, copy=False)
            feats = _eval_mlp_stacked(shape.inner, inner_layers, flat)
            pooled = feats.reshape(a, b, n, pool).mean(axis=2)
            inp = np.empty((a, b, n, 2 + pool), dtype=dtype)
            inp[..., 0] = t
            inp[..., 1] = x
            inp[..., 2:] = pooled[:, :, None, :]
            out = _eval_mlp_stacked(shape.outer, outer_layers, inp.reshape(a, b * n, 2 + pool))
            return out.reshape(a, b, n)

        return mf_policy

    layers = cast(_stack_mlp(shape, thetas))
    d = shape.widths[0] - 1

    def policy(t, x):
        a, b, _ = x.shape
        inp = np.empty((a, b, 1 + d), dtype=dtype)
        inp[..., 0] = t
        inp[..., 1:] = x
        return _eval_mlp_stacked(shape, layers, inp)

    return policy


# ---------------------------------------------------------------------------
# Checkpoints: JSON array of doubles plus a shape descriptor header.
# ---------------------------------------------------------------------------

def _shape_to_dict(shape) -> dict:
    if isinstance(shape, MeanFieldNetShape):
        return {
            "kind": "meanfield",
            "outer": {"widths": list(shape.outer.widths), "activation": shape.outer.activation},
            "inner": {"widths": list(shape.inner.widths), "activation": shape.inner.activation},
        }
    return {"kind": "mlp", "widths": list(shape.widths), "activation": shape.activation}


def _shape_from_dict(data: dict):
    if data["kind"] == "meanfield":
        return MeanFieldNetShape(
            outer=NetworkShape(tuple(data["outer"]["widths"]), data["outer"]["activation"]),
            inner=NetworkShape(tuple(data["inner"]["widths"]), data["inner"]["activation"]),
        )
    return NetworkShape(tuple(data["widths"]), data["activation"])


def save_checkpoint(path, shape, params, extra: dict | None = None) -> None:
    params = _check_params(shape, params)
    payload = {"shape": _shape_to_dict(shape), "params": params.tolist()}
    if extra:
        payload["extra"] = extra
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_checkpoint(path):
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    shape = _shape_from_dict(payload["shape"])
    params = np.asarray(payload["params"], dtype=np.float64)
    return shape, _check_params(shape, params)
