"""Coordinate networks (SIREN and plain MLPs) with hand-written backprop.

A network maps points ``X`` of shape ``(batch, input_dim)`` to values of
shape ``(batch, output_dim)``. Hidden layers compute
``act(h @ W.T + b)``; the last layer is affine. Weight matrices are
stored ``(fan_out, fan_in)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateBasis, ShapeMismatch
from .numerics import as_generator

__all__ = [
    "MlpSpec",
    "MlpParams",
    "init_mlp",
    "mlp_forward",
    "mlp_param_grads",
    "freeze_scale",
    "mlp_to_dict",
    "mlp_from_dict",
]

ACTIVATIONS = ("sine", "relu", "tanh", "identity")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_widths: tuple = ()
    activation: str = "sine"
    omega0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if self.omega0 <= 0:
            raise ValueError("omega0 must be positive")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    @property
    def n_params(self):
        sizes = self.layer_sizes
        return sum(sizes[i + 1] * (sizes[i] + 1) for i in range(len(sizes) - 1))


@dataclass
class MlpParams:
    weights: list
    biases: list
    output_scale: Optional[float] = None

    def flatten(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, spec: MlpSpec, flat, output_scale=None) -> "MlpParams":
        flat = np.asarray(flat, dtype=float)
        if flat.size != spec.n_params:
            raise ShapeMismatch(f"expected {spec.n_params} parameters, got {flat.size}")
        sizes = spec.layer_sizes
        weights, biases, pos = [], [], 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(flat[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in).copy())
            pos += fan_in * fan_out
            biases.append(flat[pos : pos + fan_out].copy())
            pos += fan_out
        return cls(weights, biases, output_scale)

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.output_scale)


def init_mlp(spec: MlpSpec, rng) -> MlpParams:
    """Uniform fan-in initialization with zero biases.

    Layer ``m`` draws ``W ~ U[-w*sqrt(6/fan_in), +w*sqrt(6/fan_in)]`` with
    ``w = spec.omega0`` for the first layer of a sine network and ``w = 1``
    everywhere else.
    """
    gen = as_generator(rng)
    sizes = spec.layer_sizes
    weights, biases = [], []
    for m, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w0 = spec.omega0 if (m == 0 and spec.activation == "sine") else 1.0
        bound = w0 * np.sqrt(6.0 / fan_in)
        weights.append(gen.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _act(name, z):
    if name == "sine":
        return np.sin(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_deriv(name, z, a):
    if name == "sine":
        return np.cos(z)
    if name == "relu":
        return (z > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _check_points(spec, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and spec.input_dim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeMismatch(f"points must have shape (batch, {spec.input_dim}), got {X.shape}")
    return X


def _forward_cache(spec, params, X):
    zs, hs = [], [X]
    h = X
    last = len(params.weights) - 1
    for m, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W.T + b
        if m == last:
            hs.append(z)
        else:
            h = _act(spec.activation, z)
            zs.append(z)
            hs.append(h)
    return zs, hs


def mlp_forward(spec: MlpSpec, params: MlpParams, X) -> np.ndarray:
    X = _check_points(spec, X)
    h = X
    last = len(params.weights) - 1
    for m, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W.T + b
        if m != last:
            h = _act(spec.activation, h)
    if params.output_scale is not None:
        h = h / params.output_scale
    return h


def mlp_param_grads(spec: MlpSpec, params: MlpParams, X, residual_weights) -> MlpParams:
    """Gradient of ``sum(residual_weights * mlp_forward(X))`` w.r.t. every weight and bias.

    Callers build loss gradients by passing ``dLoss/dOutput`` as
    ``residual_weights``. The frozen ``output_scale`` is not a parameter.
    """
    X = _check_points(spec, X)
    R = np.asarray(residual_weights, dtype=float)
    if R.ndim == 1 and spec.output_dim == 1:
        R = R[:, None]
    if R.shape != (X.shape[0], spec.output_dim):
        raise ShapeMismatch(f"residual_weights must have shape {(X.shape[0], spec.output_dim)}, got {R.shape}")
    if params.output_scale is not None:
        R = R / params.output_scale
    zs, hs = _forward_cache(spec, params, X)
    n_layers = len(params.weights)
    gW = [None] * n_layers
    gb = [None] * n_layers
    delta = R
    for m in range(n_layers - 1, -1, -1):
        gW[m] = delta.T @ hs[m]
        gb[m] = delta.sum(axis=0)
        if m > 0:
            delta = (delta @ params.weights[m]) * _act_deriv(spec.activation, zs[m - 1], hs[m])
    return MlpParams(gW, gb)


def freeze_scale(spec: MlpSpec, params: MlpParams, quadrature_points) -> MlpParams:
    """Set ``output_scale`` to the root-mean-square output over the given points."""
    raw = mlp_forward(spec, MlpParams(params.weights, params.biases), quadrature_points)
    if raw.size == 0:
        raise ValueError("quadrature_points must be non-empty")
    ms = float(np.mean(raw * raw))
    if ms < 1e-24:
        raise DegenerateBasis(f"basis mean square {ms:.3e} is numerically zero")
    out = params.copy()
    out.output_scale = float(np.sqrt(ms))
    return out


def mlp_to_dict(spec: MlpSpec, params: Optional[MlpParams] = None) -> dict:
    d = {
        "spec": {
            "input_dim": spec.input_dim,
            "output_dim": spec.output_dim,
            "hidden_widths": list(spec.hidden_widths),
            "activation": spec.activation,
            "omega0": float(spec.omega0),
        }
    }
    if params is not None:
        d["params"] = {
            "weights": [W.tolist() for W in params.weights],
            "biases": [b.tolist() for b in params.biases],
            "output_scale": params.output_scale,
        }
    return d


def mlp_from_dict(d: dict):
    s = d["spec"]
    spec = MlpSpec(
        input_dim=int(s["input_dim"]),
        output_dim=int(s["output_dim"]),
        hidden_widths=tuple(s["hidden_widths"]),
        activation=s["activation"],
        omega0=float(s["omega0"]),
    )
    params = None
    if "params" in d:
        p = d["params"]
        sizes = spec.layer_sizes
        weights = [np.array(W, dtype=float).reshape(o, i) for W, i, o in zip(p["weights"], sizes[:-1], sizes[1:])]
        biases = [np.array(b, dtype=float).reshape(-1) for b in p["biases"]]
        scale = p.get("output_scale")
        params = MlpParams(weights, biases, None if scale is None else float(scale))
    return spec, params
