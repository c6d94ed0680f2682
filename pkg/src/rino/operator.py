"""DeepONet heads on top of dictionary embeddings.

The prediction at output location ``y`` is ``sum_k br_k(alpha) tr_k(y)``
where ``alpha`` is the input signal's embedding. The trunk ``tr`` is one
of:

``network``     a trainable MLP/SIREN with ``P`` outputs
``pod``         frozen POD modes tabulated on a fixed grid
``dictionary``  a frozen learned (or analytic) output dictionary

and the branch ``br`` is an MLP or the identity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import jsonio
from .dictionary import Dictionary, Embedding, evaluate_dictionary
from .errors import FingerprintMismatch, MissingGamma, NaNGradient, OffGridQuery, RankDeficient, ShapeMismatch, ZeroSignal
from .inr import MlpParams, MlpSpec, init_mlp, mlp_forward, mlp_from_dict, mlp_param_grads, mlp_to_dict
from .numerics import adam_init, adam_step, as_generator, svd_thin

log = logging.getLogger(__name__)

__all__ = [
    "Trunk",
    "DeepOnetModel",
    "TrainConfig",
    "OperatorSample",
    "TrainTrace",
    "make_model",
    "predict",
    "relative_mse",
    "train_unknown_trunk",
    "train_predefined_trunk",
    "pod_modes",
    "evaluate_model",
]


def relative_mse(true_values, predicted_values) -> float:
    """``mean((v - v_hat)^2) / max|v|^2``."""
    v = np.asarray(true_values, dtype=float).reshape(-1)
    p = np.asarray(predicted_values, dtype=float).reshape(-1)
    if v.shape != p.shape:
        raise ShapeMismatch("true and predicted values differ in length")
    sup = float(np.max(np.abs(v))) if v.size else 0.0
    if sup < 1e-300:
        raise ZeroSignal("relative error is undefined for an all-zero signal")
    return float(np.mean((v - p) ** 2) / sup**2)


def _grid_key(Y):
    return np.ascontiguousarray(Y, dtype=float).tobytes()


@dataclass
class Trunk:
    kind: str
    spec: Optional[MlpSpec] = None
    params: Optional[MlpParams] = None
    grid: Optional[np.ndarray] = None
    modes: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    dictionary: Optional[Dictionary] = None

    def __post_init__(self):
        if self.kind not in ("network", "pod", "dictionary"):
            raise ValueError(f"unknown trunk kind {self.kind!r}")
        if self.kind == "pod":
            self.grid = np.asarray(self.grid, dtype=float)
            if self.grid.ndim == 1:
                self.grid = self.grid[:, None]
            self.modes = np.asarray(self.modes, dtype=float)
            self._index = {_grid_key(row): i for i, row in enumerate(self.grid)}

    @property
    def width(self):
        if self.kind == "network":
            return self.spec.output_dim
        if self.kind == "pod":
            return self.modes.shape[1]
        return len(self.dictionary)

    @property
    def trainable(self):
        return self.kind == "network"

    def _rows(self, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        try:
            return np.array([self._index[_grid_key(row)] for row in Y], dtype=int)
        except KeyError:
            raise OffGridQuery("POD trunk queried at a point outside its stored grid") from None

    def evaluate(self, Y):
        """Trunk basis at ``Y``, shape ``(K, P)``."""
        if self.kind == "network":
            return mlp_forward(self.spec, self.params, Y)
        if self.kind == "pod":
            return self.modes[self._rows(Y)]
        return evaluate_dictionary(self.dictionary, Y).T

    def offset(self, Y):
        if self.kind == "pod" and self.mean is not None:
            return self.mean[self._rows(Y)]
        return None

    def to_dict(self):
        if self.kind == "network":
            return {"kind": "network", **mlp_to_dict(self.spec, self.params)}
        if self.kind == "pod":
            return {
                "kind": "pod",
                "grid": self.grid.tolist(),
                "modes": self.modes.tolist(),
                "mean": None if self.mean is None else self.mean.tolist(),
            }
        return {"kind": "dictionary", "dictionary": self.dictionary.to_dict()}

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "network":
            spec, params = mlp_from_dict(d)
            return cls("network", spec=spec, params=params)
        if d["kind"] == "pod":
            mean = d.get("mean")
            return cls("pod", grid=np.array(d["grid"]), modes=np.array(d["modes"]), mean=None if mean is None else np.array(mean))
        return cls("dictionary", dictionary=Dictionary.from_dict(d["dictionary"]))


@dataclass
class DeepOnetModel:
    trunk: Trunk
    input_fingerprint: str
    branch_spec: Optional[MlpSpec] = None
    branch_params: Optional[MlpParams] = None
    embed_min: Optional[np.ndarray] = None
    embed_max: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.branch_spec is not None and self.branch_spec.output_dim != self.trunk.width:
            raise ShapeMismatch(f"branch width {self.branch_spec.output_dim} != trunk width {self.trunk.width}")

    @property
    def width(self):
        return self.trunk.width

    def normalize(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if self.embed_min is None:
            return A
        span = np.where(self.embed_max > self.embed_min, self.embed_max - self.embed_min, 1.0)
        return (A - self.embed_min) / span

    def branch(self, A):
        """Branch outputs for embeddings ``A`` of shape ``(N, Q)``."""
        A = self.normalize(A)
        if self.branch_spec is None:
            if A.shape[1] != self.width:
                raise ShapeMismatch(f"identity branch needs embeddings of length {self.width}, got {A.shape[1]}")
            return A
        return mlp_forward(self.branch_spec, self.branch_params, A)

    def to_dict(self):
        return {
            "width": self.width,
            "input_fingerprint": self.input_fingerprint,
            "branch": None if self.branch_spec is None else mlp_to_dict(self.branch_spec, self.branch_params),
            "trunk": self.trunk.to_dict(),
            "normalization": None
            if self.embed_min is None
            else {"min": self.embed_min.tolist(), "max": self.embed_max.tolist()},
        }

    @classmethod
    def from_dict(cls, d):
        branch_spec = branch_params = None
        if d["branch"] is not None:
            branch_spec, branch_params = mlp_from_dict(d["branch"])
        norm = d.get("normalization")
        return cls(
            trunk=Trunk.from_dict(d["trunk"]),
            input_fingerprint=d["input_fingerprint"],
            branch_spec=branch_spec,
            branch_params=branch_params,
            embed_min=None if norm is None else np.array(norm["min"], dtype=float),
            embed_max=None if norm is None else np.array(norm["max"], dtype=float),
        )

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(jsonio.dumps(self.to_dict()))
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(jsonio.loads(fh.read()))


def make_model(trunk: Trunk, input_fingerprint: str, rng, branch_spec: Optional[MlpSpec] = None) -> DeepOnetModel:
    """Fresh model; a trainable trunk is (re)initialized from ``rng`` after the branch."""
    gen = as_generator(rng)
    branch_params = None if branch_spec is None else init_mlp(branch_spec, gen)
    if trunk.kind == "network" and trunk.params is None:
        trunk = Trunk("network", spec=trunk.spec, params=init_mlp(trunk.spec, gen))
    return DeepOnetModel(trunk, input_fingerprint, branch_spec, branch_params)


def predict(model: DeepOnetModel, alpha: Embedding, Y) -> np.ndarray:
    if alpha.dictionary_fingerprint != model.input_fingerprint:
        raise FingerprintMismatch("embedding does not come from the model's input dictionary")
    b = model.branch(alpha.coeffs[None, :])[0]
    out = model.trunk.evaluate(Y) @ b
    off = model.trunk.offset(Y)
    return out if off is None else out + off


@dataclass
class OperatorSample:
    input_embedding: Embedding
    output_points: np.ndarray
    output_values: np.ndarray
    output_embedding: Optional[Embedding] = None

    def __post_init__(self):
        Y = np.asarray(self.output_points, dtype=float)
        self.output_points = Y[:, None] if Y.ndim == 1 else Y
        self.output_values = np.asarray(self.output_values, dtype=float).reshape(-1)
        if self.output_values.size < 1 or self.output_values.size != self.output_points.shape[0]:
            raise ValueError("output points and values must be non-empty and of equal length")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 2000
    batch_size: Optional[int] = None
    tau: float = 1.0
    seed: int = 0
    normalize_embeddings: bool = False

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class TrainTrace:
    losses: list = field(default_factory=list)
    prediction_losses: list = field(default_factory=list)


def _fit_normalization(model, A):
    model.embed_min = A.min(axis=0)
    model.embed_max = A.max(axis=0)


def _train(samples, model: DeepOnetModel, cfg: TrainConfig, tau: float, use_gamma: bool):
    if not samples:
        raise ValueError("no training samples")
    fp = model.input_fingerprint
    for s in samples:
        if s.input_embedding.dictionary_fingerprint != fp:
            raise FingerprintMismatch("training sample embedded with a different dictionary")
        if use_gamma and s.output_embedding is None:
            raise MissingGamma("predefined-trunk training needs an output embedding for every sample")
    A = np.stack([s.input_embedding.coeffs for s in samples])
    if cfg.normalize_embeddings:
        _fit_normalization(model, A)
    A = model.normalize(A)
    G = np.stack([s.output_embedding.coeffs for s in samples]) if use_gamma else None

    # group samples sharing an output grid so the trunk is evaluated once per grid
    keys, grid_of, grids = {}, np.empty(len(samples), dtype=int), []
    for i, s in enumerate(samples):
        k = _grid_key(s.output_points)
        if k not in keys:
            keys[k] = len(grids)
            grids.append(s.output_points)
        grid_of[i] = keys[k]
    targets = [s.output_values for s in samples]
    # an all-zero target has no relative error; score it by plain MSE
    sup2 = np.array([float(np.max(t**2)) for t in targets])
    sup2 = np.where(sup2 > 0.0, sup2, 1.0)
    trunk = model.trunk
    fixed_T = None if trunk.trainable else [trunk.evaluate(Y) for Y in grids]
    offsets = [trunk.offset(Y) for Y in grids]

    bspec = model.branch_spec
    n_branch = 0 if bspec is None else bspec.n_params
    flat = np.concatenate(
        [
            np.zeros(0) if bspec is None else model.branch_params.flatten(),
            trunk.params.flatten() if trunk.trainable else np.zeros(0),
        ]
    )
    trace = TrainTrace()
    if flat.size == 0:
        return model, trace
    opt = adam_init(flat.size, lr=cfg.lr)
    gen = as_generator(cfg.seed)
    n = len(samples)
    bs = n if not cfg.batch_size else min(int(cfg.batch_size), n)

    # keep the iterate with the lowest epoch loss; Adam at a fixed step
    # size keeps oscillating and the last iterate can sit on a spike
    best_loss, best_flat = np.inf, flat
    for epoch in range(cfg.epochs):
        order = gen.permutation(n) if bs < n else np.arange(n)
        start_flat = flat
        epoch_loss = epoch_pred = 0.0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            nb = idx.size
            bparams = None if bspec is None else MlpParams.from_flat(bspec, flat[:n_branch])
            tparams = MlpParams.from_flat(trunk.spec, flat[n_branch:]) if trunk.trainable else None
            Ab = A[idx]
            B = Ab if bspec is None else mlp_forward(bspec, bparams, Ab)
            dB = np.zeros_like(B)
            pred_loss = 0.0
            g_trunk = None
            for g in np.unique(grid_of[idx]):
                local = np.nonzero(grid_of[idx] == g)[0]
                T = mlp_forward(trunk.spec, tparams, grids[g]) if trunk.trainable else fixed_T[g]
                S = np.stack([targets[i] for i in idx[local]])
                P = B[local] @ T.T
                if offsets[g] is not None:
                    P = P + offsets[g]
                R = P - S
                per = np.mean(R * R, axis=1) / sup2[idx[local]]
                pred_loss += float(np.sum(per))
                W = (2.0 / (nb * T.shape[0])) * R / sup2[idx[local]][:, None]
                dB[local] += W @ T
                if trunk.trainable:
                    gT = mlp_param_grads(trunk.spec, tparams, grids[g], W.T @ B[local]).flatten()
                    g_trunk = gT if g_trunk is None else g_trunk + gT
            pred_loss /= nb
            loss = pred_loss
            if use_gamma and tau > 0:
                D = B - G[idx]
                loss += tau * float(np.mean(np.sum(D * D, axis=1)))
                dB += (2.0 * tau / nb) * D
            grads = []
            if bspec is not None:
                grads.append(mlp_param_grads(bspec, bparams, Ab, dB).flatten())
            if trunk.trainable:
                grads.append(g_trunk)
            grad = np.concatenate(grads)
            try:
                opt, flat = adam_step(opt, flat, grad)
            except NaNGradient as exc:
                exc.trace = trace
                raise
            epoch_loss += loss * nb
            epoch_pred += pred_loss * nb
        trace.losses.append(epoch_loss / n)
        trace.prediction_losses.append(epoch_pred / n)
        if trace.losses[-1] < best_loss:
            best_loss, best_flat = trace.losses[-1], start_flat
        if epoch % 500 == 0:
            log.info("epoch %d loss %.3e", epoch, trace.losses[-1])

    flat = best_flat
    if bspec is not None:
        model.branch_params = MlpParams.from_flat(bspec, flat[:n_branch])
    if trunk.trainable:
        model.trunk = Trunk("network", spec=trunk.spec, params=MlpParams.from_flat(trunk.spec, flat[n_branch:]))
    return model, trace


def train_unknown_trunk(samples, model: DeepOnetModel, cfg: TrainConfig):
    """Adam on the mean per-realization relative MSE, branch and trunk jointly.

    A frozen trunk (POD or dictionary) simply contributes no parameters.
    Returns ``(model, trace)``; the model is updated in place and holds
    the parameters of the epoch with the lowest training loss.
    """
    return _train(samples, model, cfg, tau=0.0, use_gamma=False)


def train_predefined_trunk(samples, model: DeepOnetModel, cfg: TrainConfig):
    """Branch-only training with the embedding-consistency penalty.

    Loss per realization: relative MSE of the prediction plus
    ``tau * ||gamma - branch(alpha)||^2`` where ``gamma`` is the output
    signal's projection onto the frozen trunk basis.
    """
    if model.trunk.trainable:
        raise ValueError("train_predefined_trunk expects a frozen trunk")
    return _train(samples, model, cfg, tau=cfg.tau, use_gamma=True)


def pod_modes(snapshots, P, center=False):
    """Leading ``P`` POD modes of an ``(N, K)`` snapshot matrix.

    Returns ``(modes, mean)``: ``modes`` is ``(K, P)`` with orthonormal
    columns; ``mean`` is the ``(K,)`` snapshot mean when ``center`` is set,
    else None.
    """
    S = np.asarray(snapshots, dtype=float)
    if P > min(S.shape):
        raise ValueError(f"cannot extract {P} modes from a {S.shape} snapshot matrix")
    mean = S.mean(axis=0) if center else None
    _, s, V = svd_thin(S - mean if center else S, P)
    if s.size and (s[0] == 0.0 or s[-1] <= 1e-12 * s[0]):
        raise RankDeficient(f"snapshot matrix has numerical rank below {P}")
    return V, mean


def evaluate_model(model: DeepOnetModel, samples) -> np.ndarray:
    """Per-sample relative MSE."""
    return np.array([relative_mse(s.output_values, predict(model, s.input_embedding, s.output_points)) for s in samples])
