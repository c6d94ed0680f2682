"""Dictionaries of continuous basis functions learned from point clouds.

A signal realization is a :class:`PointCloudSignal` (any number of points,
anywhere in the domain). Projecting it onto a :class:`Dictionary` solves
the ridge problem

    alpha = argmin ||u - Psi^T alpha||^2 + lam ||alpha||^2
          = (Psi Psi^T + lam I)^{-1} Psi u

whose kernel is ``|Psi| x |Psi|`` regardless of how many points the
signal carries. The coefficients are the resolution-independent
embedding consumed by the operator networks.

Two learners grow a dictionary of SIREN atoms:

* :func:`learn_dictionary_batch` alternates between projecting every
  realization onto the current atoms and taking an Adam step on the
  newest atom only, so the new atom chases the mean residual.
* :func:`learn_dictionary_samplewise` walks the realizations in order and
  fits a fresh atom to the residual of any realization the current
  dictionary cannot reproduce (Gram-Schmidt in function space).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import jsonio
from .errors import DegenerateBasis, DomainViolation, FingerprintMismatch, NoProgress, NotPositiveDefinite
from .inr import MlpParams, MlpSpec, freeze_scale, init_mlp, mlp_forward, mlp_from_dict, mlp_param_grads, mlp_to_dict
from .numerics import adam_init, adam_step, as_generator, solve_spd

log = logging.getLogger(__name__)

__all__ = [
    "PointCloudSignal",
    "BasisFunction",
    "Dictionary",
    "Embedding",
    "DictLearnConfig",
    "DictLearnTrace",
    "evaluate_dictionary",
    "project",
    "project_many",
    "reconstruct",
    "reconstruction_errors",
    "learn_dictionary_batch",
    "learn_dictionary_samplewise",
    "gram_report",
    "dense_grid",
]

_DOMAIN_TOL = 1e-9


def _as_points(points, dim=None):
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"points must be (M, d), got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"points have dimension {X.shape[1]}, expected {dim}")
    return X


@dataclass
class PointCloudSignal:
    points: np.ndarray
    values: np.ndarray
    id: int = 0

    def __post_init__(self):
        self.points = _as_points(self.points)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.points.shape[0] != self.values.size:
            raise ValueError("points and values disagree in length")
        if self.values.size < 1:
            raise ValueError("a signal needs at least one point")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("signal values must be finite")

    def __len__(self):
        return self.values.size


def _legendre(n, t):
    return np.polynomial.legendre.legval(t, np.eye(n + 1)[n])


@dataclass
class BasisFunction:
    """One atom. ``kind`` is ``constant_one``, ``neural`` or ``analytic``.

    Analytic tags and their ``parameters``:

    ``cosine``        ``w`` (d,), ``b``: ``cos(x.w + b)``
    ``relu_feature``  ``W1`` (H, d), ``b1`` (H,), ``W2`` (H,), ``b2``
    ``monomial``      ``degree``: ``x**degree`` (1-D)
    ``legendre``      ``degree``, ``lower``, ``upper``: ``P_n`` on the
                      interval mapped to [-1, 1]
    """

    kind: str
    spec: Optional[MlpSpec] = None
    params: Optional[MlpParams] = None
    tag: Optional[str] = None
    parameters: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in ("constant_one", "neural", "analytic"):
            raise ValueError(f"unknown atom kind {self.kind!r}")
        if self.kind == "neural" and (self.spec is None or self.params is None):
            raise ValueError("neural atoms need spec and params")
        if self.kind == "analytic" and self.tag not in ("cosine", "relu_feature", "monomial", "legendre"):
            raise ValueError(f"unknown analytic tag {self.tag!r}")

    @classmethod
    def constant(cls):
        return cls("constant_one")

    @classmethod
    def neural(cls, spec, params):
        if params.output_scale is None:
            raise ValueError("neural atoms must carry a frozen output_scale")
        return cls("neural", spec=spec, params=params)

    @classmethod
    def analytic(cls, tag, **parameters):
        return cls("analytic", tag=tag, parameters=parameters)

    def __call__(self, X):
        X = _as_points(X)
        if self.kind == "constant_one":
            return np.ones(X.shape[0])
        if self.kind == "neural":
            return mlp_forward(self.spec, self.params, X)[:, 0]
        p = self.parameters
        if self.tag == "cosine":
            return np.cos(X @ np.atleast_1d(np.asarray(p["w"], dtype=float)) + float(p["b"]))
        if self.tag == "relu_feature":
            W1 = np.asarray(p["W1"], dtype=float).reshape(-1, X.shape[1])
            hidden = np.maximum(X @ W1.T + np.asarray(p["b1"], dtype=float), 0.0)
            return hidden @ np.asarray(p["W2"], dtype=float) + float(p["b2"])
        if self.tag == "monomial":
            return X[:, 0] ** int(p["degree"])
        lo, hi = float(p["lower"]), float(p["upper"])
        return _legendre(int(p["degree"]), 2.0 * (X[:, 0] - lo) / (hi - lo) - 1.0)

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "neural":
            m = mlp_to_dict(self.spec, self.params)
            d["spec"] = m["spec"]
            d["params"] = {"weights": m["params"]["weights"], "biases": m["params"]["biases"]}
            d["scale"] = self.params.output_scale
        elif self.kind == "analytic":
            d["tag"] = self.tag
            d["parameters"] = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v) for k, v in self.parameters.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "constant_one":
            return cls.constant()
        if d["kind"] == "neural":
            payload = {"spec": d["spec"], "params": dict(d["params"], output_scale=d["scale"])}
            spec, params = mlp_from_dict(payload)
            return cls.neural(spec, params)
        return cls.analytic(d["tag"], **d["parameters"])


@dataclass
class Dictionary:
    lower: np.ndarray
    upper: np.ndarray
    atoms: list = field(default_factory=list)

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape or np.any(self.upper <= self.lower):
            raise ValueError("domain box needs lower < upper in every dimension")

    @classmethod
    def unit(cls, dim=1, atoms=None):
        return cls(np.zeros(dim), np.ones(dim), list(atoms or []))

    @property
    def dim(self):
        return self.lower.size

    def __len__(self):
        return len(self.atoms)

    def atoms_payload(self):
        return [a.to_dict() for a in self.atoms]

    @property
    def fingerprint(self) -> str:
        return jsonio.sha256_of(self.atoms_payload())

    def with_atom(self, atom) -> "Dictionary":
        return Dictionary(self.lower, self.upper, [*self.atoms, atom])

    def to_dict(self):
        return {
            "domain": {"dim": self.dim, "lower": self.lower.tolist(), "upper": self.upper.tolist()},
            "atoms": self.atoms_payload(),
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, d):
        out = cls(d["domain"]["lower"], d["domain"]["upper"], [BasisFunction.from_dict(a) for a in d["atoms"]])
        if "fingerprint" in d and d["fingerprint"] != out.fingerprint:
            raise FingerprintMismatch("stored dictionary fingerprint does not match its atoms")
        return out

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(jsonio.dumps(self.to_dict()))
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(jsonio.loads(fh.read()))


@dataclass
class Embedding:
    coeffs: np.ndarray
    dictionary_fingerprint: str
    lam: float = 0.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)

    def __len__(self):
        return self.coeffs.size


def dense_grid(lower, upper, n_1d=None):
    """Deterministic quadrature grid: 10^4 points in 1-D, 128^2 in 2-D."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = lower.size
    if n_1d is None:
        n_1d = {1: 10_000, 2: 128}.get(d, 32)
    axes = [np.linspace(lo, hi, n_1d) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _check_domain(dictionary, X):
    X = _as_points(X, dictionary.dim)
    if np.any(X < dictionary.lower - _DOMAIN_TOL) or np.any(X > dictionary.upper + _DOMAIN_TOL):
        raise DomainViolation("query points fall outside the dictionary domain")
    return X


def evaluate_dictionary(dictionary: Dictionary, X) -> np.ndarray:
    """Atom values at the points, shape ``(len(dictionary), M)``."""
    X = _check_domain(dictionary, X)
    if not dictionary.atoms:
        return np.zeros((0, X.shape[0]))
    return np.stack([atom(X) for atom in dictionary.atoms])


def _ridge_solve(G, rhs, lam):
    n = G.shape[0]
    if n == 0:
        return np.zeros(0)
    # jitter escalation would silently regularize an exact least-squares fit
    return solve_spd(G + lam * np.eye(n), rhs, jitter=0.0, max_escalations=3 if lam > 0 else 0)


def project(dictionary: Dictionary, signal: PointCloudSignal, lam=0.0) -> Embedding:
    Phi = evaluate_dictionary(dictionary, signal.points)
    coeffs = _ridge_solve(Phi @ Phi.T, Phi @ signal.values, lam)
    return Embedding(coeffs, dictionary.fingerprint, float(lam))


def project_many(dictionary: Dictionary, signals, lam=0.0):
    """Embeddings for a list of signals, one batched solve."""
    batch = _PaddedBatch(signals)
    Phi = batch.scatter(evaluate_dictionary(dictionary, batch.flat_points))
    coeffs = _batched_ridge(Phi, batch.values, lam)
    fp = dictionary.fingerprint
    return [Embedding(c, fp, float(lam)) for c in coeffs]


def reconstruct(dictionary: Dictionary, emb: Embedding, X) -> np.ndarray:
    if emb.dictionary_fingerprint != dictionary.fingerprint:
        raise FingerprintMismatch("embedding was computed with a different dictionary")
    return emb.coeffs @ evaluate_dictionary(dictionary, X)


def _rel_mse_rows(residual, values, counts):
    """Per-realization mean squared residual over squared sup-norm (padded rows)."""
    sup2 = np.max(values * values, axis=1)
    sup2 = np.where(sup2 > 0.0, sup2, 1.0)
    return np.sum(residual * residual, axis=1) / counts / sup2


def reconstruction_errors(dictionary: Dictionary, signals, lam=0.0, query=None):
    """Relative MSE of projecting each signal and reconstructing it.

    ``query`` optionally supplies, per signal, a second signal (e.g. the
    full-resolution truth) on which the reconstruction is scored.
    """
    embs = project_many(dictionary, signals, lam)
    targets = signals if query is None else query
    out = np.empty(len(signals))
    for i, (emb, tgt) in enumerate(zip(embs, targets)):
        pred = emb.coeffs @ evaluate_dictionary(dictionary, tgt.points)
        sup2 = np.max(tgt.values**2)
        out[i] = np.mean((tgt.values - pred) ** 2) / (sup2 if sup2 > 0 else 1.0)
    return out


class _PaddedBatch:
    """Realizations of unequal length packed into ``(N, M_max)`` arrays."""

    def __init__(self, signals):
        if not signals:
            raise ValueError("dataset is empty")
        self.n = len(signals)
        self.counts = np.array([len(s) for s in signals], dtype=float)
        m_max = int(self.counts.max())
        self.flat_points = np.concatenate([s.points for s in signals], axis=0)
        self.rows = np.repeat(np.arange(self.n), self.counts.astype(int))
        self.cols = np.concatenate([np.arange(len(s)) for s in signals])
        self.values = np.zeros((self.n, m_max))
        self.values[self.rows, self.cols] = np.concatenate([s.values for s in signals])

    def scatter(self, flat):
        """``(Q, total)`` atom values -> ``(N, Q, M_max)`` zero-padded."""
        out = np.zeros((self.n, flat.shape[0], self.values.shape[1]))
        out[self.rows, :, self.cols] = flat.T
        return out

    def gather(self, padded):
        return padded[self.rows, self.cols]


def _batched_ridge(Phi, U, lam):
    """Solve every ``(Phi_i Phi_i^T + lam I) a_i = Phi_i u_i`` at once."""
    n, q, _ = Phi.shape
    if q == 0:
        return np.zeros((n, 0))
    G = Phi @ Phi.transpose(0, 2, 1)
    rhs = np.einsum("nqm,nm->nq", Phi, U)
    if lam > 0:
        G = G + lam * np.eye(q)
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("projection kernel is singular; atoms are linearly dependent on some realization") from exc
    return np.linalg.solve(G, rhs[..., None])[..., 0]


@dataclass
class DictLearnConfig:
    lam: float = 1e-4
    tol: float = 1e-4
    max_atoms: int = 12
    epochs_per_atom: int = 500
    lr: float = 1.66e-4
    seed: int = 0
    atom_spec: MlpSpec = field(default_factory=lambda: MlpSpec(1, 1, (20, 20), "sine", 5.0))
    min_gain: float = 0.02
    patience: int = 25
    min_improvement: float = 1e-7
    batch_normalize: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.max_atoms < 1:
            raise ValueError("max_atoms must be >= 1")
        if self.atom_spec.output_dim != 1:
            raise ValueError("atoms are scalar-valued")

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "atom_spec"}
        d["atom_spec"] = mlp_to_dict(self.atom_spec)["spec"]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "atom_spec" in d:
            d["atom_spec"], _ = mlp_from_dict({"spec": d["atom_spec"]})
        return cls(**d)


@dataclass
class DictLearnTrace:
    epoch_errors: list = field(default_factory=list)
    atom_added_at: list = field(default_factory=list)
    atom_errors: list = field(default_factory=list)
    monotone_violations: int = 0
    no_progress: bool = False

    def to_rows(self):
        marks = set(self.atom_added_at)
        return [(e, err, int(e in marks)) for e, err in enumerate(self.epoch_errors)]


def _train_batch_atom(batch, Phi_fixed, lam, cfg, gen, trace):
    """ADMM-style rounds for one new atom; returns its raw parameters."""
    spec = cfg.atom_spec
    params = init_mlp(spec, gen)
    flat = params.flatten()
    opt = adam_init(flat.size, lr=cfg.lr)
    X = batch.flat_points
    sup2 = np.max(batch.values**2, axis=1)
    w = 1.0 / np.where(sup2 > 0.0, sup2, 1.0)
    n_total = X.shape[0]
    prev = np.inf
    stall = 0
    best_err, best_flat = np.inf, flat
    for epoch in range(cfg.epochs_per_atom):
        params = MlpParams.from_flat(spec, flat)
        raw = mlp_forward(spec, params, X)[:, 0]
        if cfg.batch_normalize:
            scale = np.sqrt(np.mean(raw * raw))
            if scale < 1e-12:
                raise DegenerateBasis("new atom collapsed to zero during training")
            psi = raw / scale
        else:
            psi = raw
        psi_pad = batch.scatter(psi[None, :])
        Phi = np.concatenate([Phi_fixed, psi_pad], axis=1)
        alpha = _batched_ridge(Phi, batch.values, lam)
        residual = batch.values - np.einsum("nq,nqm->nm", alpha, Phi)
        errs = _rel_mse_rows(residual, batch.values, batch.counts)
        err = float(np.mean(errs))
        trace.epoch_errors.append(err)
        if err < best_err:
            best_err, best_flat = err, flat
        if err > prev + 1e-6:
            trace.monotone_violations += 1
        stall = stall + 1 if prev - err < cfg.min_improvement else 0
        prev = err
        if stall >= cfg.patience:
            break
        # d(mean_i w_i mean_j r_ij^2)/d psi_ij with alpha held fixed
        coef = (-2.0 / batch.n) * w * alpha[:, -1] / batch.counts
        g_psi = batch.gather(coef[:, None] * residual)
        if cfg.batch_normalize:
            g_raw = g_psi / scale - raw * (g_psi @ raw) / (n_total * scale**3)
        else:
            g_raw = g_psi
        grads = mlp_param_grads(spec, params, X, g_raw).flatten()
        opt, flat = adam_step(opt, flat, grads)
    return MlpParams.from_flat(spec, best_flat)


def _projection_error(batch, Phi, lam):
    alpha = _batched_ridge(Phi, batch.values, lam)
    residual = batch.values - np.einsum("nq,nqm->nm", alpha, Phi)
    return float(np.mean(_rel_mse_rows(residual, batch.values, batch.counts)))


def learn_dictionary_batch(dataset, cfg: DictLearnConfig, rng=None, domain=None):
    """Grow a dictionary from ``{1}`` by batch-wise alternating minimization.

    Parameters
    ----------
    dataset : list of PointCloudSignal
    cfg : DictLearnConfig
    rng : RngState, Generator or int, optional
        Defaults to ``cfg.seed``.
    domain : (lower, upper), optional
        Domain box; the unit box of the data dimension by default.

    Returns
    -------
    dictionary : Dictionary
    trace : DictLearnTrace
        Mean relative MSE after every epoch, plus the epochs at which
        atoms were appended.
    """
    gen = as_generator(cfg.seed if rng is None else rng)
    batch = _PaddedBatch(dataset)
    dim = batch.flat_points.shape[1]
    lower, upper = (np.zeros(dim), np.ones(dim)) if domain is None else domain
    dictionary = Dictionary(lower, upper, [BasisFunction.constant()])
    quad = dense_grid(dictionary.lower, dictionary.upper)
    trace = DictLearnTrace()

    Phi_fixed = batch.scatter(evaluate_dictionary(dictionary, batch.flat_points))
    err = _projection_error(batch, Phi_fixed, cfg.lam)
    trace.atom_errors.append(err)
    log.info("dictionary |Psi|=1 error %.3e", err)
    while err >= cfg.tol and len(dictionary) < cfg.max_atoms:
        trace.atom_added_at.append(len(trace.epoch_errors))
        raw = _train_batch_atom(batch, Phi_fixed, cfg.lam, cfg, gen, trace)
        atom = BasisFunction.neural(cfg.atom_spec, freeze_scale(cfg.atom_spec, raw, quad))
        candidate = batch.scatter(atom(batch.flat_points)[None, :])
        Phi_new = np.concatenate([Phi_fixed, candidate], axis=1)
        new_err = _projection_error(batch, Phi_new, cfg.lam)
        if err - new_err < cfg.min_gain * err:
            trace.no_progress = True
            warnings.warn(
                f"atom {len(dictionary) + 1} reduced the error only from {err:.3e} to {new_err:.3e}; stopping",
                NoProgress,
                stacklevel=2,
            )
            break
        dictionary = dictionary.with_atom(atom)
        Phi_fixed, err = Phi_new, new_err
        trace.atom_errors.append(err)
        log.info("dictionary |Psi|=%d error %.3e", len(dictionary), err)
    if trace.monotone_violations:
        log.warning("reconstruction error rose between rounds %d times", trace.monotone_violations)
    return dictionary, trace


def _fit_residual_atom(points, target, cfg, gen):
    spec = cfg.atom_spec
    params = init_mlp(spec, gen)
    flat = params.flatten()
    opt = adam_init(flat.size, lr=cfg.lr)
    m = target.size
    sup2 = max(float(np.max(target**2)), 1e-300)
    prev, stall = np.inf, 0
    for _ in range(cfg.epochs_per_atom):
        params = MlpParams.from_flat(spec, flat)
        r = mlp_forward(spec, params, points)[:, 0] - target
        loss = float(np.mean(r * r) / sup2)
        stall = stall + 1 if prev - loss < cfg.min_improvement * 1e-3 else 0
        prev = loss
        if stall >= cfg.patience:
            break
        grads = mlp_param_grads(spec, params, points, (2.0 / (m * sup2)) * r).flatten()
        opt, flat = adam_step(opt, flat, grads)
    return MlpParams.from_flat(spec, flat)


def learn_dictionary_samplewise(dataset, cfg: DictLearnConfig, rng=None, domain=None):
    """Sample-wise dictionary growth, starting from the empty dictionary.

    Each realization is projected onto the current atoms; when its
    relative residual exceeds ``cfg.tol`` a new atom is fitted to that
    residual, normalized, and appended. Realizations are visited in the
    given order, so the result depends on it.

    Returns
    -------
    dictionary : Dictionary
    added : list of int
        Realization ids that triggered a new atom.
    """
    gen = as_generator(cfg.seed if rng is None else rng)
    dim = dataset[0].points.shape[1]
    lower, upper = (np.zeros(dim), np.ones(dim)) if domain is None else domain
    dictionary = Dictionary(lower, upper, [])
    quad = dense_grid(dictionary.lower, dictionary.upper)
    added = []
    for sig in dataset:
        if len(dictionary):
            Phi = evaluate_dictionary(dictionary, sig.points)
            alpha = _ridge_solve(Phi @ Phi.T, Phi @ sig.values, cfg.lam)
            residual = sig.values - alpha @ Phi
        else:
            residual = sig.values.copy()
        sup2 = float(np.max(sig.values**2))
        err = float(np.mean(residual**2)) / sup2 if sup2 > 0 else 0.0
        if err <= cfg.tol:
            continue
        if len(dictionary) >= cfg.max_atoms:
            log.warning("max_atoms=%d reached at realization %d", cfg.max_atoms, sig.id)
            break
        raw = _fit_residual_atom(sig.points, residual, cfg, gen)
        try:
            frozen = freeze_scale(cfg.atom_spec, raw, quad)
        except DegenerateBasis:
            log.warning("residual atom for realization %d is degenerate; skipped", sig.id)
            continue
        dictionary = dictionary.with_atom(BasisFunction.neural(cfg.atom_spec, frozen))
        added.append(sig.id)
    return dictionary, added


def gram_report(dictionary: Dictionary, quadrature_points) -> np.ndarray:
    """Normalized inner products ``<psi_i, psi_j> / (|psi_i| |psi_j|)``."""
    Phi = evaluate_dictionary(dictionary, quadrature_points)
    G = Phi @ Phi.T / Phi.shape[1]
    norms = np.sqrt(np.diag(G))
    if np.any(norms**2 < 1e-24):
        raise DegenerateBasis("an atom has numerically zero norm on the quadrature points")
    G = G / np.outer(norms, norms)
    np.fill_diagonal(G, 1.0)
    return G
