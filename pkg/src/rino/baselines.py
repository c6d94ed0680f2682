"""Gappy POD and predefined (analytic or random) basis sets.

These are the reference points the learned dictionaries are compared
against: gappy POD fills a masked snapshot matrix through an iterated
truncated SVD, while the analytic dictionaries plug straight into
:func:`rino.dictionary.project` like any learned one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .dictionary import BasisFunction, Dictionary, PointCloudSignal, project
from .errors import EmptyColumn, EmptyRow
from .numerics import as_generator, svd_thin

log = logging.getLogger(__name__)

__all__ = [
    "GpodConfig",
    "GpodResult",
    "gpod_reconstruct",
    "gpod_project",
    "make_analytic_dictionary",
    "embedding_consistency_report",
]


@dataclass(frozen=True)
class GpodConfig:
    rank: int = 3
    max_iters: int = 2000
    conv_tol: float = 1e-10
    ridge: float = 1e-10
    rank_schedule: str = "fixed"

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.rank_schedule not in ("fixed", "grow"):
            raise ValueError("rank_schedule must be 'fixed' or 'grow'")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class GpodResult:
    filled: np.ndarray
    modes: np.ndarray
    objective: list
    converged: bool
    iterations: int


def _row_fit(modes, values, observed, ridge):
    """Ridge least-squares coefficients of each row's observed entries on ``modes`` (M, r)."""
    w = observed.astype(float)
    G = np.einsum("nm,mk,ml->nkl", w, modes, modes) + ridge * np.eye(modes.shape[1])
    rhs = np.where(observed, values, 0.0) @ modes
    return np.linalg.solve(G, rhs[..., None])[..., 0]


def gpod_reconstruct(data, mask, cfg: GpodConfig) -> GpodResult:
    """Fill the masked entries of ``data`` by iterated gappy POD.

    Masked entries start at the column mean of the observed entries. Each
    iteration takes the rank-``k`` SVD of the current filled matrix, fits
    every row's observed entries onto the ``k`` modes, and overwrites only
    the masked entries with that fit. With ``rank_schedule="fixed"`` the
    rank is ``cfg.rank`` throughout; with ``"grow"`` it starts at 1 and is
    raised by one each time the relative change of the masked entries
    drops below ``cfg.conv_tol``. The fixed schedule is the plain
    Everson-Sirovich iteration and is the one that breaks down when too
    few entries per column survive; growing the rank is markedly more
    robust.

    Parameters
    ----------
    data : (N, M) array
        Values at masked positions are ignored.
    mask : (N, M) bool array
        True where an entry is missing.

    Returns
    -------
    GpodResult
        ``objective`` holds the squared Frobenius misfit on observed
        entries after every iteration; ``converged`` is False when
        ``max_iters`` ran out first.
    """
    X = np.asarray(data, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if X.shape != mask.shape or X.ndim != 2:
        raise ValueError("data and mask must be matrices of equal shape")
    observed = ~mask
    if np.any(observed.sum(axis=1) == 0):
        raise EmptyRow("a row has no observed entries")
    if np.any(observed.sum(axis=0) == 0):
        raise EmptyColumn("a column has no observed entries")
    if cfg.rank > min(X.shape):
        raise ValueError(f"rank {cfg.rank} exceeds matrix dimensions {X.shape}")

    col_mean = np.where(observed, X, 0.0).sum(axis=0) / observed.sum(axis=0)
    Z = np.where(observed, X, col_mean[None, :])
    objective = []
    k = 1 if cfg.rank_schedule == "grow" else cfg.rank
    converged = False
    it = 0
    modes = None
    for it in range(1, cfg.max_iters + 1):
        _, _, modes = svd_thin(Z, k)
        coeffs = _row_fit(modes, X, observed, cfg.ridge)
        fit = coeffs @ modes.T
        objective.append(float(np.sum(np.where(observed, X - fit, 0.0) ** 2)))
        old = Z[mask]
        Z[mask] = fit[mask]
        change = np.linalg.norm(Z[mask] - old) / max(np.linalg.norm(Z[mask]), 1e-300) if mask.any() else 0.0
        if change < cfg.conv_tol:
            if k == cfg.rank:
                converged = True
                break
            k += 1
    if not converged:
        log.warning("gappy POD stopped after %d iterations without converging", it)
    # the last refill may have moved the masked entries; report modes of the final matrix
    _, _, modes = svd_thin(Z, cfg.rank)
    return GpodResult(filled=Z, modes=modes, objective=objective, converged=converged, iterations=it)


def gpod_project(modes, data, mask, ridge=1e-10):
    """Reconstruct unseen rows from their observed entries with fixed POD modes."""
    X = np.asarray(data, dtype=float)
    observed = ~np.asarray(mask, dtype=bool)
    if np.any(observed.sum(axis=1) == 0):
        raise EmptyRow("a row has no observed entries")
    return _row_fit(modes, X, observed, ridge) @ modes.T


def make_analytic_dictionary(kind, Q, rng=None, lower=0.0, upper=1.0) -> Dictionary:
    """A 1-D dictionary of ``Q`` predefined atoms on ``[lower, upper]``.

    ``random_cosine``  ``cos(w x + b)`` with ``w ~ N(0, (2 pi)^2)``, ``b ~ U[0, 2 pi]``
    ``random_relu``    1-20-1 ReLU nets, weights ``N(0, 1)``, biases ``U[-1, 1]``
    ``monomial``       ``x^0 .. x^(Q-1)``
    ``legendre``       ``P_0 .. P_(Q-1)`` of the argument mapped to [-1, 1]
    """
    if Q < 1:
        raise ValueError("Q must be >= 1")
    atoms = []
    if kind == "random_cosine":
        gen = as_generator(0 if rng is None else rng)
        w = gen.normal(0.0, 2.0 * np.pi, size=Q)
        b = gen.uniform(0.0, 2.0 * np.pi, size=Q)
        atoms = [BasisFunction.analytic("cosine", w=[float(w[q])], b=float(b[q])) for q in range(Q)]
    elif kind == "random_relu":
        gen = as_generator(0 if rng is None else rng)
        for _ in range(Q):
            W1 = gen.standard_normal((20, 1))
            b1 = gen.uniform(-1.0, 1.0, size=20)
            W2 = gen.standard_normal(20)
            b2 = float(gen.uniform(-1.0, 1.0))
            atoms.append(BasisFunction.analytic("relu_feature", W1=W1.tolist(), b1=b1.tolist(), W2=W2.tolist(), b2=b2))
    elif kind == "monomial":
        atoms = [BasisFunction.analytic("monomial", degree=q) for q in range(Q)]
    elif kind == "legendre":
        atoms = [BasisFunction.analytic("legendre", degree=q, lower=float(lower), upper=float(upper)) for q in range(Q)]
    else:
        raise ValueError(f"unknown analytic dictionary kind {kind!r}")
    return Dictionary([lower], [upper], atoms)


def embedding_consistency_report(dictionary: Dictionary, signal: PointCloudSignal, n_trials=5, keep_fraction=0.5, rng=None, lam=1e-4):
    """Spread of a signal's embedding under random subsamplings.

    Each trial keeps ``round(keep_fraction * M)`` points chosen without
    replacement and projects them. The returned dict is JSON-ready:

    ``coeffs``       (n_trials, Q) coefficient vectors
    ``std``          per-coefficient standard deviation across trials
    ``rel_max_dev``  largest pairwise L2 distance between coefficient
                     vectors over the norm of their mean
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    gen = as_generator(0 if rng is None else rng)
    m = len(signal)
    keep = max(1, int(round(keep_fraction * m)))
    rows = []
    for _ in range(int(n_trials)):
        idx = np.sort(gen.choice(m, size=keep, replace=False))
        sub = PointCloudSignal(signal.points[idx], signal.values[idx], signal.id)
        rows.append(project(dictionary, sub, lam).coeffs)
    C = np.array(rows)
    max_dev = max((np.linalg.norm(a - b) for a, b in combinations(C, 2)), default=0.0)
    ref = float(np.linalg.norm(C.mean(axis=0)))
    return {
        "coeffs": C.tolist(),
        "std": C.std(axis=0).tolist(),
        "rel_max_dev": float(max_dev / ref) if ref > 0 else 0.0,
    }
