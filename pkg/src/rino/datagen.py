"""Synthetic ground truth: random fields, PDE solvers and sampling masks.

Solvers
-------
``solve_antiderivative``   ds/dx = u, s(0) = 0, cumulative trapezoid
``solve_darcy_1d``         d/dx(-k(s) ds/dx) = u on [0, 1], s = 0 at both ends
``solve_darcy_2d``         div(-k(s) grad s) = u on [0, 1]^2, s = 0 on the boundary
``solve_burgers``          s_t + s s_x = nu s_xx, periodic on [0, 1), t in [0, 1]

with ``k(s) = 0.2 + s**2``. The Darcy problems use conservative second
order finite differences (edge permeability from the edge-midpoint
state) and Newton's method with an exact sparse Jacobian.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from scipy.integrate import cumulative_trapezoid

from . import jsonio
from .dictionary import PointCloudSignal
from .errors import CFLViolation, NewtonDiverged, RangeError, UnsortedGrid
from .numerics import as_generator, cholesky_jittered

__all__ = [
    "GrfConfig",
    "SubsampleConfig",
    "SolverOutput",
    "rbf_kernel",
    "sample_grf",
    "solve_antiderivative",
    "solve_darcy_1d",
    "solve_darcy_2d",
    "solve_burgers",
    "subsample_signal",
    "make_three_basis_dataset",
    "three_basis_functions",
    "mask_matrix",
    "write_dataset",
    "read_dataset",
]


@dataclass(frozen=True)
class GrfConfig:
    length_scale: float
    jitter: float = 1e-10
    periodic: bool = False

    def __post_init__(self):
        if self.length_scale <= 0:
            raise ValueError("length_scale must be positive")


@dataclass(frozen=True)
class SubsampleConfig:
    m_min: int
    m_max: int

    def check(self, m):
        if not (0 < self.m_min <= self.m_max <= m):
            raise RangeError(f"need 0 < m_min <= m_max <= {m}, got [{self.m_min}, {self.m_max}]")


@dataclass
class SolverOutput:
    points: np.ndarray
    values: np.ndarray
    iterations: int = 0
    residual_norms: tuple = ()


def rbf_kernel(X1, X2, length_scale, periodic=False):
    """``exp(-|x1 - x2|^2 / (2 l^2))``.

    With ``periodic=True`` (1-D, unit period) the distance is the chord
    length of the unit-period circle, ``|sin(pi dx)| / pi``, which keeps
    the kernel positive definite.
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=float).T).T
    X2 = np.atleast_2d(np.asarray(X2, dtype=float).T).T
    diff = X1[:, None, :] - X2[None, :, :]
    if periodic:
        diff = np.sin(np.pi * diff) / np.pi
    d2 = np.sum(diff * diff, axis=-1)
    return np.exp(-d2 / (2.0 * length_scale**2))


def sample_grf(points, cfg: GrfConfig, rng, n_samples=None):
    """Zero-mean Gaussian random field draws at ``points``.

    Points are put in lexicographic order before factorizing the
    covariance, so permuting the input permutes the output the same way.
    Returns shape ``(M,)`` or ``(n_samples, M)``.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    if Xs.shape[0] > 1 and np.min(np.max(np.abs(np.diff(Xs, axis=0)), axis=1)) < 1e-12:
        raise ValueError("GRF sample points must be distinct")
    K = rbf_kernel(Xs, Xs, cfg.length_scale, cfg.periodic)
    L, _ = cholesky_jittered(K, cfg.jitter)
    gen = as_generator(rng)
    count = 1 if n_samples is None else int(n_samples)
    Z = gen.standard_normal((count, X.shape[0]))
    sorted_vals = Z @ L.T
    out = np.empty_like(sorted_vals)
    out[:, order] = sorted_vals
    return out[0] if n_samples is None else out


def solve_antiderivative(x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.size < 2 or np.any(np.diff(x) <= 0):
        raise UnsortedGrid("antiderivative grid must be strictly increasing with >= 2 points")
    return cumulative_trapezoid(u, x, initial=0.0)


def _permeability(s):
    return 0.2 + s * s


def _newton_darcy(u, shape, h, edges, interior, tol, max_iter):
    """Newton on ``sum_e k_e (s_i - s_j) / h^2 - u_i = 0`` over interior nodes.

    ``edges`` lists node pairs (i, j) in flat indexing; boundary nodes are
    fixed at zero and do not carry equations.
    """
    n_nodes = int(np.prod(shape))
    s = np.zeros(n_nodes)
    u = np.asarray(u, dtype=float).reshape(-1)
    idx = -np.ones(n_nodes, dtype=int)
    idx[interior] = np.arange(interior.size)
    a, b = edges[:, 0], edges[:, 1]
    inv_h2 = 1.0 / h**2
    history = []
    for it in range(max_iter + 1):
        mid = 0.5 * (s[a] + s[b])
        k = _permeability(mid)
        t = k * (s[a] - s[b]) * inv_h2
        F = np.zeros(n_nodes)
        np.add.at(F, a, t)
        np.add.at(F, b, -t)
        F = F[interior] - u[interior]
        res = float(np.max(np.abs(F))) if F.size else 0.0
        history.append(res)
        if not np.isfinite(res):
            raise NewtonDiverged("Newton iterate became non-finite", residual=res)
        if res <= tol:
            return s, it, tuple(history)
        if it == max_iter:
            break
        # dT/ds_a = k + m (s_a - s_b); dT/ds_b = -k + m (s_a - s_b)
        da = (k + mid * (s[a] - s[b])) * inv_h2
        db = (-k + mid * (s[a] - s[b])) * inv_h2
        rows, cols, vals = [], [], []
        for node, other, d_self, d_other, sign in ((a, b, da, db, 1.0), (b, a, db, da, -1.0)):
            keep = idx[node] >= 0
            rows.append(idx[node][keep])
            cols.append(node[keep])
            vals.append(sign * d_self[keep])
            rows.append(idx[node][keep])
            cols.append(other[keep])
            vals.append(sign * d_other[keep])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        keep = idx[cols] >= 0
        J = scipy.sparse.coo_matrix((vals[keep], (rows[keep], idx[cols[keep]])), shape=(interior.size,) * 2).tocsc()
        ds = scipy.sparse.linalg.spsolve(J, -F)
        s[interior] += ds
    raise NewtonDiverged(f"Newton did not reach {tol:.1e} in {max_iter} iterations (residual {history[-1]:.3e})", residual=history[-1])


def solve_darcy_1d(u, n_nodes=None, tol=1e-10, max_iter=50) -> SolverOutput:
    """Nonlinear 1-D Darcy problem on the uniform grid carrying ``u``."""
    u = np.asarray(u, dtype=float).reshape(-1)
    n = u.size if n_nodes is None else int(n_nodes)
    if n < 3 or u.size != n:
        raise ValueError("need u on a uniform grid of at least 3 nodes")
    x = np.linspace(0.0, 1.0, n)
    edges = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    interior = np.arange(1, n - 1)
    s, it, hist = _newton_darcy(u, (n,), 1.0 / (n - 1), edges, interior, tol, max_iter)
    return SolverOutput(x[:, None], s, it, hist)


def solve_darcy_2d(u, tol=1e-9, max_iter=50) -> SolverOutput:
    """Nonlinear 2-D Darcy problem; ``u`` is ``(n, n)`` indexed ``[ix, iy]``."""
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    if u.shape != (n, n) or n < 5:
        raise ValueError("need u on an n x n grid with n >= 5")
    grid = np.arange(n * n).reshape(n, n)
    edges = np.concatenate(
        [
            np.stack([grid[:-1, :].ravel(), grid[1:, :].ravel()], axis=1),
            np.stack([grid[:, :-1].ravel(), grid[:, 1:].ravel()], axis=1),
        ]
    )
    interior = grid[1:-1, 1:-1].ravel()
    s, it, hist = _newton_darcy(u, (n, n), 1.0 / (n - 1), edges, interior, tol, max_iter)
    x = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return SolverOutput(np.stack([X.ravel(), Y.ravel()], axis=1), s.reshape(n, n), it, hist)


def solve_burgers(u0, nu=0.01, n_times=100, t_final=1.0, substeps=10, linear=False, cfl_max=0.5) -> SolverOutput:
    """Fourier pseudo-spectral viscous Burgers solver.

    ``u0`` is given on ``n + 1`` uniform points of [0, 1] including the
    periodic copy at x = 1. Diffusion is integrated exactly through an
    integrating factor and advection with Heun's method; the quadratic
    term is dealiased with the 2/3 rule. Snapshots are taken at
    ``n_times`` equally spaced times, ``substeps`` steps apart.

    ``linear=True`` replaces ``s s_x`` with ``s_x``.

    Returns values of shape ``(n + 1, n_times)`` indexed ``[x, t]``.
    """
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    if abs(u0[0] - u0[-1]) > 1e-10:
        raise ValueError("initial condition is not periodic (first and last values differ)")
    n = u0.size - 1
    dx = 1.0 / n
    dt = t_final / (n_times - 1) / substeps
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=dx)
    keep = np.arange(k.size) < (n // 3 + 1)
    E = np.exp(-nu * k * k * dt)

    def rhs(vh):
        if linear:
            return -1j * k * vh
        v = np.fft.irfft(vh * keep, n)
        return -1j * k * np.fft.rfft(0.5 * v * v) * keep

    vh = np.fft.rfft(u0[:-1])
    out = np.empty((n + 1, n_times))
    out[:-1, 0] = u0[:-1]
    for j in range(1, n_times):
        for _ in range(substeps):
            speed = 1.0 if linear else float(np.max(np.abs(np.fft.irfft(vh, n))))
            if speed * dt / dx > cfl_max:
                raise CFLViolation(f"advective CFL {speed * dt / dx:.3f} exceeds {cfl_max}")
            n0 = rhs(vh)
            pred = E * (vh + dt * n0)
            vh = E * vh + 0.5 * dt * (E * n0 + rhs(pred))
        out[:-1, j] = np.fft.irfft(vh, n)
    out[-1] = out[0]
    x = np.linspace(0.0, 1.0, n + 1)
    t = np.linspace(0.0, t_final, n_times)
    X, T = np.meshgrid(x, t, indexing="ij")
    return SolverOutput(np.stack([X.ravel(), T.ravel()], axis=1), out, n_times - 1)


def subsample_signal(signal: PointCloudSignal, cfg: SubsampleConfig, rng) -> PointCloudSignal:
    """Keep ``M_rand ~ U{m_min..m_max}`` points, drawn without replacement, in original order."""
    m = len(signal)
    cfg.check(m)
    gen = as_generator(rng)
    count = int(gen.integers(cfg.m_min, cfg.m_max + 1))
    idx = np.sort(gen.choice(m, size=count, replace=False))
    return PointCloudSignal(signal.points[idx], signal.values[idx], signal.id)


def three_basis_functions(x):
    """P_6, cos(3.3 pi .) and 2|.| - 1 evaluated at ``xi = 2x - 1``; shape ``(3, M)``."""
    xi = 2.0 * np.asarray(x, dtype=float) - 1.0
    p6 = np.polynomial.legendre.legval(xi, np.eye(7)[6])
    return np.stack([p6, np.cos(3.3 * np.pi * xi), 2.0 * np.abs(xi) - 1.0])


def make_three_basis_dataset(n, m, rng):
    """``n`` realizations of ``sum_l a_l psi_l`` on ``m`` uniform points of [0, 1].

    Returns ``(x, data, coeffs)`` with ``data`` of shape ``(n, m)`` and the
    standard-normal coefficients ``(n, 3)``.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    x = np.linspace(0.0, 1.0, m)
    coeffs = as_generator(rng).standard_normal((n, 3))
    return x, coeffs @ three_basis_functions(x), coeffs


def mask_matrix(n, m, r_percent, rng):
    """Boolean ``(n, m)`` mask, True where masked; ``round(m R / 100)`` per row."""
    if not 0 <= r_percent < 100:
        raise ValueError("masking percentage must lie in [0, 100)")
    gen = as_generator(rng)
    count = int(round(m * r_percent / 100.0))
    mask = np.zeros((n, m), dtype=bool)
    for i in range(n):
        mask[i, gen.choice(m, size=count, replace=False)] = True
    return mask


def write_dataset(directory, manifest, records):
    """``manifest.json`` plus one JSON record per line in ``data.jsonl``."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        fh.write(jsonio.dumps(manifest))
        fh.write("\n")
    with open(os.path.join(directory, "data.jsonl"), "w") as fh:
        for rec in records:
            fh.write(jsonio.dumps(rec))
            fh.write("\n")


def read_dataset(directory):
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    records = []
    with open(os.path.join(directory, "data.jsonl")) as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return manifest, records
