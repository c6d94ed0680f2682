"""Dense linear algebra, seeded random streams and the Adam optimizer.

Everything here is small and deterministic: the matrices we factor are
dictionary-sized kernels (tens of rows) or snapshot matrices of a few
thousand entries, so LAPACK through numpy/scipy is used directly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .errors import ConvergenceFailure, NaNGradient, NotPositiveDefinite

__all__ = [
    "RngState",
    "as_generator",
    "solve_spd",
    "cholesky_jittered",
    "svd_thin",
    "AdamState",
    "adam_init",
    "adam_step",
    "sample_standard_normal",
    "finite_diff_grad",
]

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngState:
    """A (seed, stream) pair naming one counter-based Philox stream.

    The pair is used verbatim as the 128-bit Philox key, so the sample
    sequence depends on nothing but these two integers.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RngState":
        """Independent sub-stream, e.g. one per realization id."""
        return RngState(self.seed, _splitmix64((self.stream * 0x100000001B3) ^ (index + 1)))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngState, a Generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngState):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngState(int(rng)).generator()
    raise TypeError(f"cannot build a random generator from {type(rng).__name__}")


def solve_spd(A, B, jitter=0.0, max_escalations=3):
    """Solve ``(A + jitter*I) X = B`` for symmetric positive definite ``A``.

    If the Cholesky factorization fails, a diagonal shift starting at
    ``max(jitter, 1e-12)`` is retried with tenfold growth, at most
    ``max_escalations`` times.

    Raises
    ------
    NotPositiveDefinite
        When every shift fails, which usually means a rank-deficient
        dictionary projected without ridge regularization.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    n = A.shape[0]
    shift = float(jitter)
    eye = np.eye(n)
    for attempt in range(max_escalations + 1):
        try:
            c, low = scipy.linalg.cho_factor(A + shift * eye, lower=True, check_finite=True)
            # round-off lets cho_factor pass singular matrices with tiny pivots
            d = np.abs(np.diag(c))
            if n and (d.min() / d.max()) ** 2 < n * np.finfo(float).eps:
                raise np.linalg.LinAlgError("numerically singular")
            return scipy.linalg.cho_solve((c, low), B, check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            shift = max(shift, 1e-12) if attempt == 0 else shift * 10.0
    raise NotPositiveDefinite(
        f"Cholesky failed for {n}x{n} matrix after {max_escalations} jitter escalations (last shift {shift / 10:.1e})"
    )


def cholesky_jittered(A, jitter=0.0, max_escalations=3):
    """Lower Cholesky factor of ``A + shift*I`` with the same escalation rule as :func:`solve_spd`.

    Returns ``(L, shift)``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    shift = float(jitter)
    for attempt in range(max_escalations + 1):
        try:
            return np.linalg.cholesky(A + shift * np.eye(n)), shift
        except np.linalg.LinAlgError:
            shift = max(shift, 1e-12) if attempt == 0 else shift * 10.0
    raise NotPositiveDefinite(f"Cholesky failed for {n}x{n} matrix after {max_escalations} jitter escalations")


def svd_thin(A, rank=None):
    """Thin SVD truncated to ``rank`` terms.

    Returns
    -------
    U : (m, rank) ndarray
    s : (rank,) ndarray, non-increasing
    V : (n, rank) ndarray
        So that ``A ~= U @ diag(s) @ V.T``.
    """
    A = np.asarray(A, dtype=float)
    k = min(A.shape)
    rank = k if rank is None else int(rank)
    if not 0 <= rank <= k:
        raise ValueError(f"rank {rank} outside [0, {k}]")
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return U[:, :rank], s[:rank], Vt[:rank].T


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.eps <= 0 or self.lr <= 0:
            raise ValueError("Adam eps and lr must be positive")


def adam_init(n, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(m=np.zeros(n), v=np.zeros(n), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update. Returns ``(new_state, new_params)``."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads and optimizer moments must share a shape")
    if not np.all(np.isfinite(grads)):
        raise NaNGradient(f"non-finite gradient at Adam step {state.step + 1}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, step=t), new_params


def sample_standard_normal(rng, n):
    if n < 0:
        raise ValueError("n must be non-negative")
    return as_generator(rng).standard_normal(int(n))


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function of a vector."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=float, ndmin=1)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g
