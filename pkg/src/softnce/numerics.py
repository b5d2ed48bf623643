"""Dense numeric kernel: stable reductions and seeded random sources.

Matrices are plain float64 numpy arrays. Random sources are numpy
``Generator`` objects backed by the counter-based Philox bit generator,
always created from an explicit seed; there is no module-level RNG.
"""

from __future__ import annotations

import numpy as np
from scipy import special

RandomSource = np.random.Generator

xlogy = special.xlogy


def make_rng(seed: int) -> RandomSource:
    """Return a Philox-backed generator for a non-negative integer seed."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.Philox(seed))


def child_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent 64-bit seeds from a parent seed."""
    ss = np.random.SeedSequence(int(seed))
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in ss.spawn(n)]


def as_real(a) -> np.ndarray:
    """float64 array, except that extended precision input stays extended."""
    a = np.asarray(a)
    return a if a.dtype == np.longdouble else a.astype(np.float64, copy=False)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _checked(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite input")
    return v


def log_sum_exp(v, axis: int | None = None):
    """log(sum(exp(v))), stabilized by max subtraction.

    Reduces everything when ``axis`` is None and returns a float.
    """
    out = special.logsumexp(_checked(v), axis=axis)
    return float(out) if axis is None else out


def log_softmax(v, axis: int = -1) -> np.ndarray:
    return special.log_softmax(_checked(v), axis=axis)


def softmax(v, axis: int = -1) -> np.ndarray:
    return special.softmax(_checked(v), axis=axis)


def softmax_rows_with_lse(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise softmax and log-sum-exp of a finite 2-D array in one pass."""
    m = a.max(axis=1, keepdims=True)
    e = a - m
    np.exp(e, out=e)
    z = e.sum(axis=1, keepdims=True)
    e /= z
    return e, (np.log(z) + m)[:, 0]


def log_sum_exp_relative(a: np.ndarray, pos: np.ndarray, weights=None) -> np.ndarray:
    """Row-wise ``log(sum_j w_j exp(a_j)) - a[pos]`` without cancellation.

    When the chosen entry is the row maximum the result is formed as
    ``log1p`` of the remaining mass, which stays accurate when it is tiny.
    Weights are positive integers (row multiplicities) and must be at least
    one at ``pos``.
    """
    idx = np.arange(a.shape[0])
    b = a - a[idx, pos][:, None]
    w = np.ones_like(b) if weights is None else np.broadcast_to(weights, b.shape)
    out = np.empty(a.shape[0], dtype=a.dtype)
    safe = b.max(axis=1) <= 0.0
    if np.any(safe):
        e = w[safe] * np.exp(b[safe])
        e[np.arange(e.shape[0]), pos[safe]] -= 1.0
        out[safe] = np.log1p(e.sum(axis=1))
    if not np.all(safe):
        bb = b[~safe]
        m = bb.max(axis=1, keepdims=True)
        out[~safe] = np.log(np.sum(w[~safe] * np.exp(bb - m), axis=1)) + m[:, 0]
    return out


def sample_standard_normal(rng: RandomSource, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be positive")
    return rng.standard_normal(n)


def sample_categorical(rng: RandomSource, probs: np.ndarray) -> np.ndarray:
    """One draw per row of a row-stochastic matrix, by inverse CDF."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)
