"""Numerically stable distribution arithmetic.

Logit vectors and probability distributions are 1-D float64 numpy arrays
over a shared vocabulary. All divergences use natural logarithms, so the
Jensen-Shannon divergence is bounded by ln 2. The log base is fixed here
(and stamped into trace headers) because the downstream clip-to-[0,1] of
divergence differences makes the base observable.

All functions are pure; inputs are never mutated.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import DimensionError, NonFiniteError

# Natural log everywhere; JS(p, q) <= ln 2.
DIVERGENCE_LOG_BASE = "e"
LN2 = float(np.log(2.0))

# Probability vectors must renormalize to 1 within this absolute tolerance.
PROB_SUM_ATOL = 1e-9


def as_logits(values: Iterable[float] | np.ndarray) -> np.ndarray:
    """Coerce to a finite 1-D float64 logit vector.

    Raises NonFiniteError naming the first offending index if any entry
    is NaN or infinite.
    """
    z = np.asarray(values, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise DimensionError(f"expected a non-empty 1-D vector, got shape {z.shape}")
    bad = np.flatnonzero(~np.isfinite(z))
    if bad.size:
        i = int(bad[0])
        raise NonFiniteError(f"non-finite logit at index {i}: {z[i]!r}")
    return z


def as_prob_dist(values: Iterable[float] | np.ndarray) -> np.ndarray:
    """Coerce to a valid probability vector (entries >= 0, sum == 1)."""
    p = np.asarray(values, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise DimensionError(f"expected a non-empty 1-D vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("probability vector contains NaN or infinity")
    if np.any(p < 0):
        i = int(np.flatnonzero(p < 0)[0])
        raise ValueError(f"negative probability at index {i}: {p[i]!r}")
    total = float(p.sum())
    if abs(total - 1.0) > PROB_SUM_ATOL:
        raise ValueError(f"probabilities sum to {total!r}, expected 1 within {PROB_SUM_ATOL}")
    return p


def softmax(logits: Iterable[float] | np.ndarray) -> np.ndarray:
    """Softmax with max-subtraction, invariant to constant shifts."""
    z = as_logits(logits)
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


def _masked_kl(p: np.ndarray, q: np.ndarray) -> float:
    # 0 * log(0/x) := 0; p_i > 0 with q_i == 0 yields +inf.
    mask = p > 0.0
    pm = p[mask]
    with np.errstate(divide="ignore"):
        terms = pm * np.log(pm / q[mask])
    return float(terms.sum())


def kl_divergence(p: Iterable[float] | np.ndarray, q: Iterable[float] | np.ndarray) -> float:
    """KL(p || q) in nats. Returns +inf where q lacks mass that p has."""
    p = as_prob_dist(p)
    q = as_prob_dist(q)
    if p.shape != q.shape:
        raise DimensionError(f"length mismatch: {p.size} vs {q.size}")
    return _masked_kl(p, q)


def js_divergence(p: Iterable[float] | np.ndarray, q: Iterable[float] | np.ndarray) -> float:
    """Jensen-Shannon divergence in nats: JS(p||q) in [0, ln 2].

    JS = (KL(p||m) + KL(q||m)) / 2 with m = (p + q) / 2. The mixture
    dominates both inputs, so the result is always finite.
    """
    p = as_prob_dist(p)
    q = as_prob_dist(q)
    if p.shape != q.shape:
        raise DimensionError(f"length mismatch: {p.size} vs {q.size}")
    m = 0.5 * (p + q)
    return 0.5 * _masked_kl(p, m) + 0.5 * _masked_kl(q, m)
