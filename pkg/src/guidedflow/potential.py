"""Density-derived potential and its per-waypoint gradient field.

The potential of a single action is ``min(log p(a), cap) + alpha * d(a, H)``
where ``H`` is the set of KDE points whose own log-density clears a quantile
threshold and ``alpha < 0``. The guidance field for an action series is that
gradient evaluated row by row.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scipy.spatial import cKDTree

from .density import (KdeModel, grad_from_terms, kernel_log_terms, log_density_from_terms,
                      log_density_many)
from .errors import NumericError


@dataclass(frozen=True)
class SafeSet:
    anchors: np.ndarray  # (K, d)
    threshold: float
    quantile: float

    def __post_init__(self):
        anchors = np.atleast_2d(np.asarray(self.anchors, dtype=np.float64))
        if anchors.shape[0] < 1:
            raise ValueError("safe set is empty")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "_tree", cKDTree(anchors))


@dataclass(frozen=True)
class PotentialField:
    kde: KdeModel
    safe: SafeSet
    alpha: float = -1.0
    cap: float = np.inf

    def __post_init__(self):
        if not self.alpha < 0:
            raise ValueError("alpha must be negative")

    def __call__(self, A):
        return field_over_series(self, A)


def quantile_threshold(values, q):
    """Value at sorted index ``floor(q * n)``: the lowest ``floor(q * n)``
    values fall strictly below it (ties aside)."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    k = min(int(np.floor(q * len(v))), len(v) - 1)
    return float(v[k])


def build_safe_set(kde, quantile=0.05):
    if not 0.0 < quantile < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    dens = log_density_many(kde, kde.points)
    thr = quantile_threshold(dens, quantile)
    keep = dens >= thr
    if not keep.any():
        raise ValueError("no KDE point reaches the safe-set threshold")
    return SafeSet(kde.points[keep], thr, quantile)


def build_field(kde, quantile=0.05, alpha=-1.0, cap="threshold"):
    """Safe set plus potential field. ``cap`` is ``"threshold"``, a float, or ``inf``."""
    safe = build_safe_set(kde, quantile)
    cap_value = safe.threshold if cap == "threshold" else float(cap)
    return PotentialField(kde, safe, float(alpha), cap_value)


def _check(a):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if not np.all(np.isfinite(a)):
        raise NumericError("potential queried at a non-finite point")
    return a


def nearest_anchors(safe, a):
    """Distances and nearest anchors for each row of ``a``."""
    a = _check(a)
    _, idx = safe._tree.query(a)
    nearest = safe.anchors[idx]
    return np.sqrt(np.sum((a - nearest) ** 2, axis=1)), nearest


def distance_to_safe(safe, a):
    dist, nearest = nearest_anchors(safe, a)
    return float(dist[0]), nearest[0]


def potential(field, a):
    a = _check(a)
    ld = log_density_many(field.kde, a)[0]
    dist, _ = nearest_anchors(field.safe, a)
    return float(min(ld, field.cap) + field.alpha * dist[0])


def field_over_series(field, A):
    """Row-wise potential gradient for an ``(T, d)`` action series."""
    A = _check(A)
    logk = kernel_log_terms(field.kde, A)
    ld = log_density_from_terms(field.kde, logk)
    g = grad_from_terms(field.kde, logk, A)
    g[ld > field.cap] = 0.0
    dist, nearest = nearest_anchors(field.safe, A)
    away = dist > 0.0
    g[away] += field.alpha * (A[away] - nearest[away]) / dist[away, None]
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite guidance gradient")
    return g


def potential_gradient(field, a):
    return field_over_series(field, np.asarray(a, dtype=np.float64)[None, :])[0]
