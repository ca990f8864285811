"""Gaussian kernel density estimate with a stable log-density and its gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import NumericError, ShapeError
from .mazeworld import DemoSet

LOG_FLOOR = -745.0


@dataclass(frozen=True)
class KdeModel:
    points: np.ndarray  # (M, d)
    bandwidth: float
    kernel: str = "gaussian"

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        object.__setattr__(self, "points", pts)
        if pts.shape[0] < 1:
            raise ValueError("KDE needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise NumericError("KDE points must be finite")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.kernel != "gaussian":
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        object.__setattr__(self, "sq_norms", np.einsum("md,md->m", pts, pts))

    @property
    def M(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]


def scott_bandwidth(points):
    """Mean per-dimension std times ``M ** (-1 / (d + 4))``."""
    M, d = points.shape
    sigma = float(np.mean(np.std(points, axis=0, ddof=1))) if M > 1 else 1.0
    return sigma * M ** (-1.0 / (d + 4))


def build_kde(points, subsample=3000, bandwidth="scott", seed=0):
    """Fit a KDE on (up to) ``subsample`` points drawn without replacement.

    ``points`` is an ``(n, d)`` array or a ``DemoSet`` (its normalized
    waypoints are used). ``bandwidth`` is ``"scott"`` or a positive float.
    """
    if isinstance(points, DemoSet):
        points = points.all_waypoints(normalized=True)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] == 0:
        raise ValueError("cannot build a KDE from an empty demo set")
    if points.shape[0] > subsample:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(points.shape[0], size=subsample, replace=False))
        points = points[idx]
    if bandwidth == "scott":
        h = scott_bandwidth(points)
    else:
        h = float(bandwidth)
    return KdeModel(points, h)


def kernel_log_terms(model, a):
    """``-|a - x_i|^2 / (2 h^2)`` for every query row and KDE point, shape ``(Q, M)``."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.shape[1] != model.d:
        raise ShapeError(f"query dim {a.shape[1]} != {model.d}")
    if not np.all(np.isfinite(a)):
        raise NumericError("KDE query must be finite")
    X = model.points
    d2 = np.einsum("qd,qd->q", a, a)[:, None] + model.sq_norms[None, :] - 2.0 * (a @ X.T)
    return -0.5 * np.maximum(d2, 0.0) / model.bandwidth**2


def log_density_from_terms(model, logk):
    h, M, d = model.bandwidth, model.M, model.d
    const = -np.log(M) - d * np.log(h) - 0.5 * d * np.log(2.0 * np.pi)
    return np.maximum(logsumexp(logk, axis=1) + const, LOG_FLOOR)


def grad_from_terms(model, logk, a):
    w = softmax(logk, axis=1)
    return (w @ model.points - np.atleast_2d(a)) / model.bandwidth**2


def log_density_many(model, a):
    """Log-density at each row of ``a``; floored at ``LOG_FLOOR``."""
    return log_density_from_terms(model, kernel_log_terms(model, a))


def grad_log_density_many(model, a):
    """Analytic gradient at each row of ``a``: softmax-weighted pull ``(x_i - a) / h**2``."""
    return grad_from_terms(model, kernel_log_terms(model, a), a)


def log_density(model, a):
    return float(log_density_many(model, np.asarray(a, dtype=np.float64)[None, :])[0])


def grad_log_density(model, a):
    return grad_log_density_many(model, np.asarray(a, dtype=np.float64)[None, :])[0]
