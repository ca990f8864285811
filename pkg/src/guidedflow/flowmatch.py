"""Rectified-flow training and Euler sampling for observation-conditioned
action series, with optional additive guidance from a gradient field."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericError, ShapeError
from .mazeworld import DemoSet, Observation
from .nnet import AdamState, adam_step, backward_batch, forward_batch

log = logging.getLogger(__name__)

GuidanceProvider = Callable[[np.ndarray], np.ndarray]


@dataclass
class TrainSample:
    obs: Observation
    target: np.ndarray
    source: np.ndarray
    t: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"t={self.t} outside [0, 1]")


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    prior_std: float = 1.0
    loss_weighting: str = "uniform"


@dataclass
class InferenceConfig:
    steps: int = 5
    guidance_weight: float = 0.8
    seed: int = 0
    guidance_from: int = 0
    prior_std: float = 1.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.guidance_weight < 0:
            raise ValueError("guidance weight must be non-negative")


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def interpolate_state(source, target, t):
    """Point on the straight path from ``source`` (t=0) to ``target`` (t=1)."""
    source, target = _same_shape(source, target)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    return (1.0 - t) * source + t * target


def target_field(source, target):
    """Conditional velocity of the straight path; constant in t."""
    source, target = _same_shape(source, target)
    return target - source


def _loss_on_arrays(net, states, t, obs, u, weighting="uniform"):
    out, cache = forward_batch(net, states, t, obs)
    res = out - u
    if weighting == "endpoint":
        # (1 - t) * velocity error == endpoint error for endpoint-parameterized nets
        res = res * np.maximum(1.0 - t, net.endpoint_floor)[:, None]
    B = states.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.sum(res * res) / B)
    if not np.isfinite(loss):
        raise NumericError("non-finite flow matching loss")
    up = (2.0 / B) * res
    if weighting == "endpoint":
        up = up * np.maximum(1.0 - t, net.endpoint_floor)[:, None]
    grads = backward_batch(net, cache, up)
    return loss, grads


def fm_loss_and_grads(net, batch):
    """Mean squared velocity error over a batch of ``TrainSample`` and its exact gradient."""
    if not batch:
        raise ValueError("empty batch")
    src = np.stack([np.ravel(s.source) for s in batch])
    tgt = np.stack([np.ravel(s.target) for s in batch])
    t = np.array([s.t for s in batch])
    obs = np.stack([s.obs.vector() for s in batch])
    states = (1.0 - t)[:, None] * src + t[:, None] * tgt
    return _loss_on_arrays(net, states, t, obs, tgt - src)


def train(net, demos, config=None, rng_seed=0, callback=None):
    """Fit ``net`` by flow matching on demonstrations.

    ``demos`` is a ``DemoSet`` or a pair ``(obs, targets)`` of normalized
    arrays. One epoch visits every demonstration once in minibatches of
    ``batch_size``; each visit draws a fresh ``t ~ U[0, 1]`` and prior sample.
    When there are fewer demos than ``batch_size`` the permutation is cycled
    to fill one batch.

    Returns the trained network and the per-epoch mean loss.
    """
    config = config or TrainConfig()
    if isinstance(demos, DemoSet):
        obs, targets = demos.training_arrays()
    else:
        obs, targets = demos
    obs = np.asarray(obs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).reshape(len(obs), -1)
    n = len(obs)
    if n == 0:
        raise ValueError("no demonstrations to train on")
    if targets.shape[1] != net.action_dim:
        raise ShapeError(f"demo action dim {targets.shape[1]} != net output {net.action_dim}")

    rng = np.random.default_rng(rng_seed)
    state = AdamState(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    params = net.parameters()
    B = config.batch_size
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        if n < B:
            order = np.resize(order, B)
        epoch_losses = []
        for lo in range(0, len(order), B):
            idx = order[lo:lo + B]
            k = len(idx)
            t = rng.uniform(0.0, 1.0, size=k)
            src = config.prior_std * rng.standard_normal((k, net.action_dim))
            tgt = targets[idx]
            states = (1.0 - t)[:, None] * src + t[:, None] * tgt
            try:
                loss, grads = _loss_on_arrays(net, states, t, obs[idx], tgt - src,
                                              config.loss_weighting)
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
            params, state = adam_step(state, params, grads.as_list())
            net = net.with_parameters(params)
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
        if callback is not None:
            callback(epoch, losses[-1])
    return net, np.array(losses)


def _prior(net, rng, action_dim, std):
    if net.action_dim % action_dim:
        raise ShapeError("net output is not a whole number of waypoints")
    return std * rng.standard_normal((net.action_dim // action_dim, action_dim))


def _velocity(net, A, t, o):
    out, _ = forward_batch(net, A.reshape(1, -1), t, o[None, :])
    return out[0].reshape(A.shape)


def sample_plain(net, o, config=None, rng=None, action_dim=2, source=None):
    """Explicit Euler integration of the learned field from a prior draw."""
    return sample_guided(net, o, _with_weight(config, 0.0), None, rng, action_dim, source)


def _with_weight(config, weight):
    config = config or InferenceConfig()
    return InferenceConfig(config.steps, weight, config.seed, config.guidance_from,
                           config.prior_std)


def sample_guided(net, o, config=None, field=None, rng=None, action_dim=2, source=None):
    """Euler integration of ``v(A, t; o) + weight * field(A)`` over ``steps`` uniform steps.

    The field is evaluated at every step from ``guidance_from`` on. A zero
    weight skips the field entirely, so the result matches ``sample_plain``
    bit for bit.
    """
    config = config or InferenceConfig()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    ov = o.vector() if isinstance(o, Observation) else np.asarray(o, dtype=np.float64)
    A = _prior(net, rng, action_dim, config.prior_std) if source is None else np.array(source, dtype=np.float64)
    lam = config.guidance_weight
    if lam > 0 and field is None:
        raise ValueError("guided sampling needs a guidance field")
    dt = 1.0 / config.steps
    for i in range(config.steps):
        t = i * dt
        try:
            v = _velocity(net, A, t, ov)
        except NumericError as exc:
            raise NumericError(f"step {i}: {exc}") from exc
        if lam > 0 and i >= config.guidance_from:
            g = np.asarray(field(A), dtype=np.float64)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"step {i}: non-finite guidance gradient")
            v = v + lam * g
        A = A + v * dt
        if not np.all(np.isfinite(A)):
            raise NumericError(f"non-finite state at step {i}")
    return A
