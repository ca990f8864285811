"""Dense MLP with hand-written reverse mode and an Adam optimizer.

The network predicts a velocity for a flattened action series, conditioned on
an observation vector and a scalar flow time ``t``. Inputs are laid out as
``[action_flat, obs, time_embedding(t)]``. Everything is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh")
PARAMETERIZATIONS = ("velocity", "endpoint")


def time_embedding(t, time_features):
    """Raw ``t`` followed by sin/cos pairs at angular frequencies pi * 2**k.

    Parameters
    ----------
    t : float or array of shape (B,)
    time_features : int
        Number of frequencies (k = 0 .. time_features - 1).

    Returns
    -------
    ndarray of shape (B, 1 + 2 * time_features)
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    cols = [t]
    for k in range(time_features):
        w = np.pi * 2.0**k
        cols.append(np.sin(w * t))
        cols.append(np.cos(w * t))
    return np.stack(cols, axis=1)


@dataclass
class VectorFieldNet:
    """Conditioned MLP ``v(A, t; o)``.

    ``weights[i]`` has shape ``(layer_dims[i+1], layer_dims[i])``; hidden
    layers use ``activation``, the output layer is linear.

    With ``skip`` set (a vector over the time embedding), the output gains a
    time-gated linear term ``(time_embedding(t) @ skip) * A``. A plain MLP
    has a hard time passing the noisy action input through to the output
    with a t-dependent gain; the skip term carries that part directly.

    ``parameterization="endpoint"`` reads the MLP output ``D`` as a guess of
    the clean series and returns the velocity ``(D - A) / max(1 - t, floor)``.
    The default ``"velocity"`` returns the MLP output as is.
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    time_features: int = 4
    skip: np.ndarray | None = None
    parameterization: str = "velocity"
    endpoint_floor: float = 0.05

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        if not 0.0 < self.endpoint_floor <= 1.0:
            raise ValueError("endpoint_floor must lie in (0, 1]")
        if len(self.layer_dims) < 2:
            raise ShapeError("need at least an input and an output layer")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("layer count does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[i + 1], self.layer_dims[i]):
                raise ShapeError(f"layer {i}: weight shape {w.shape} does not compose")
            if b.shape != (self.layer_dims[i + 1],):
                raise ShapeError(f"layer {i}: bias shape {b.shape}")
        if self.obs_dim < 0:
            raise ShapeError("input layer too small for action + time embedding")
        if self.skip is not None and np.shape(self.skip) != (self.time_dim,):
            raise ShapeError(f"skip gain shape {np.shape(self.skip)} != ({self.time_dim},)")

    @property
    def action_dim(self):
        return self.layer_dims[-1]

    @property
    def time_dim(self):
        return 1 + 2 * self.time_features

    @property
    def obs_dim(self):
        return self.layer_dims[0] - self.action_dim - self.time_dim

    @classmethod
    def create(cls, action_dim, obs_dim, hidden=(256, 256, 256), activation="relu",
               time_features=4, seed=0, action_skip=False, parameterization="velocity"):
        """Randomly initialised network (Kaiming for relu, Xavier for tanh, zero biases)."""
        dims = [action_dim + obs_dim + 1 + 2 * time_features, *hidden, action_dim]
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            if activation == "relu":
                std = np.sqrt(2.0 / fan_in)
            else:
                std = np.sqrt(2.0 / (fan_in + fan_out))
            weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        skip = np.zeros(1 + 2 * time_features) if action_skip else None
        return cls(dims, weights, biases, activation, time_features, skip, parameterization)

    @classmethod
    def zeros(cls, layer_dims, activation="relu", time_features=4, action_skip=False):
        weights = [np.zeros((o, i)) for i, o in zip(layer_dims[:-1], layer_dims[1:])]
        biases = [np.zeros(o) for o in layer_dims[1:]]
        skip = np.zeros(1 + 2 * time_features) if action_skip else None
        return cls(list(layer_dims), weights, biases, activation, time_features, skip)

    def parameters(self):
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..., then skip if present."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        if self.skip is not None:
            out.append(self.skip)
        return out

    def with_parameters(self, params):
        n = 2 * len(self.weights)
        skip = params[n] if self.skip is not None else None
        return VectorFieldNet(list(self.layer_dims), list(params[0:n:2]), list(params[1:n:2]),
                              self.activation, self.time_features, skip,
                              self.parameterization, self.endpoint_floor)

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters())

    def copy(self):
        return self.with_parameters([p.copy() for p in self.parameters()])


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    skip: np.ndarray | None = None

    def as_list(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        if self.skip is not None:
            out.append(self.skip)
        return out


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epsilon <= 0.0:
            raise ValueError("Adam epsilon must be positive")


def _act(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(kind, z, h):
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - h * h


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite value in {what}")


def assemble_input(net, A, t, obs):
    """Stack batched inputs into the ``(B, layer_dims[0])`` network input."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    B = A.shape[0]
    if A.shape[1] != net.action_dim:
        raise ShapeError(f"action dim {A.shape[1]} != {net.action_dim}")
    if obs.shape[1] != net.obs_dim:
        raise ShapeError(f"obs dim {obs.shape[1]} != {net.obs_dim}")
    if obs.shape[0] == 1 and B > 1:
        obs = np.broadcast_to(obs, (B, obs.shape[1]))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    if obs.shape[0] != B:
        raise ShapeError("batch sizes of actions and observations differ")
    return np.concatenate([A, obs, time_embedding(t, net.time_features)], axis=1)


def forward_batch(net, A, t, obs):
    """Batched forward pass. Returns ``(output, cache)`` for ``backward_batch``."""
    h = assemble_input(net, A, t, obs)
    _check_finite(h, "network input")
    A = h[:, :net.action_dim]
    emb = h[:, net.layer_dims[0] - net.time_dim:]
    pre, post = [], [h]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        if i < last:
            h = _act(net.activation, z)
        else:
            h = z
        _check_finite(h, f"layer {i} output")
        pre.append(z)
        post.append(h)
    if net.skip is not None:
        h = h + (emb @ net.skip)[:, None] * A
    if net.parameterization == "endpoint":
        h = (h - A) / _endpoint_denominator(net, emb)[:, None]
    _check_finite(h, "network output")
    return h, (pre, post)


def _endpoint_denominator(net, emb):
    return np.maximum(1.0 - emb[:, 0], net.endpoint_floor)


def backward_batch(net, cache, upstream):
    """Gradient of ``sum(upstream * output)`` with respect to every parameter."""
    pre, post = cache
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != post[-1].shape:
        raise ShapeError(f"upstream shape {g.shape} != output shape {post[-1].shape}")
    A = post[0][:, :net.action_dim]
    emb = post[0][:, net.layer_dims[0] - net.time_dim:]
    if net.parameterization == "endpoint":
        g = g / _endpoint_denominator(net, emb)[:, None]
    dskip = None
    if net.skip is not None:
        dskip = emb.T @ np.einsum("bi,bi->b", g, A)
    n = len(net.weights)
    dW, db = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            g = g * _act_grad(net.activation, pre[i], post[i + 1])
        dW[i] = g.T @ post[i]
        db[i] = g.sum(axis=0)
        if i > 0:
            g = g @ net.weights[i]
    return Gradients(dW, db, dskip)


def net_forward(net, A_flat, t, o):
    """Single-sample forward pass: predicted velocity for the flattened series."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    A_flat = np.asarray(A_flat, dtype=np.float64)
    if A_flat.ndim != 1:
        raise ShapeError("net_forward expects a flat action vector")
    out, _ = forward_batch(net, A_flat[None, :], t, np.asarray(o, dtype=np.float64)[None, :])
    return out[0]


def net_backward(net, A_flat, t, o, upstream):
    A_flat = np.asarray(A_flat, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (net.action_dim,):
        raise ShapeError(f"upstream dim {upstream.shape} != ({net.action_dim},)")
    _, cache = forward_batch(net, A_flat[None, :], t, np.asarray(o, dtype=np.float64)[None, :])
    return backward_batch(net, cache, upstream[None, :])


def adam_step(state, params, grads):
    """One bias-corrected Adam update.

    Returns ``(new_params, new_state)``; inputs are not modified.
    """
    if len(params) != len(grads):
        raise ShapeError("params and grads have different lengths")
    m_prev = state.first_moment or [np.zeros_like(p) for p in params]
    v_prev = state.second_moment or [np.zeros_like(p) for p in params]
    if len(m_prev) != len(params):
        raise ShapeError("optimizer state does not match parameters")
    step = state.step + 1
    c1 = 1.0 - state.beta1**step
    c2 = 1.0 - state.beta2**step
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, m_prev, v_prev):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError(f"shape mismatch {p.shape} vs {g.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_params.append(p - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(state.learning_rate, state.beta1, state.beta2, state.epsilon,
                          step, new_m, new_v)
    return new_params, new_state
