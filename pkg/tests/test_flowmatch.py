import numpy as np
import pytest
from hypothesis import given, strategies as st

from guidedflow.errors import NumericError, ShapeError
from guidedflow.flowmatch import (InferenceConfig, TrainConfig, TrainSample, fm_loss_and_grads,
                                  interpolate_state, sample_guided, sample_plain, target_field, train)
from guidedflow.mazeworld import Observation
from guidedflow.nnet import VectorFieldNet, forward_batch


def small_net(seed=0, **kw):
    kw.setdefault("hidden", (16, 16))
    kw.setdefault("activation", "tanh")
    return VectorFieldNet.create(6, 4, seed=seed, **kw)


def make_batch(rng, n=5):
    return [TrainSample(Observation(rng.normal(size=2), rng.normal(size=2)),
                        rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), float(rng.uniform()))
            for _ in range(n)]


def test_interpolant_endpoints_and_midpoint():
    a0, a1 = np.zeros((2, 2)), np.ones((2, 2))
    assert np.array_equal(interpolate_state(a0, a1, 0.0), a0)
    assert np.array_equal(interpolate_state(a0, a1, 1.0), a1)
    np.testing.assert_allclose(interpolate_state(a0, a1, 0.5), 0.5 * np.ones((2, 2)))
    with pytest.raises(ValueError):
        interpolate_state(a0, a1, 1.1)
    with pytest.raises(ShapeError):
        interpolate_state(a0, np.ones(3), 0.5)


def test_target_field_is_constant_difference():
    rng = np.random.default_rng(0)
    a0, a1 = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    u = target_field(a0, a1)
    np.testing.assert_array_equal(u, a1 - a0)
    # d/dt of the interpolant equals the target field
    fd = (interpolate_state(a0, a1, 0.6) - interpolate_state(a0, a1, 0.4)) / 0.2
    np.testing.assert_allclose(fd, u, rtol=1e-12, atol=1e-12)


def test_loss_matches_direct_formula():
    rng = np.random.default_rng(1)
    net = small_net(1)
    batch = make_batch(rng)
    loss, _ = fm_loss_and_grads(net, batch)
    terms = []
    for s in batch:
        state = interpolate_state(s.source, s.target, s.t)
        v, _ = forward_batch(net, state.reshape(1, -1), s.t, s.obs.vector()[None])
        terms.append(np.sum((v[0] - (s.target - s.source).ravel()) ** 2))
    assert loss == pytest.approx(np.mean(terms), rel=1e-12)


@pytest.mark.parametrize("parameterization", ["velocity", "endpoint"])
def test_loss_gradient_matches_finite_differences(parameterization):
    rng = np.random.default_rng(2)
    net = small_net(2, parameterization=parameterization)
    batch = make_batch(rng)
    _, grads = fm_loss_and_grads(net, batch)
    worst = 0.0
    for p, g in zip(net.parameters(), grads.as_list()):
        flat = p.ravel()
        for j in rng.choice(flat.size, size=5, replace=False):
            old = flat[j]
            flat[j] = old + 1e-5
            lp, _ = fm_loss_and_grads(net, batch)
            flat[j] = old - 1e-5
            lm, _ = fm_loss_and_grads(net, batch)
            flat[j] = old
            fd = (lp - lm) / 2e-5
            worst = max(worst, abs(fd - g.ravel()[j]) / max(abs(fd), 1e-4))
    assert worst < 1e-5


def test_empty_batch_and_bad_t():
    with pytest.raises(ValueError):
        fm_loss_and_grads(small_net(), [])
    with pytest.raises(ValueError):
        TrainSample(Observation(np.zeros(2), np.zeros(2)), np.zeros(6), np.zeros(6), 1.5)


def test_training_is_deterministic_and_reports_epochs():
    rng = np.random.default_rng(3)
    obs, tg = rng.normal(size=(10, 4)), rng.normal(size=(10, 3, 2))
    cfg = TrainConfig(epochs=4, batch_size=4)
    n1, l1 = train(small_net(), (obs, tg), cfg, rng_seed=7)
    n2, l2 = train(small_net(), (obs, tg), cfg, rng_seed=7)
    assert len(l1) == 4 and np.array_equal(l1, l2)
    assert all(np.array_equal(a, b) for a, b in zip(n1.parameters(), n2.parameters()))


def test_training_divergence_names_epoch():
    obs, tg = np.zeros((4, 4)), np.full((4, 3, 2), 1e300)
    with pytest.raises(NumericError, match="epoch 0"):
        train(small_net(), (obs, tg), TrainConfig(epochs=2))


def test_training_rejects_empty_and_mismatched():
    with pytest.raises(ValueError):
        train(small_net(), (np.zeros((0, 4)), np.zeros((0, 6))))
    with pytest.raises(ShapeError):
        train(small_net(), (np.zeros((2, 4)), np.zeros((2, 4, 2))))


def test_single_target_overfit():
    # one demonstration: the learned flow collapses onto it
    o = np.array([0.2, -0.3, 0.5, 0.1])
    target = np.linspace(-0.5, 0.5, 6).reshape(3, 2)
    net = VectorFieldNet.create(6, 4, hidden=(64, 64), activation="tanh", seed=0,
                                parameterization="endpoint")
    net, losses = train(net, (o[None], target[None]),
                        TrainConfig(epochs=600, loss_weighting="endpoint"), rng_seed=0)
    for s in range(5):
        A = sample_plain(net, o, InferenceConfig(seed=s))
        assert np.sqrt(np.mean((A - target) ** 2)) < 0.05


def test_sampler_shapes_and_errors():
    net = small_net()
    o = Observation(np.zeros(2), np.ones(2))
    A = sample_plain(net, o, rng=np.random.default_rng(0))
    assert A.shape == (3, 2)
    with pytest.raises(ValueError):
        sample_guided(net, o, InferenceConfig(guidance_weight=0.5), None)
    with pytest.raises(ValueError):
        InferenceConfig(steps=0)
    bad = lambda A: np.full_like(A, np.nan)  # noqa: E731
    with pytest.raises(NumericError, match="step 0"):
        sample_guided(net, o, InferenceConfig(guidance_weight=1.0), bad, np.random.default_rng(0))


def test_euler_with_constant_field_is_exact():
    # zero net plus a constant field c: A_1 = A_0 + lam * c
    net = VectorFieldNet.zeros([6 + 4 + 9, 8, 6])
    c = np.array([[1.0, -2.0]] * 3)
    src = np.zeros((3, 2))
    A = sample_guided(net, np.zeros(4), InferenceConfig(steps=5, guidance_weight=0.5),
                      lambda A: c, source=src)
    np.testing.assert_allclose(A, 0.5 * c, rtol=1e-14)


@given(st.integers(0, 10_000), st.floats(-1, 1), st.floats(-1, 1))
def test_zero_weight_is_bit_identical_to_plain(seed, x, y):
    net = small_net(5)
    o = np.array([x, y, -y, x])
    field = lambda A: np.ones_like(A)  # noqa: E731
    a = sample_plain(net, o, InferenceConfig(seed=seed))
    b = sample_guided(net, o, InferenceConfig(seed=seed, guidance_weight=0.0), field)
    assert np.array_equal(a, b)


def test_guidance_displacement_is_linear_in_weight():
    # for a frozen state, one step adds dt * lam * field(A) to the plain step
    net = small_net(6)
    rng = np.random.default_rng(0)
    src = rng.normal(size=(3, 2))
    g = rng.normal(size=(3, 2))
    field = lambda A: g  # noqa: E731
    base = sample_guided(net, np.zeros(4), InferenceConfig(steps=1, guidance_weight=0.0), None,
                         source=src)
    for lam in (0.1, 0.8, 5.0):
        out = sample_guided(net, np.zeros(4), InferenceConfig(steps=1, guidance_weight=lam), field,
                            source=src)
        np.testing.assert_allclose(out - base, lam * g, rtol=1e-12, atol=1e-12)


def test_guidance_from_skips_early_steps():
    net = VectorFieldNet.zeros([6 + 4 + 9, 8, 6])
    calls = []

    def field(A):
        calls.append(A.copy())
        return np.ones_like(A)
    A = sample_guided(net, np.zeros(4), InferenceConfig(steps=5, guidance_weight=1.0,
                                                        guidance_from=3),
                      field, source=np.zeros((3, 2)))
    assert len(calls) == 2
    np.testing.assert_allclose(A, 0.4 * np.ones((3, 2)))
