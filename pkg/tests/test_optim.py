import numpy as np
import pytest

from hinas import nn
from hinas.errors import NumericalError
from hinas.optim import SGD, Adam, adam_step, clip_grad_norm, cosine_lr, sgd_step
from oracles import adam_scalar, sgd_scalar


def test_plain_sgd_step():
    p = np.array([1.0, -2.0])
    g = np.array([0.5, 0.25])
    sgd_step([p], [g], {}, lr=1.0, momentum=0.0)
    np.testing.assert_array_equal(p, [0.5, -2.25])


def test_momentum_closed_form():
    p, state = np.array([0.0]), {}
    for _ in range(2):
        sgd_step([p], [np.array([2.0])], state, lr=0.1, momentum=0.9)
    assert p[0] == pytest.approx(-0.1 * 2.0 * 2.9, abs=1e-15)


def test_sgd_matches_scalar_reference(rng):
    grads = rng.standard_normal(100)
    p, state = np.array([0.7]), {}
    trace = []
    for g in grads:
        sgd_step([p], [np.array([g])], state, lr=0.025, momentum=0.9, weight_decay=3e-4)
        trace.append(p[0])
    assert np.abs(np.array(trace) - sgd_scalar(0.7, grads, 0.025, 0.9, 3e-4)).max() < 1e-10


def test_adam_matches_scalar_reference(rng):
    grads = rng.standard_normal(100)
    p, state = np.array([-0.3]), {}
    trace = []
    for g in grads:
        adam_step([p], [np.array([g])], state, lr=1e-3, weight_decay=1e-3)
        trace.append(p[0])
    assert np.abs(np.array(trace) - adam_scalar(-0.3, grads, 1e-3, 1e-3)).max() < 1e-10
    assert state["t"] == 100


def test_adam_first_step_bounded(rng):
    p0 = rng.standard_normal(50)
    p = p0.copy()
    adam_step([p], [rng.standard_normal(50) * 10 ** rng.uniform(-6, 3, 50)], {}, lr=1e-3)
    assert np.abs(p - p0).max() <= 1e-3 * (1 + 1e-6)


def test_adam_zero_grad_is_noop(rng):
    p0 = rng.standard_normal(5)
    p, state = p0.copy(), {}
    for _ in range(3):
        adam_step([p], [np.zeros(5)], state, lr=1e-3, weight_decay=0.0)
    np.testing.assert_array_equal(p, p0)


@pytest.mark.parametrize("step", [sgd_step, adam_step])
def test_non_finite_gradient_raises(step):
    p = np.zeros(3)
    with pytest.raises(NumericalError, match="w0"):
        step([p], [np.array([0.0, np.nan, 1.0])], {}, 0.1, names=["w0"])
    np.testing.assert_array_equal(p, 0.0)
    with pytest.raises(ValueError):
        step([p], [np.zeros(4)], {}, 0.1)


def test_cosine_schedule():
    assert cosine_lr(0, 100, 0.025, 0.001) == pytest.approx(0.025, abs=1e-15)
    assert cosine_lr(100, 100, 0.025, 0.001) == pytest.approx(0.001, abs=1e-15)
    assert cosine_lr(50, 100, 0.025, 0.001) == pytest.approx(0.013, abs=1e-15)
    lrs = [cosine_lr(e, 30, 0.025, 0.001) for e in range(31)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        cosine_lr(101, 100, 0.025, 0.001)


def test_clip_grad_norm(rng):
    a, b = nn.Parameter(np.zeros(3)), nn.Parameter(np.zeros(4))
    a.grad, b.grad = np.array([3.0, 0.0, 0.0]), np.array([0.0, 4.0, 0.0, 0.0])
    assert clip_grad_norm([a, b], 10.0) == pytest.approx(5.0)
    np.testing.assert_array_equal(a.grad, [3.0, 0, 0])
    clip_grad_norm([a, b], 1.0)
    total = np.sqrt((a.grad ** 2).sum() + (b.grad ** 2).sum())
    assert total == pytest.approx(1.0, abs=1e-6)
    a.grad[0] = np.inf
    with pytest.raises(NumericalError):
        clip_grad_norm([a, b], 1.0)


def test_optimizer_state_round_trip(rng):
    def make():
        params = [("w", nn.Parameter(np.ones(3))), ("b", nn.Parameter(np.zeros(2)))]
        return params, Adam(params, lr=1e-2, weight_decay=1e-3)

    params, opt = make()
    for _ in range(3):
        for _, p in params:
            p.grad = rng.standard_normal(p.shape)
        opt.step()
    saved = {k: np.array(v) for k, v in opt.state_arrays().items()}
    params2, opt2 = make()
    for (_, p), (_, q) in zip(params, params2):
        q.data[...] = p.data
    opt2.load_state_arrays(saved)
    g = [rng.standard_normal(p.shape) for _, p in params]
    for (_, p), (_, q), gk in zip(params, params2, g):
        p.grad, q.grad = gk, gk.copy()
    opt.step()
    opt2.step()
    for (_, p), (_, q) in zip(params, params2):
        np.testing.assert_array_equal(p.data, q.data)


def test_sgd_class_uses_hyperparameters():
    p = nn.Parameter(np.array([1.0]))
    opt = SGD([("p", p)], momentum=0.0, weight_decay=0.5)
    p.grad = np.array([0.0])
    opt.step(0.1)
    assert p.data[0] == pytest.approx(1.0 - 0.1 * 0.5)
