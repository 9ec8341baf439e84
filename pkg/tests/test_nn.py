import numpy as np
import pytest

from ganlink.errors import ConfigError, UsageError
from ganlink.nn import OptimConfig, ParamSet, ParamSpec, adam_step, init_params, zero_grads
from ganlink.tensor import Tape, Tensor, backward, mul, scale, tsum


def scalar_adam(w, steps, lr, b1, b2, eps):
    """Plain-float Adam on f(w) = w²/2, used as an independent oracle."""
    m = v = 0.0
    for t in range(1, steps + 1):
        g = w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def step_on(params, loss_fn, cfg):
    with Tape() as tape:
        loss = loss_fn()
    backward(loss, tape)
    adam_step(params, cfg)
    return float(loss.data)


class TestInit:
    specs = [ParamSpec("w", (100, 100)), ParamSpec("b", (100,), "bias"),
             ParamSpec("g", (7,), "gamma"), ParamSpec("beta", (7,), "beta")]

    def test_deterministic(self):
        a, b = init_params(self.specs, 3), init_params(self.specs, 3)
        for name in a:
            assert np.array_equal(a[name].data, b[name].data)

    def test_seed_changes_weights(self):
        assert not np.array_equal(init_params(self.specs, 3)["w"].data, init_params(self.specs, 4)["w"].data)

    def test_weight_statistics(self):
        w = init_params(self.specs, 0)["w"].data
        assert abs(w.mean()) <= 0.002
        assert 0.018 <= w.std(ddof=1) <= 0.022

    def test_fixed_kinds(self):
        p = init_params(self.specs, 0)
        assert np.all(p["b"].data == 0) and np.all(p["beta"].data == 0) and np.all(p["g"].data == 1)

    def test_bad_kind(self):
        with pytest.raises(ConfigError):
            init_params([ParamSpec("x", (2,), "mystery")], 0)

    def test_duplicate_name(self):
        p = ParamSet([("a", Tensor([1.0]))])
        with pytest.raises(ConfigError):
            p.add("a", Tensor([2.0]))


class TestOptimConfig:
    def test_defaults(self):
        cfg = OptimConfig()
        assert (cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon) == (1e-4, 0.5, 0.999, 1e-8)

    @pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"beta1": 1.0}, {"beta2": -0.1}, {"epsilon": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            OptimConfig(**kw)


class TestAdam:
    @pytest.mark.parametrize("g", [0.3, -2.0, 50.0])
    def test_first_step_magnitude_is_lr(self, g):
        w = Tensor(np.zeros(4, dtype=np.float64), dtype=np.float64)
        p = ParamSet([("w", w)])
        w.grad = np.full(4, g)
        adam_step(p, OptimConfig(learning_rate=1e-3))
        step = np.abs(w.data)
        np.testing.assert_allclose(step, 1e-3, rtol=1e-6)
        assert np.all(np.sign(-w.data) == np.sign(g))

    def test_zero_gradient(self):
        w = Tensor(np.array([1.0, -2.0]))
        p = ParamSet([("w", w)])
        w.grad = np.zeros(2, dtype=np.float32)
        adam_step(p, OptimConfig())
        np.testing.assert_array_equal(w.data, [1.0, -2.0])
        assert p.t == 1

    def test_missing_gradient(self):
        p = ParamSet([("w", Tensor([1.0])), ("u", Tensor([1.0]))])
        p["w"].grad = np.ones(1, dtype=np.float32)
        with pytest.raises(UsageError, match="'u'"):
            adam_step(p, OptimConfig())

    def test_quadratic_converges(self):
        cfg = OptimConfig(learning_rate=0.01, beta1=0.5, beta2=0.999)
        w = Tensor(np.array([5.0]), dtype=np.float64)
        p = ParamSet([("w", w)])
        steps = 0
        while abs(w.data[0]) >= 0.1 and steps < 2000:
            step_on(p, lambda: scale(tsum(mul(w, w)), 0.5), cfg)
            steps += 1
        assert abs(w.data[0]) < 0.1
        # the tape-based run agrees with the scalar oracle
        assert w.data[0] == pytest.approx(scalar_adam(5.0, steps, 0.01, 0.5, 0.999, 1e-8), rel=1e-9)

    def test_long_run_stays_finite(self):
        cfg = OptimConfig(learning_rate=0.05)
        w = Tensor(np.linspace(-3, 3, 5))
        p = ParamSet([("w", w)])
        for _ in range(10_000):
            w.grad = w.data.copy()
            adam_step(p, cfg)
        assert np.isfinite(w.data).all() and np.abs(w.data).max() < 0.5

    def test_grads_cleared_after_step(self):
        w = Tensor([1.0])
        p = ParamSet([("w", w)])
        step_on(p, lambda: tsum(mul(w, w)), OptimConfig())
        assert w.grad is None


class TestZeroGrads:
    def test_clears_and_idempotent(self):
        w = Tensor([1.0, 2.0])
        p = ParamSet([("w", w)])
        with Tape() as tape:
            loss = tsum(mul(w, w))
        backward(loss, tape)
        assert w.grad is not None
        zero_grads(p)
        zero_grads(p)
        assert w.grad is None

    def test_fresh_gradients(self):
        w = Tensor([1.0, 2.0])
        p = ParamSet([("w", w)])
        for _ in range(2):
            zero_grads(p)
            with Tape() as tape:
                loss = tsum(mul(w, w))
            backward(loss, tape)
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])

    def test_frozen(self):
        w = Tensor([1.0])
        p = ParamSet([("w", w)])
        with p.frozen():
            with Tape() as tape:
                loss = tsum(mul(w, Tensor([3.0], requires_grad=True)))
            backward(loss, tape)
        assert w.grad is None and w.requires_grad
