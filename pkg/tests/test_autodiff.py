"""Gradient engine: forward values and reverse-mode gradients."""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from celldx.autodiff import Tensor, as_tensor, hstack, interp_table, mse
from celldx.errors import NumericalError, ShapeError


def finite_difference(fn, arrays, step=1e-5):
    """Central-difference gradients of scalar fn(*arrays) per array."""
    grads = []
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = fn(*arrays)
            flat[i] = orig - step
            lo = fn(*arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def check_gradients(build, arrays, rtol=1e-4, atol=1e-8):
    """Compare backward() against finite differences of the same scalar."""
    params = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*params)
    loss.backward()

    def value(*arrs):
        consts = [Tensor(a) for a in arrs]
        return build(*consts).item()

    fd = finite_difference(value, [p.data for p in params])
    for p, g in zip(params, fd):
        assert_allclose(p.grad, g, rtol=rtol, atol=atol)


class TestForward:
    def test_arithmetic_matches_numpy(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)) + 2.0
        ta, tb = Tensor(a), Tensor(b)
        assert_allclose((ta + tb).data, a + b)
        assert_allclose((ta - tb).data, a - b)
        assert_allclose((ta * tb).data, a * b)
        assert_allclose((ta / tb).data, a / b)
        assert_allclose((2.0 * ta + 1.0).data, 2 * a + 1)
        assert_allclose((ta**2).data, a**2)

    def test_matmul_shape_checks(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            Tensor(np.zeros(3)) @ Tensor(np.zeros((3, 2)))

    def test_rank_limit(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 2, 2)))

    def test_softplus_stability(self):
        x = Tensor(np.array([-800.0, 0.0, 800.0]))
        out = x.softplus().data
        assert out[0] == 0.0
        assert out[1] == pytest.approx(np.log(2.0))
        assert out[2] == pytest.approx(800.0)

    def test_cumsum(self):
        x = Tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
        assert_allclose(x.cumsum(axis=1).data, [[1, 3, 6], [4, 9, 15]])

    def test_interp_table_clamps(self):
        xp = np.array([0.0, 0.5, 1.0])
        fp = np.array([4.0, 3.5, 3.0])
        out = interp_table(Tensor(np.array([-1.0, 0.25, 2.0])), xp, fp)
        assert_allclose(out.data, [4.0, 3.75, 3.0])


class TestBackward:
    def test_linear_regression_closed_form(self):
        x = np.array([[1.0], [2.0], [3.0]])
        y = np.array([[2.0], [4.0], [6.5]])
        w = Tensor(np.array([[1.5]]), requires_grad=True)
        loss = mse(Tensor(x) @ w, y)
        loss.backward()
        resid = x * 1.5 - y
        assert w.grad[0, 0] == pytest.approx(float(2 * np.mean(x * resid)))

    def test_unused_parameter_gets_no_gradient(self):
        used = Tensor(np.ones((2, 2)), requires_grad=True)
        unused = Tensor(np.ones((2, 2)), requires_grad=True)
        loss = used.square().mean()
        loss.backward()
        assert unused.grad is None

    def test_backward_requires_scalar(self):
        t = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            (t * 2).backward()

    def test_nan_loss_raises(self):
        t = Tensor(np.array(np.nan), requires_grad=True)
        with pytest.raises(NumericalError):
            (t * 1.0).backward()

    def test_reused_node_accumulates(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        y = x * x + x  # dy/dx = 2x + 1
        y.backward()
        assert x.grad == pytest.approx(7.0)

    @pytest.mark.parametrize(
        "build",
        [
            lambda a, b: (a @ b).square().mean(),
            lambda a, b: (a @ b + 0.3).tanh().sum() * 0.5,
            lambda a, b: (a @ b).softplus().mean(),
            lambda a, b: (a.relu() @ b).mean(),
            lambda a, b: ((a @ b).cumsum(axis=1)).square().sum(),
            lambda a, b: ((a / (b.square().sum() + 1.0)) - 2.0).square().mean(),
            lambda a, b: hstack([a[:, :2], (a @ b)[:, :1]]).square().mean(),
            lambda a, b: (a.sum(axis=0) * b.mean(axis=1)).square().sum(),
        ],
        ids=["mse", "tanh", "softplus", "relu", "cumsum", "div", "hstack-slice", "axis-reduce"],
    )
    def test_fd_composites(self, build):
        rng = np.random.default_rng(17)
        a = rng.normal(size=(3, 3))
        b = rng.normal(size=(3, 3))
        check_gradients(build, [a, b])

    def test_fd_broadcast_bias(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 3))
        check_gradients(lambda w, b: (Tensor(x) @ w + b).tanh().square().mean(), [rng.normal(size=(3, 2)), rng.normal(size=2)])

    def test_fd_interp_table(self):
        # keep sample points off the knots so the local slope is exact
        xp = np.linspace(0.0, 1.0, 11)
        fp = 4.2 - 0.5 * xp - 0.3 * xp**2
        x = np.array([[0.123, 0.456], [0.789, 0.321]])
        check_gradients(lambda t: interp_table(t, xp, fp).square().mean(), [x])

    def test_mean_axis_variants(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 4))
        t = Tensor(a, requires_grad=True)
        t.mean().backward()
        assert_allclose(t.grad, np.full((3, 4), 1 / 12))
        t2 = Tensor(a, requires_grad=True)
        t2.mean(axis=0).sum().backward()
        assert_allclose(t2.grad, np.full((3, 4), 1 / 3))

    def test_getitem_scatter(self):
        t = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        t[:, 1:3].sum().backward()
        assert_allclose(t.grad, [[0, 1, 1], [0, 1, 1]])

    def test_detached_value_blocks_gradient(self):
        t = Tensor(np.array(2.0), requires_grad=True)
        frozen = Tensor(t.detach() * 3.0)
        (frozen * t).backward()
        assert t.grad == pytest.approx(6.0)
