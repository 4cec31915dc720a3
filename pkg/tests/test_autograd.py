"""Reverse-mode gradients audited against central finite differences.

Every differentiable op gets a float64 check at rel. error < 1e-4; leaky
ReLU inputs are sampled away from the kink so the subgradient choice at 0
cannot contaminate the comparison.
"""

import numpy as np
import pytest

from ctdenoise.tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    conv2d,
    leaky_relu,
    linear,
    matmul,
    mul,
    neg,
    pixel_shuffle,
    pixel_unshuffle,
    reshape,
    softmax,
    sub,
    tmean,
    transpose,
    tsum,
)

from conftest import gradcheck, rel_err

TOL = 1e-4


def _away_from_zero(rng, shape, margin=0.25):
    x = rng.uniform(margin, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


class TestElementwiseGrads:
    def test_add(self):
        rng = np.random.default_rng(0)
        gradcheck(add, [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))], TOL)

    def test_add_broadcast(self):
        rng = np.random.default_rng(1)
        gradcheck(add, [rng.normal(size=(2, 3, 4)), rng.normal(size=(4,))], TOL)

    def test_sub_neg(self):
        rng = np.random.default_rng(2)
        gradcheck(sub, [rng.normal(size=(3, 3)), rng.normal(size=(3, 3))], TOL)
        gradcheck(neg, [rng.normal(size=(5,)) + 2.0], TOL)

    def test_mul_broadcast(self):
        rng = np.random.default_rng(3)
        gradcheck(mul, [rng.normal(size=(2, 3)), rng.normal(size=(1, 3))], TOL)


class TestLinearAlgebraGrads:
    def test_matmul_2d(self):
        rng = np.random.default_rng(4)
        gradcheck(matmul, [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))], TOL)

    def test_matmul_batched(self):
        rng = np.random.default_rng(5)
        gradcheck(matmul, [rng.normal(size=(2, 2, 3, 4)), rng.normal(size=(2, 2, 4, 3))], TOL)

    def test_matmul_broadcast_kv(self):
        rng = np.random.default_rng(6)
        gradcheck(matmul, [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))], TOL)

    def test_linear(self):
        rng = np.random.default_rng(7)
        gradcheck(
            linear,
            [rng.normal(size=(2, 5, 3)), rng.normal(size=(3, 4)), rng.normal(size=(4,))],
            TOL,
        )


class TestShapingGrads:
    def test_reshape(self):
        rng = np.random.default_rng(8)
        gradcheck(lambda x: reshape(x, (6, 2)), [rng.normal(size=(3, 4))], TOL)

    def test_transpose(self):
        rng = np.random.default_rng(9)
        gradcheck(lambda x: transpose(x, (2, 0, 1)), [rng.normal(size=(2, 3, 4))], TOL)

    def test_concat(self):
        rng = np.random.default_rng(10)
        gradcheck(
            lambda a, b: concat([a, b], axis=1),
            [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))],
            TOL,
        )

    def test_sum_all_axes(self):
        rng = np.random.default_rng(11)
        gradcheck(tsum, [rng.normal(size=(3, 4))], TOL)
        gradcheck(lambda x: tsum(x, axis=1), [rng.normal(size=(3, 4))], TOL)
        gradcheck(lambda x: tsum(x, axis=0, keepdims=True), [rng.normal(size=(3, 4))], TOL)

    def test_mean(self):
        rng = np.random.default_rng(12)
        gradcheck(tmean, [rng.normal(size=(3, 4))], TOL)
        gradcheck(lambda x: tmean(x, axis=2), [rng.normal(size=(2, 3, 4))], TOL)


class TestNonlinearityGrads:
    def test_leaky_relu(self):
        rng = np.random.default_rng(13)
        gradcheck(lambda x: leaky_relu(x, 0.2), [_away_from_zero(rng, (4, 5))], TOL)

    def test_leaky_relu_subgradient_at_zero(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        leaky_relu(x, 0.2).sum().backward()
        assert np.allclose(x.grad, 0.2)

    def test_softmax(self):
        rng = np.random.default_rng(14)
        gradcheck(lambda x: softmax(x, axis=-1), [rng.normal(size=(3, 5))], TOL)

    def test_softmax_inner_axis(self):
        rng = np.random.default_rng(15)
        gradcheck(lambda x: softmax(x, axis=1), [rng.normal(size=(2, 4, 3))], TOL)


class TestStructuredGrads:
    def test_conv2d_stride1(self):
        rng = np.random.default_rng(16)
        gradcheck(
            lambda x, w, b: conv2d(x, w, b, stride=1),
            [rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(3,))],
            TOL,
        )

    def test_conv2d_stride2_even_and_odd(self):
        rng = np.random.default_rng(17)
        for H, W in ((6, 6), (5, 7)):
            gradcheck(
                lambda x, w, b: conv2d(x, w, b, stride=2),
                [rng.normal(size=(1, 2, H, W)), rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2,))],
                TOL,
            )

    def test_conv2d_1x1(self):
        rng = np.random.default_rng(18)
        gradcheck(
            lambda x, w, b: conv2d(x, w, b),
            [rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 1, 1)), rng.normal(size=(2,))],
            TOL,
        )

    def test_pixel_shuffle(self):
        rng = np.random.default_rng(19)
        gradcheck(lambda x: pixel_shuffle(x, 2), [rng.normal(size=(1, 8, 3, 3))], TOL)

    def test_pixel_unshuffle(self):
        rng = np.random.default_rng(20)
        gradcheck(lambda x: pixel_unshuffle(x, 2), [rng.normal(size=(1, 2, 6, 4))], TOL)


class TestGraphSemantics:
    def test_diamond_reuse(self):
        # f(x) = sum((x + x) * x); df/dx = 4x — the node x appears three times
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        y = mul(add(x, x), x)
        y.sum().backward()
        assert np.allclose(x.grad, 4.0 * x.data)

    def test_repeated_backward_accumulates(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = mul(x, x).sum()
        loss.backward()
        first = x.grad.copy()
        loss.backward()
        assert np.allclose(x.grad, 2.0 * first)
        x.zero_grad()
        assert x.grad is None

    def test_grad_stops_at_detach(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = mul(x, Tensor(np.full(3, 2.0)))
        z = mul(y.detach(), x)
        z.sum().backward()
        assert np.allclose(x.grad, 2.0)  # only the direct path contributes

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            mul(x, x).backward()

    def test_backward_requires_grad(self):
        with pytest.raises(ValueError):
            Tensor(np.array(1.0)).backward()

    def test_no_graph_when_untracked(self):
        a = Tensor(np.ones(3))
        b = Tensor(np.ones(3))
        out = add(a, b)
        assert not out.requires_grad and out._parents == ()

    def test_chained_ops_end_to_end(self):
        # small composite: softmax(leaky(xW + b)) reduced by mean
        rng = np.random.default_rng(21)

        def net(x, w, b):
            h = leaky_relu(linear(x, w, b), 0.2)
            return tmean(softmax(h, axis=-1))

        gradcheck(
            net,
            [rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(5,))],
            TOL,
        )

    def test_float32_graph_keeps_dtype_but_grads_flow(self):
        x = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
        loss = mul(x, x).mean()
        assert loss.dtype == np.float32
        loss.backward()
        assert x.grad.dtype == np.float32
        assert np.allclose(x.grad, 0.5)
