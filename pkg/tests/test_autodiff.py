"""Tests for the reverse-mode autodiff engine.

Every differentiable op is checked against central finite differences;
conv1d is additionally checked against an independent nested-loop reference.
"""

import numpy as np
import pytest

from tcdfern import autodiff as ad
from tcdfern.errors import AutodiffError, StructuralError


def conv1d_reference(x, w):
    """Nested-loop valid 1-D convolution; deliberately independent of the engine."""
    length, c_in = x.shape
    k, _, c_out = w.shape
    out = np.zeros((length - k + 1, c_out))
    for i in range(length - k + 1):
        for o in range(c_out):
            acc = 0.0
            for j in range(k):
                for c in range(c_in):
                    acc += x[i + j, c] * w[j, c, o]
            out[i, o] = acc
    return out


def test_sigmoid_at_zero():
    assert ad.sigmoid(ad.Tensor(0.0)).item() == 0.5


def test_softmax_uniform_logits():
    y = ad.softmax(ad.Tensor([3.7, 3.7, 3.7]))
    np.testing.assert_allclose(y.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_softmax_sums_to_one():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.normal(scale=30.0, size=(4, 7))
        y = ad.softmax(ad.Tensor(x), axis=1)
        np.testing.assert_allclose(y.data.sum(axis=1), 1.0, atol=1e-12)


def test_conv1d_table_shape():
    x = ad.Tensor(np.random.default_rng(1).normal(size=(224, 1)))
    w = ad.Tensor(np.random.default_rng(2).normal(size=(3, 1, 64)))
    assert ad.conv1d(x, w).shape == (222, 64)


def test_conv1d_matches_nested_loop_reference():
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.normal(size=(5, 3))
        w = rng.normal(size=(2, 3, 4))
        got = ad.conv1d(ad.Tensor(x), ad.Tensor(w)).data
        np.testing.assert_allclose(got, conv1d_reference(x, w), atol=1e-12)


def test_product_rule_grads():
    x = ad.Tensor(2.0, requires_grad=True)
    y = ad.Tensor(3.0, requires_grad=True)
    loss = ad.mul(x, y)
    ad.backward(loss)
    assert x.grad == 3.0 and y.grad == 2.0


def test_tanh_grad_at_zero():
    x = ad.Tensor(0.0, requires_grad=True)
    ad.backward(ad.tanh(x))
    assert x.grad == 1.0


def test_softmax_cross_entropy_grad_is_probs_minus_onehot():
    rng = np.random.default_rng(7)
    logits = ad.Tensor(rng.normal(size=4), requires_grad=True)
    onehot = np.array([0.0, 0.0, 1.0, 0.0])

    def loss_fn():
        probs = ad.softmax(logits)
        return -ad.tsum(ad.mul(ad.Tensor(onehot), ad.log(probs)))

    # finite-difference oracle
    rel = ad.grad_check(loss_fn, logits, eps=1e-5)
    assert rel < 1e-6
    ad.zero_grads([logits])
    loss = loss_fn()
    ad.backward(loss)
    probs = ad.softmax(ad.Tensor(logits.data)).data
    np.testing.assert_allclose(logits.grad, probs - onehot, atol=1e-12)


def test_grad_check_quadratic():
    theta = ad.Tensor([1.5, -0.3, 2.0], requires_grad=True)

    def f():
        return ad.tsum(ad.square(theta))

    assert ad.grad_check(f, theta, eps=1e-5) < 1e-6


def test_grad_check_sigmoid_chain():
    theta = ad.Tensor([0.4, -1.2], requires_grad=True)

    def f():
        return ad.tsum(ad.sigmoid(ad.sigmoid(ad.mul(theta, 2.0))))

    assert ad.grad_check(f, theta, eps=1e-5) < 1e-4


def test_grad_check_constant_function():
    theta = ad.Tensor([1.0, 2.0], requires_grad=True)

    def f():
        return ad.tsum(ad.mul(theta, 0.0))

    assert ad.grad_check(f, theta, eps=1e-5) < 1e-10
    ad.zero_grads([theta])
    ad.backward(f())
    np.testing.assert_allclose(theta.grad, 0.0, atol=1e-10)


def test_dropout_identity_cases():
    x = ad.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    assert ad.dropout(x, 0.3, train=False) is x
    assert ad.dropout(x, 0.0, train=True, rng=np.random.default_rng(0)) is x


def test_dropout_inverted_scaling():
    rng = np.random.default_rng(11)
    x = ad.Tensor(np.ones(10000))
    y = ad.dropout(x, 0.2, train=True, rng=rng)
    kept = y.data[y.data > 0]
    np.testing.assert_allclose(kept, 1.0 / 0.8, atol=1e-12)
    assert abs(y.data.mean() - 1.0) < 0.02


def test_backward_twice_raises():
    x = ad.Tensor(1.0, requires_grad=True)
    loss = ad.square(x)
    ad.backward(loss)
    with pytest.raises(AutodiffError):
        ad.backward(loss)


def test_backward_requires_scalar():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(AutodiffError):
        ad.backward(ad.square(x))


def test_shape_mismatch_raises_structural():
    with pytest.raises(StructuralError):
        ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 5))))
    with pytest.raises(StructuralError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 5))))


def test_no_grad_blocks_recording():
    x = ad.Tensor(2.0, requires_grad=True)
    with ad.no_grad():
        y = ad.square(x)
    assert not y.requires_grad


# ---------------------------------------------------------------------------
# exhaustive gradient checks: every differentiable op, 20 random points each


def _check(op_builder, n_points=20, tol=1e-4):
    worst = 0.0
    for i in range(n_points):
        rng = np.random.default_rng(1000 + i)
        f, params = op_builder(rng)
        worst = max(worst, ad.grad_check(f, params, eps=1e-5))
    assert worst < tol, f"worst relative error {worst}"


def _two(rng, shape=(2, 3)):
    a = ad.Tensor(rng.normal(size=shape), requires_grad=True)
    b = ad.Tensor(rng.normal(size=shape) + 2.5, requires_grad=True)  # offset keeps div/log safe
    return a, b


@pytest.mark.parametrize(
    "name",
    [
        "add", "sub", "mul", "div", "square", "sqrt", "log", "clamp_min",
        "sigmoid", "tanh", "softmax", "matmul2d", "matmul3d", "conv1d",
        "sum_axis", "mean_axis", "reshape", "concat", "stack", "step",
        "repeat_steps", "dropout", "dense_act", "dense_act3d", "rows",
        "gru_gate", "lerp", "conv1d_act", "batch_norm_train",
    ],
)
def test_op_grad_check(name):
    def build(rng):
        a, b = _two(rng)
        w = ad.Tensor(rng.normal(size=(2, 3)))  # fixed projection to scalar
        if name == "add":
            return lambda: ad.tsum(ad.mul(ad.add(a, b), w)), [a, b]
        if name == "sub":
            return lambda: ad.tsum(ad.mul(ad.sub(a, b), w)), [a, b]
        if name == "mul":
            return lambda: ad.tsum(ad.mul(ad.mul(a, b), w)), [a, b]
        if name == "div":
            return lambda: ad.tsum(ad.mul(ad.div(a, b), w)), [a, b]
        if name == "square":
            return lambda: ad.tsum(ad.mul(ad.square(a), w)), [a]
        if name == "sqrt":
            p = ad.Tensor(rng.uniform(0.5, 3.0, size=(2, 3)), requires_grad=True)
            return lambda: ad.tsum(ad.mul(ad.sqrt(p), w)), [p]
        if name == "log":
            p = ad.Tensor(rng.uniform(0.5, 3.0, size=(2, 3)), requires_grad=True)
            return lambda: ad.tsum(ad.mul(ad.log(p), w)), [p]
        if name == "clamp_min":
            return lambda: ad.tsum(ad.mul(ad.clamp_min(a, 0.0), w)), [a]
        if name == "sigmoid":
            return lambda: ad.tsum(ad.mul(ad.sigmoid(a), w)), [a]
        if name == "tanh":
            return lambda: ad.tsum(ad.mul(ad.tanh(a), w)), [a]
        if name == "softmax":
            return lambda: ad.tsum(ad.mul(ad.softmax(a, axis=1), w)), [a]
        if name == "matmul2d":
            m = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            w2 = ad.Tensor(rng.normal(size=(2, 4)))
            return lambda: ad.tsum(ad.mul(ad.matmul(a, m), w2)), [a, m]
        if name == "matmul3d":
            x3 = ad.Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
            m = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            w3 = ad.Tensor(rng.normal(size=(2, 3, 4)))
            return lambda: ad.tsum(ad.mul(ad.matmul(x3, m), w3)), [x3, m]
        if name == "conv1d":
            x = ad.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
            k = ad.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
            w4 = ad.Tensor(rng.normal(size=(4, 4)))
            return lambda: ad.tsum(ad.mul(ad.conv1d(x, k), w4)), [x, k]
        if name == "sum_axis":
            x3 = ad.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
            w5 = ad.Tensor(rng.normal(size=(2, 4)))
            return lambda: ad.tsum(ad.mul(ad.tsum(x3, axis=1), w5)), [x3]
        if name == "mean_axis":
            x3 = ad.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
            w6 = ad.Tensor(rng.normal(size=(4,)))
            return lambda: ad.tsum(ad.mul(ad.tmean(x3, axis=(0, 1)), w6)), [x3]
        if name == "reshape":
            wr = ad.Tensor(rng.normal(size=(3, 2)))
            return lambda: ad.tsum(ad.mul(ad.reshape(a, (3, 2)), wr)), [a]
        if name == "concat":
            wc = ad.Tensor(rng.normal(size=(2, 6)))
            return lambda: ad.tsum(ad.mul(ad.concat([a, b], axis=1), wc)), [a, b]
        if name == "stack":
            ws = ad.Tensor(rng.normal(size=(2, 2, 3)))
            return lambda: ad.tsum(ad.mul(ad.stack([a, b], axis=1), ws)), [a, b]
        if name == "step":
            x3 = ad.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
            w7 = ad.Tensor(rng.normal(size=(2, 4)))
            return lambda: ad.tsum(ad.mul(ad.step(x3, 1), w7)), [x3]
        if name == "repeat_steps":
            w8 = ad.Tensor(rng.normal(size=(2, 4, 3)))
            return lambda: ad.tsum(ad.mul(ad.repeat_steps(a, 4), w8)), [a]
        if name == "dropout":
            w9 = ad.Tensor(rng.normal(size=(2, 3)))

            def f():
                drop_rng = np.random.default_rng(42)  # frozen mask across evaluations
                return ad.tsum(ad.mul(ad.dropout(a, 0.4, train=True, rng=drop_rng), w9))

            return f, [a]
        if name == "dense_act":
            m = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            bias = ad.Tensor(rng.normal(size=4), requires_grad=True)
            wd = ad.Tensor(rng.normal(size=(2, 4)))
            act = [None, "sigmoid", "tanh"][rng.integers(3)]
            return lambda: ad.tsum(ad.mul(ad.dense_act(a, m, bias, act), wd)), [a, m, bias]
        if name == "dense_act3d":
            x3 = ad.Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
            m = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            bias = ad.Tensor(rng.normal(size=4), requires_grad=True)
            wd = ad.Tensor(rng.normal(size=(2, 3, 4)))
            return lambda: ad.tsum(ad.mul(ad.dense_act(x3, m, bias, "tanh"), wd)), [x3, m, bias]
        if name == "rows":
            m = ad.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
            wr2 = ad.Tensor(rng.normal(size=(2, 3)))
            return lambda: ad.tsum(ad.mul(ad.rows(m, 1, 3), wr2)), [m]
        if name == "gru_gate":
            h = ad.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
            wh = ad.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
            xproj = ad.Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
            bias = ad.Tensor(rng.normal(size=3), requires_grad=True)
            wg = ad.Tensor(rng.normal(size=(2, 3)))
            act = ["sigmoid", "tanh"][rng.integers(2)]
            return (lambda: ad.tsum(ad.mul(ad.gru_gate(h, wh, xproj, 2, bias, act), wg)),
                    [h, wh, xproj, bias])
        if name == "lerp":
            h = ad.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
            beta = ad.Tensor(rng.uniform(0.1, 0.9, size=(2, 3)), requires_grad=True)
            cand = ad.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
            wl = ad.Tensor(rng.normal(size=(2, 3)))
            return lambda: ad.tsum(ad.mul(ad.lerp(h, beta, cand), wl)), [h, beta, cand]
        if name == "conv1d_act":
            x = ad.Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
            k = ad.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
            bias = ad.Tensor(rng.normal(size=4), requires_grad=True)
            wv = ad.Tensor(rng.normal(size=(2, 4, 4)))
            act = [None, "tanh"][rng.integers(2)]
            return lambda: ad.tsum(ad.mul(ad.conv1d_act(x, k, bias, act), wv)), [x, k, bias]
        if name == "batch_norm_train":
            x = ad.Tensor(rng.normal(size=(3, 4, 2)), requires_grad=True)
            wb = ad.Tensor(rng.normal(size=(3, 4, 2)))
            return lambda: ad.tsum(ad.mul(ad.batch_norm_train(x)[0], wb)), [x]
        raise AssertionError(name)

    _check(build)
