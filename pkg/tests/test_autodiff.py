import numpy as np
import pytest

import gradcheck
from tgoffload import autodiff as ad
from tgoffload.autodiff import ShapeError, Tensor
from tgoffload.nn import gumbel_softmax


@pytest.mark.parametrize("name", sorted(gradcheck.OPS))
def test_finite_difference(name):
    rng = np.random.default_rng([1, sum(map(ord, name))])
    for _ in range(50):
        build, arrays = gradcheck.OPS[name](rng)
        assert gradcheck.check(build, arrays, rng) <= gradcheck.TOL


def test_straight_through_routes_soft_gradient():
    rng = np.random.default_rng(2)
    for _ in range(50):
        logits = rng.normal(size=(3, 4))
        noise = rng.gumbel(size=(3, 4))
        w = rng.normal(size=(3, 4))
        z1, z2 = Tensor(logits), Tensor(logits)
        hard = gumbel_softmax(z1, 0.7, hard=True, noise=noise)
        soft = gumbel_softmax(z2, 0.7, hard=False, noise=noise)
        (hard * Tensor(w)).sum().backward()
        (soft * Tensor(w)).sum().backward()
        assert np.array_equal(z1.grad, z2.grad)
        assert np.all(hard.data.sum(-1) == 1) and set(np.unique(hard.data)) <= {0.0, 1.0}
        assert np.array_equal(hard.data.argmax(-1), soft.data.argmax(-1))


def test_relu_negative_is_zero():
    x = Tensor(np.array([1.0, 2.5, 1e-9]))
    assert np.all(ad.relu(-x).data == 0)


def test_softmax_sums_to_one():
    rng = np.random.default_rng(0)
    for axis in (0, 1, -1):
        s = ad.softmax(Tensor(rng.normal(size=(4, 6)) * 30), axis=axis).data
        assert np.all(s >= 0)
        assert np.allclose(s.sum(axis=axis), 1.0, atol=1e-9, rtol=0)


def test_transpose_of_product():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))

    def naive(x, y):
        return np.array([[sum(x[i, k] * y[k, j] for k in range(3)) for j in range(3)] for i in range(3)])
    lhs = ad.matmul(Tensor(a), Tensor(b)).T.data
    rhs = ad.matmul(Tensor(b).T, Tensor(a).T).data
    assert np.allclose(lhs, naive(a, b).T, rtol=1e-14, atol=1e-14)
    assert np.allclose(rhs, naive(b.T, a.T), rtol=1e-14, atol=1e-14)
    assert np.allclose(lhs, rhs, rtol=1e-14, atol=1e-14)


def test_quadratic_gradient():
    w = Tensor(np.array([1.0, -2.0, 3.5]))
    (w * w).sum().backward()
    assert np.array_equal(w.grad, 2 * w.data)


def test_shared_subexpression_accumulates():
    rng = np.random.default_rng(4)
    x0 = rng.normal(size=(2, 3))
    x = Tensor(x0)
    y = ad.tanh(x)
    (y * y + y).sum().backward()
    # oracle: the same function with the subgraph duplicated
    xa = Tensor(x0)
    (ad.tanh(xa) * ad.tanh(xa) + ad.tanh(xa)).sum().backward()
    assert np.allclose(x.grad, xa.grad, rtol=1e-14)
    t = np.tanh(x0)
    assert np.allclose(x.grad, (2 * t + 1) * (1 - t * t), rtol=1e-13)


def test_detach_blocks_gradient():
    x = Tensor(np.array([1.0, 2.0]))
    loss = (x * x.detach()).sum()
    loss.backward()
    assert np.array_equal(x.grad, np.array([1.0, 2.0]))


def test_unreachable_parameters_get_zero():
    a, b = Tensor(np.ones(2)), Tensor(np.ones(2))
    (a * 3.0).sum().backward()
    assert np.array_equal(b.grad, np.zeros(2))


def test_backward_requires_scalar():
    with pytest.raises(ShapeError):
        (Tensor(np.ones(3)) * 2.0).backward()


def test_shape_errors():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))
    with pytest.raises(ShapeError):
        ad.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=-1)
    with pytest.raises(ShapeError):
        ad.mse(Tensor(np.ones(3)), np.ones(4))


def test_backward_is_deterministic():
    rng = np.random.default_rng(8)
    x0, w0 = rng.normal(size=(5, 4)), rng.normal(size=(4, 2))
    grads = []
    for _ in range(2):
        w = Tensor(w0)
        ad.softmax(ad.matmul(Tensor(x0), w)).mean().backward()
        grads.append(w.grad.copy())
    assert np.array_equal(*grads)


def test_repeated_backward_accumulates_on_leaves():
    w = Tensor(np.array([2.0]))
    for _ in range(3):
        (w * w).sum().backward()
    assert w.grad[0] == 12.0
