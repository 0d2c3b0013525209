import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multav import tensor as T


def check_grad(fn, *shapes, rng, positive=False, tol=1e-6):
    """Backprop vs central differences for scalar ``sum(fn(*inputs) * w)``."""
    lo = 0.5 if positive else -1.0
    xs = [rng.uniform(lo, 1.5, size=s) for s in shapes]
    out_probe = fn(*[T.Tensor(x) for x in xs])
    w = rng.normal(size=out_probe.shape)

    def scalar(*arrs):
        return T.sum(T.mul(fn(*arrs), w))

    leaves = [T.Tensor(x, requires_grad=True) for x in xs]
    scalar(*leaves).backward()
    for i, leaf in enumerate(leaves):
        def f(v, i=i):
            args = [T.Tensor(x) for x in xs]
            args[i] = T.Tensor(v)
            return scalar(*args).item()
        fd = T.finite_diff_grad(f, xs[i], h=1e-6)
        np.testing.assert_allclose(leaf.grad, fd, rtol=tol, atol=tol)


@pytest.mark.parametrize("op", [T.add, T.sub, T.mul])
@pytest.mark.parametrize("shapes", [((3, 4), (3, 4)), ((2, 3, 4), (4,)), ((3, 1), (1, 5))])
def test_binary_ops_broadcast_grad(op, shapes, rng):
    check_grad(op, *shapes, rng=rng)


def test_binary_op_shape_mismatch():
    with pytest.raises(ValueError):
        T.add(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((3, 2))))


@pytest.mark.parametrize("fn,positive", [
    (T.exp, False), (T.log, True), (T.neg, False),
    (lambda a: T.scalar_pow_elementwise(1.7, a), False),
    (lambda a: T.softmax(a, axis=-1), False),
    (lambda a: T.softmax(a, axis=0), False),
])
def test_unary_ops_grad(fn, positive, rng):
    check_grad(fn, (3, 5), rng=rng, positive=positive)


def test_relu_grad_away_from_kink(rng):
    x = rng.uniform(0.1, 1.0, size=(4, 5)) * rng.choice([-1, 1], size=(4, 5))
    leaf = T.Tensor(x, requires_grad=True)
    T.sum(T.relu(leaf)).backward()
    np.testing.assert_array_equal(leaf.grad, (x > 0).astype(float))


def test_relu_subgradient_zero_at_zero():
    leaf = T.Tensor(np.zeros(3), requires_grad=True)
    T.sum(T.relu(leaf)).backward()
    np.testing.assert_array_equal(leaf.grad, 0.0)


@pytest.mark.parametrize("fn,shape", [
    (lambda a: T.reshape(a, (6, 4)), (2, 3, 4)),
    (lambda a: T.flatten(a, 1), (2, 3, 4)),
    (lambda a: T.transpose(a, (2, 0, 1)), (2, 3, 4)),
    (lambda a: T.pad(a, [(1, 0), (0, 2), (1, 1)]), (2, 3, 4)),
    (lambda a: T.sum(a, axis=1), (2, 3, 4)),
    (lambda a: T.sum(a, axis=(0, 2), keepdims=True), (2, 3, 4)),
    (lambda a: T.mean(a, axis=(1, 2)), (2, 3, 4)),
    (lambda a: T.avg_pool3d(a, (2, 2, 1)), (2, 3, 4, 4, 3)),
])
def test_structural_ops_grad(fn, shape, rng):
    check_grad(fn, shape, rng=rng)


def test_matmul_grad(rng):
    check_grad(T.matmul, (3, 4), (4, 2), rng=rng)
    check_grad(T.matmul, (2, 3, 4), (2, 4, 5), rng=rng)


@pytest.mark.parametrize("stride,padding,ks", [(1, 1, (3, 3, 3)), (2, 0, (3, 3, 3)),
                                               ((1, 2, 1), (0, 1, 2), (1, 3, 5))])
def test_conv3d_grad(stride, padding, ks, rng):
    check_grad(lambda x, k, b: T.conv3d(x, k, b, stride=stride, padding=padding),
               (2, 2, 4, 5, 6), (3, 2) + ks, (3,), rng=rng)


def test_conv3d_matches_direct_sum(rng):
    x = rng.normal(size=(1, 2, 3, 4, 4))
    k = rng.normal(size=(2, 2, 3, 3, 3))
    out = T.conv3d(x, k, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for co in range(2):
        for d in range(3):
            for h in range(4):
                for w in range(4):
                    ref[0, co, d, h, w] = np.sum(xp[0, :, d:d + 3, h:h + 3, w:w + 3] * k[co])
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv3d_rejects_even_kernel():
    with pytest.raises(ValueError, match="odd"):
        T.conv3d(np.zeros((1, 1, 4, 4, 4)), np.zeros((1, 1, 2, 3, 3)))


@pytest.mark.parametrize("reduction", ["mean", "sum"])
def test_softmax_cross_entropy_grad(reduction, rng):
    labels = np.array([0, 2, 1])
    check_grad(lambda z: T.softmax_cross_entropy(z, labels, reduction), (3, 4), rng=rng)


def test_cross_entropy_matches_manual():
    z = np.array([[1.0, 2.0, 0.5]])
    expected = -np.log(np.exp(2.0) / np.exp(z).sum())
    assert T.softmax_cross_entropy(z, [1]).item() == pytest.approx(expected, rel=1e-14)
    np.testing.assert_allclose(T.cross_entropy_per_example(z, [1]), [expected], rtol=1e-14)


def test_backward_requires_scalar():
    with pytest.raises(ValueError, match="scalar"):
        T.Tensor(np.ones(3), requires_grad=True).backward()


def test_grad_accumulates_over_reuse(rng):
    x = rng.normal(size=4)
    leaf = T.Tensor(x, requires_grad=True)
    T.sum(T.add(T.mul(leaf, leaf), leaf)).backward()
    np.testing.assert_allclose(leaf.grad, 2 * x + 1)


def test_no_grad_builds_no_graph():
    leaf = T.Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        out = T.sum(T.mul(leaf, 2.0))
    assert out.op == "leaf" or not out._parents
    assert T.is_grad_enabled()


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        T.finite_diff_grad(lambda v: 0.0, np.zeros(2), h=0.0)


def test_scalar_pow_rejects_nonpositive_base():
    with pytest.raises(ValueError):
        T.scalar_pow_elementwise(0.0, T.Tensor(np.ones(2)))


@settings(max_examples=50, deadline=None)
@given(base=st.floats(0.05, 20.0), e=st.lists(st.floats(-3, 3), min_size=1, max_size=8))
def test_scalar_pow_matches_power(base, e):
    e = np.array(e)
    np.testing.assert_allclose(T.scalar_pow_elementwise(base, e).data, np.power(base, e),
                               rtol=1e-13)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**31))
def test_gradient_is_linear(a, b, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(2, 3))
    w = r.normal(size=(3, 2))

    def grad(fn):
        leaf = T.Tensor(x, requires_grad=True)
        fn(leaf).backward()
        return leaf.grad

    def f(t):
        return T.sum(T.exp(T.matmul(t, w)))

    def g(t):
        return T.sum(T.mul(t, t))

    combo = grad(lambda t: T.add(T.mul(f(t), a), T.mul(g(t), b)))
    np.testing.assert_allclose(combo, a * grad(f) + b * grad(g), rtol=1e-10, atol=1e-10)
