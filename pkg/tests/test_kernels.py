import numpy as np
import pytest

from multav import _kernels as K
from multav import tensor as T


@pytest.fixture
def restore_backend():
    prev = K.get_backend()
    yield
    K.set_backend(prev)


@pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("stride", [(1, 1, 1), (2, 1, 2)])
@pytest.mark.parametrize("ci,co,ks", [(1, 8, (3, 3, 3)), (3, 2, (1, 3, 5))])
def test_backends_agree(stride, ci, co, ks, rng, restore_backend):
    xp = rng.normal(size=(3, ci, 6, 7, 8))
    w = rng.normal(size=(co, ci) + ks)
    out = {}
    for b in ("numpy", "numba"):
        K.set_backend(b)
        y = K.conv3d_forward(xp, w, stride)
        g = rng.normal(size=y.shape) if b == "numpy" else out["numpy"][3]
        out[b] = (y, K.conv3d_backward_input(g, w, xp.shape, stride),
                  K.conv3d_backward_weight(xp, g, ks, stride), g)
    for a, c in zip(out["numpy"][:3], out["numba"][:3]):
        np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-12)


def test_backward_is_adjoint_of_forward(rng):
    # <conv(x), g> == <x, conv^T(g)> for every backend
    xp = rng.normal(size=(2, 2, 5, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3, 3))
    y = K.conv3d_forward(xp, w, (1, 1, 1))
    g = rng.normal(size=y.shape)
    lhs = np.sum(y * g)
    assert np.sum(xp * K.conv3d_backward_input(g, w, xp.shape, (1, 1, 1))) == pytest.approx(lhs, rel=1e-12)
    assert np.sum(w * K.conv3d_backward_weight(xp, g, (3, 3, 3), (1, 1, 1))) == pytest.approx(lhs, rel=1e-12)


def test_set_backend_validates(restore_backend):
    with pytest.raises(ValueError):
        K.set_backend("cuda")
    prev = K.set_backend("numpy")
    assert K.get_backend() == "numpy"
    K.set_backend(prev)


def test_env_flag_selects_backend(monkeypatch):
    monkeypatch.setenv("MULTAV_BACKEND", "numpy")
    assert K._default_backend() == "numpy"
    monkeypatch.setenv("MULTAV_BACKEND", "bogus")
    with pytest.raises(ValueError):
        K._default_backend()


def test_model_gradient_same_on_both_backends(rng, restore_backend):
    from multav.net import NetworkConfig, build_model
    model = build_model(NetworkConfig(input_shape=(4, 1, 8, 8)))
    x = rng.uniform(size=(2, 4, 1, 8, 8))
    grads = []
    for b in ("numpy", "numba") if K.HAVE_NUMBA else ("numpy",):
        K.set_backend(b)
        leaf = T.Tensor(x, requires_grad=True)
        T.softmax_cross_entropy(model(leaf), [0, 1]).backward()
        grads.append(leaf.grad)
    np.testing.assert_allclose(grads[0], grads[-1], rtol=1e-11, atol=1e-14)
