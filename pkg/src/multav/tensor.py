"""Minimal reverse-mode differentiation over dense float64 arrays.

Each op returns a new :class:`Tensor`. When any input requires a gradient,
the output records its parents and a closure mapping the output gradient to
one gradient per parent. :meth:`Tensor.backward` walks the recorded graph in
reverse topological order and accumulates ``.grad`` on leaf tensors.

Only what the video classifier needs is provided: elementwise arithmetic,
``scalar_pow_elementwise`` (a positive scalar raised to a tensor), 3D
convolution, average pooling, reshapes, batched matmul, softmax and the
softmax cross-entropy loss.
"""

import contextlib
import threading

import numpy as np

from . import _kernels

__all__ = [
    "Tensor", "no_grad", "is_grad_enabled", "record_relu_inputs",
    "add", "sub", "mul", "neg", "scalar_pow_elementwise", "exp", "log", "relu",
    "conv3d", "avg_pool3d", "flatten", "reshape", "transpose", "pad", "matmul",
    "sum", "mean", "softmax", "softmax_cross_entropy", "cross_entropy_per_example",
    "finite_diff_grad",
]

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def record_relu_inputs():
    """Collect a copy of every relu input evaluated inside the block.

    Gradient checks use the sign pattern to detect finite-difference probes
    that straddle a relu kink.
    """
    prev = getattr(_state, "relu_log", None)
    log = []
    _state.relu_log = log
    try:
        yield log
    finally:
        _state.relu_log = prev


class Tensor:
    """Dense float64 array with an optional gradient.

    Parameters
    ----------
    data : array_like
        Values; converted to a float64 ndarray.
    requires_grad : bool
        Whether ``backward`` should populate ``grad`` for this tensor.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        if self.data.ndim == 0:
            self.data = self.data.reshape(())
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def values(self):
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def release_graph(self):
        """Drop references to parents so the graph can be collected."""
        self._parents = ()
        self._backward = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        """Back-propagate from this scalar, accumulating into leaf ``grad``."""
        if self.data.size != 1 or self.data.ndim > 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def neg(a):
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scalar_pow_elementwise(base, exponent):
    """``base ** exponent`` elementwise for a positive scalar ``base``.

    Evaluated as ``exp(exponent * ln(base))``.
    """
    base = float(base)
    if not base > 0.0:
        raise ValueError(f"scalar_pow_elementwise needs base > 0, got {base}")
    e = _as_tensor(exponent)
    lnb = np.log(base)
    out = np.exp(e.data * lnb)

    def backward(g):
        return (g * out * lnb,)

    return _make(out, (e,), backward, "scalar_pow")


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a):
    a = _as_tensor(a)
    log_ = getattr(_state, "relu_log", None)
    if log_ is not None:
        log_.append(a.data.copy())
    on = a.data > 0  # subgradient 0 at exactly 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,), "relu")


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------

def reshape(a, shape):
    a = _as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot view {src} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def flatten(a, start_dim=0):
    a = _as_tensor(a)
    return reshape(a, a.shape[:start_dim] + (-1,))


def transpose(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),), "transpose")


def pad(a, pad_width):
    """Zero padding; ``pad_width`` follows ``numpy.pad``."""
    a = _as_tensor(a)
    pw = [tuple(p) for p in pad_width]
    if len(pw) != a.ndim:
        raise ValueError(f"pad: need {a.ndim} (before, after) pairs, got {len(pw)}")
    sl = tuple(slice(b, b + n) for (b, _), n in zip(pw, a.shape))
    return _make(np.pad(a.data, pw), (a,), lambda g: (g[sl],), "pad")


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    axes = range(a.ndim) if axis is None else np.atleast_1d(axis)
    count = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def matmul(a, b):
    """``numpy.matmul`` semantics for operands of rank >= 2."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul: operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(np.matmul(a.data, b.data), (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# convolution / pooling
# ---------------------------------------------------------------------------

def _triple(v):
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise ValueError(f"expected an int or 3 ints, got {v}")
    return v


def conv3d(x, kernel, bias=None, stride=1, padding=0):
    """3D cross-correlation of ``x`` (N,Ci,D,H,W) with ``kernel`` (Co,Ci,kd,kh,kw).

    Kernel extents must be odd; padding is symmetric zero padding.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 5 or kernel.ndim != 5:
        raise ValueError(f"conv3d: need rank-5 input and kernel, got {x.shape}, {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ValueError(f"conv3d: input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    ksize = kernel.shape[2:]
    if any(k % 2 == 0 for k in ksize):
        raise ValueError(f"conv3d: kernel extents must be odd, got {ksize}")
    stride, padding = _triple(stride), _triple(padding)
    if min(stride) < 1 or min(padding) < 0:
        raise ValueError("conv3d: stride must be >= 1 and padding >= 0")
    pw = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
    xp = np.pad(x.data, pw) if any(padding) else x.data
    if any(xp.shape[2 + i] < ksize[i] for i in range(3)):
        raise ValueError(f"conv3d: kernel {ksize} larger than padded input {xp.shape[2:]}")
    out = _kernels.conv3d_forward(xp, kernel.data, stride)
    parents = [x, kernel]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (kernel.shape[0],):
            raise ValueError(f"conv3d: bias shape {bias.shape} != ({kernel.shape[0]},)")
        out = out + bias.data[None, :, None, None, None]
        parents.append(bias)
    crop = tuple(slice(p, p + n) for p, n in zip(padding, x.shape[2:]))

    def backward(g):
        gx = gk = None
        if x.requires_grad:
            gxp = _kernels.conv3d_backward_input(g, kernel.data, xp.shape, stride)
            gx = gxp[(slice(None), slice(None)) + crop]
        if kernel.requires_grad:
            gk = _kernels.conv3d_backward_weight(xp, g, ksize, stride)
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3, 4))

    return _make(out, parents, backward, "conv3d")


def avg_pool3d(x, kernel):
    """Non-overlapping average pooling over the last three axes."""
    x = _as_tensor(x)
    kd, kh, kw = _triple(kernel)
    N, C, D, H, W = x.shape
    if D % kd or H % kh or W % kw:
        raise ValueError(f"avg_pool3d: extents {(D, H, W)} not divisible by {(kd, kh, kw)}")
    v = x.data.reshape(N, C, D // kd, kd, H // kh, kh, W // kw, kw)
    out = v.mean(axis=(3, 5, 7))
    scale = 1.0 / (kd * kh * kw)

    def backward(g):
        g = g[:, :, :, None, :, None, :, None] * scale
        return (np.broadcast_to(g, v.shape).reshape(x.shape).copy(),)

    return _make(out, (x,), backward, "avg_pool3d")


# ---------------------------------------------------------------------------
# softmax / loss
# ---------------------------------------------------------------------------

def _softmax(z, axis):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis=-1):
    a = _as_tensor(a)
    p = _softmax(a.data, axis)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (a,), backward, "softmax")


def _labels(logits, labels):
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if logits.ndim == 1:
        if labels.size != 1:
            raise ValueError("single logits vector needs a single label")
    elif logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    K = logits.shape[-1]
    if np.any(labels < 0) or np.any(labels >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    return labels


def cross_entropy_per_example(logits, labels):
    """Per-example loss as a plain array (no graph)."""
    z = np.atleast_2d(_as_tensor(logits).data)
    labels = _labels(z if z.shape[0] > 1 else z[0], labels)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(z.shape[0]), labels]


def softmax_cross_entropy(logits, labels, reduction="mean"):
    """Cross-entropy of softmax(logits) against integer ``labels``.

    ``logits`` is (K,) with one label or (N, K) with N labels. ``reduction``
    is ``"mean"`` or ``"sum"`` over the batch.
    """
    logits = _as_tensor(logits)
    labels = _labels(logits.data, labels)
    z = np.atleast_2d(logits.data)
    n = z.shape[0]
    p = _softmax(z, axis=1)
    zs = z - z.max(axis=1, keepdims=True)
    per = np.log(np.exp(zs).sum(axis=1)) - zs[np.arange(n), labels]
    if reduction == "mean":
        scale = 1.0 / n
    elif reduction == "sum":
        scale = 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def backward(g):
        d = p.copy()
        d[np.arange(n), labels] -= 1.0
        return ((float(g) * scale * d).reshape(logits.shape),)

    return _make(np.asarray(per.sum() * scale), (logits,), backward, "softmax_xent")


# ---------------------------------------------------------------------------
# verification oracle
# ---------------------------------------------------------------------------

def finite_diff_grad(f, x, h=1e-4):
    """Central-difference gradient of scalar ``f`` at array ``x``.

    ``f`` receives a float64 array shaped like ``x`` and returns a float.
    """
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)
