"""Hot 3D convolution kernels.

Two interchangeable backends live here:

* ``numba`` -- compiled im2col/col2im loops around a BLAS matmul.
* ``numpy`` -- im2col through ``sliding_window_view`` + ``tensordot``.

The backend is picked once at import from the ``MULTAV_BACKEND`` environment
variable (``numba`` or ``numpy``). When unset, numba is used if it imports.
``set_backend`` switches at runtime (benchmarks and cross-checks use it).
Both backends agree to rounding; each is deterministic on its own.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None
    HAVE_NUMBA = False

_BACKENDS = ("numba", "numpy")


def _default_backend():
    name = os.environ.get("MULTAV_BACKEND", "").strip().lower()
    if name == "":
        return "numba" if HAVE_NUMBA else "numpy"
    if name not in _BACKENDS:
        raise ValueError(f"MULTAV_BACKEND must be one of {_BACKENDS}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ValueError("MULTAV_BACKEND=numba but numba is not importable")
    return name


_backend = _default_backend()


def get_backend():
    return _backend


def set_backend(name):
    """Select the kernel backend; returns the previous one."""
    global _backend
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose from {_BACKENDS}")
    if name == "numba" and not HAVE_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    prev, _backend = _backend, name
    return prev


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------

def _windows(xp, ksize, stride):
    cols = sliding_window_view(xp, ksize, axis=(2, 3, 4))
    sd, sh, sw = stride
    return cols[:, :, ::sd, ::sh, ::sw]


def conv3d_forward_numpy(xp, w, stride):
    cols = _windows(xp, w.shape[2:], stride)  # (N,Ci,Do,Ho,Wo,KD,KH,KW)
    out = np.tensordot(cols, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    return np.ascontiguousarray(np.moveaxis(out, 4, 1))


def conv3d_backward_input_numpy(gout, w, padded_shape, stride):
    gxp = np.zeros(padded_shape)
    _, _, KD, KH, KW = w.shape
    _, _, Do, Ho, Wo = gout.shape
    sd, sh, sw = stride
    # (N,Do,Ho,Wo,Ci,KD,KH,KW)
    gcols = np.tensordot(gout, w, axes=([1], [0]))
    gcols = np.moveaxis(gcols, 4, 1)  # (N,Ci,Do,Ho,Wo,KD,KH,KW)
    for kd in range(KD):
        for kh in range(KH):
            for kw in range(KW):
                gxp[:, :,
                    kd:kd + sd * (Do - 1) + 1:sd,
                    kh:kh + sh * (Ho - 1) + 1:sh,
                    kw:kw + sw * (Wo - 1) + 1:sw] += gcols[..., kd, kh, kw]
    return gxp


def conv3d_backward_weight_numpy(xp, gout, ksize, stride):
    cols = _windows(xp, ksize, stride)
    return np.tensordot(gout, cols, axes=([0, 2, 3, 4], [0, 2, 3, 4]))


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------
# Channels-last layouts: xp (N,Dp,Hp,Wp,Ci), out/gout rows (N*Do*Ho*Wo, Co).
# The gathers and scatters are compiled loops; the contraction goes to BLAS,
# which beats a hand-written inner loop when channel counts are this small.

if HAVE_NUMBA:
    @njit(cache=True)
    def _im2col_nb(xp, KD, KH, KW, sd, sh, sw, Do, Ho, Wo, cols):
        N = xp.shape[0]
        Ci = xp.shape[4]
        m = 0
        for n in range(N):
            for od in range(Do):
                for oh in range(Ho):
                    for ow in range(Wo):
                        j = 0
                        for kd in range(KD):
                            for kh in range(KH):
                                for kw in range(KW):
                                    src = xp[n, od * sd + kd, oh * sh + kh, ow * sw + kw]
                                    for ci in range(Ci):
                                        cols[m, j] = src[ci]
                                        j += 1
                        m += 1

    @njit(cache=True)
    def _col2im_nb(gcols, KD, KH, KW, sd, sh, sw, Do, Ho, Wo, gxp):
        N = gxp.shape[0]
        Ci = gxp.shape[4]
        m = 0
        for n in range(N):
            for od in range(Do):
                for oh in range(Ho):
                    for ow in range(Wo):
                        j = 0
                        for kd in range(KD):
                            for kh in range(KH):
                                for kw in range(KW):
                                    dst = gxp[n, od * sd + kd, oh * sh + kh, ow * sw + kw]
                                    for ci in range(Ci):
                                        dst[ci] += gcols[m, j]
                                        j += 1
                        m += 1


def _to_cl(a):
    return np.ascontiguousarray(np.moveaxis(a, 1, -1))


def _from_cl(a):
    return np.ascontiguousarray(np.moveaxis(a, -1, 1))


def _weight_mat(w):
    """(Co,Ci,KD,KH,KW) -> (KD*KH*KW*Ci, Co), matching the im2col column order."""
    return np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0)).reshape(-1, w.shape[0])


def _out_shape(padded_shape, ksize, stride):
    _, _, Dp, Hp, Wp = padded_shape
    KD, KH, KW = ksize
    sd, sh, sw = stride
    return (Dp - KD) // sd + 1, (Hp - KH) // sh + 1, (Wp - KW) // sw + 1


def _im2col(xp, ksize, stride):
    N, Ci = xp.shape[:2]
    Do, Ho, Wo = _out_shape(xp.shape, ksize, stride)
    cols = np.empty((N * Do * Ho * Wo, int(np.prod(ksize)) * Ci))
    _im2col_nb(_to_cl(xp), *ksize, *stride, Do, Ho, Wo, cols)
    return cols


def _gout_rows(gout):
    return _to_cl(gout).reshape(-1, gout.shape[1])


def conv3d_forward(xp, w, stride):
    """Valid (unpadded) cross-correlation of ``xp`` (N,Ci,D,H,W) with ``w``."""
    if _backend == "numpy":
        return conv3d_forward_numpy(xp, w, stride)
    ksize = w.shape[2:]
    Do, Ho, Wo = _out_shape(xp.shape, ksize, stride)
    out = _im2col(xp, ksize, stride) @ _weight_mat(w)
    return _from_cl(out.reshape(xp.shape[0], Do, Ho, Wo, w.shape[0]))


def conv3d_backward_input(gout, w, padded_shape, stride):
    if _backend == "numpy":
        return conv3d_backward_input_numpy(gout, w, padded_shape, stride)
    N, Ci, Dp, Hp, Wp = padded_shape
    _, _, Do, Ho, Wo = gout.shape
    gcols = _gout_rows(gout) @ _weight_mat(w).T
    gxp = np.zeros((N, Dp, Hp, Wp, Ci))
    _col2im_nb(gcols, *w.shape[2:], *stride, Do, Ho, Wo, gxp)
    return _from_cl(gxp)


def conv3d_backward_weight(xp, gout, ksize, stride):
    if _backend == "numpy":
        return conv3d_backward_weight_numpy(xp, gout, ksize, stride)
    ksize = tuple(ksize)
    gw = _im2col(xp, ksize, stride).T @ _gout_rows(gout)
    Ci, Co = xp.shape[1], gout.shape[1]
    return np.ascontiguousarray(gw.reshape(ksize + (Ci, Co)).transpose(4, 3, 0, 1, 2))
