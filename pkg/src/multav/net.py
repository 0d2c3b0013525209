"""Toy residual 3D-conv video classifier with optional non-local denoising.

Architecture, per stage ``i`` with width ``w_i``::

    h = relu(conv3x3x3(h)) + skip(h)      # skip: identity, zero-padded channels
    h = denoise(h)                        # optional, Gaussian non-local means
    h = avg_pool(h, 2)                    # between stages only

followed by global average pooling and a dense layer to ``K`` logits.
Videos come in as (F, C, H, W) or batched (N, F, C, H, W); internally the
layout is (N, C, F, H, W).
"""

import dataclasses
import io
import struct
from collections import OrderedDict

import numpy as np

from . import tensor as T
from .config import ConfigError, KVReader, dump_kv, fmt, parse_kv

__all__ = ["NetworkConfig", "VideoNet", "build_model", "nonlocal_mean", "nonlocal_weights",
           "nonlocal_means_gaussian", "save_checkpoint", "load_checkpoint",
           "CheckpointError", "DENOISE_KINDS"]

DENOISE_KINDS = ("none", "nl3d", "nl2d")
MAGIC = b"MAVK"
# Fixed input standardization; pixels arrive in [0, 1].
INPUT_CENTER = 0.5
INPUT_SCALE = 0.25
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class NetworkConfig:
    input_shape: tuple = (4, 1, 16, 16)
    widths: tuple = (8, 16)
    num_classes: int = 4
    denoise: str = "none"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "widths", tuple(int(v) for v in self.widths))
        if len(self.input_shape) != 4 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be 4 positive extents, got {self.input_shape}")
        if not self.widths or min(self.widths) < 1:
            raise ConfigError(f"widths must be nonempty and >= 1, got {self.widths}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.denoise not in DENOISE_KINDS:
            raise ConfigError(f"denoise must be one of {DENOISE_KINDS}, got {self.denoise!r}")
        F, _, H, W = self.input_shape
        for _ in range(len(self.widths) - 1):
            kd = _temporal_pool(F)
            if F % kd or H % 2 or W % 2:
                raise ConfigError(
                    f"input {self.input_shape} is not divisible by the pooling between "
                    f"{len(self.widths)} stages")
            F, H, W = F // kd, H // 2, W // 2

    def to_kv(self):
        return {"input_shape": fmt(self.input_shape), "widths": fmt(self.widths),
                "num_classes": fmt(self.num_classes), "denoise": self.denoise,
                "seed": fmt(self.seed)}

    @classmethod
    def from_kv(cls, items, where="network config"):
        r = KVReader(items, where=where)
        kw = {}
        if r.has("input_shape"):
            kw["input_shape"] = tuple(r.get_int_list("input_shape"))
        if r.has("widths"):
            kw["widths"] = tuple(r.get_int_list("widths"))
        if r.has("num_classes"):
            kw["num_classes"] = r.get_int("num_classes")
        if r.has("denoise"):
            kw["denoise"] = r.get_str("denoise")
        if r.has("seed"):
            kw["seed"] = r.get_int("seed")
        r.finish()
        return cls(**kw)


def _temporal_pool(frames):
    return 2 if frames > 1 else 1


# ---------------------------------------------------------------------------
# non-local means
# ---------------------------------------------------------------------------

def _group(feature, mode):
    """(N,C,D,H,W) -> (N,G,C,L): G groups whose positions attend to each other."""
    N, C, D, H, W = feature.shape
    if mode == "3d":
        return T.reshape(feature, (N, 1, C, D * H * W))
    if mode == "2d":
        return T.reshape(T.transpose(feature, (0, 2, 1, 3, 4)), (N, D, C, H * W))
    raise ValueError(f"non-local mode must be '3d' or '2d', got {mode!r}")


def _ungroup(grouped, shape, mode):
    N, C, D, H, W = shape
    if mode == "3d":
        return T.reshape(grouped, shape)
    return T.transpose(T.reshape(grouped, (N, D, C, H, W)), (0, 2, 1, 3, 4))


def _batched(feature):
    feature = feature if isinstance(feature, T.Tensor) else T.Tensor(feature)
    if feature.ndim == 4:
        return T.reshape(feature, (1,) + feature.shape), True
    if feature.ndim != 5:
        raise ValueError(f"feature must be (C,D,H,W) or (N,C,D,H,W), got {feature.shape}")
    return feature, False


def nonlocal_weights(feature, mode):
    """Attention weights, shape (N, G, L, L); row i holds w_ij over positions j."""
    with T.no_grad():
        f, _ = _batched(feature)
        g = _group(f, mode)
        scores = T.matmul(T.transpose(g, (0, 1, 3, 2)), g)
        return T.softmax(scores, axis=-1).data


def nonlocal_mean(feature, mode):
    """out_i = sum_j softmax_j(f_i . f_j) f_j, pooled over space-time (3d) or per frame (2d)."""
    f, squeeze = _batched(feature)
    g = _group(f, mode)                                   # (N,G,C,L)
    scores = T.matmul(T.transpose(g, (0, 1, 3, 2)), g)    # (N,G,L,L)
    w = T.softmax(scores, axis=-1)
    out = _ungroup(T.matmul(g, T.transpose(w, (0, 1, 3, 2))), f.shape, mode)
    return T.reshape(out, out.shape[1:]) if squeeze else out


def nonlocal_means_gaussian(feature, mode, proj_weight, proj_bias=None):
    """Denoising block: ``feature + conv1x1x1(nonlocal_mean(feature))``."""
    f, squeeze = _batched(feature)
    w = proj_weight if isinstance(proj_weight, T.Tensor) else T.Tensor(proj_weight)
    if w.ndim == 2:
        w = T.reshape(w, w.shape + (1, 1, 1))
    out = T.add(f, T.conv3d(nonlocal_mean(f, mode), w, proj_bias))
    return T.reshape(out, out.shape[1:]) if squeeze else out


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class VideoNet:
    """Callable classifier; ``model(x)`` returns logits as a :class:`Tensor`."""

    def __init__(self, config, params=None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        expected = param_shapes(config)
        if list(self.params) != list(expected):
            raise ConfigError("parameter names do not match the network config")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ConfigError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    @property
    def stage_names(self):
        names = []
        for i in range(len(self.config.widths)):
            names.append(f"conv{i + 1}")
            if self.config.denoise != "none":
                names.append(f"denoise{i + 1}")
        return names

    def _prepare(self, x):
        x = x if isinstance(x, T.Tensor) else T.Tensor(x)
        single = x.ndim == 4
        if single:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 5 or x.shape[1:] != self.config.input_shape:
            raise ValueError(
                f"expected video (F,C,H,W)={self.config.input_shape} or a batch of them, got {x.shape}")
        return T.mul(T.sub(T.transpose(x, (0, 2, 1, 3, 4)), INPUT_CENTER), 1.0 / INPUT_SCALE), single

    def _run(self, x, taps=None):
        p = self.params
        h, single = self._prepare(x)
        mode = {"nl3d": "3d", "nl2d": "2d"}.get(self.config.denoise)
        n_stages = len(self.config.widths)
        for i, width in enumerate(self.config.widths):
            s = f"stage{i + 1}"
            y = T.relu(T.conv3d(h, p[f"{s}.conv.weight"], p[f"{s}.conv.bias"], padding=1))
            extra = width - h.shape[1]
            skip = h if extra == 0 else T.pad(h, [(0, 0), (0, extra), (0, 0), (0, 0), (0, 0)])
            h = T.add(y, skip) if extra >= 0 else y
            if taps is not None:
                taps[f"conv{i + 1}"] = h
            if mode is not None:
                h = nonlocal_means_gaussian(h, mode, p[f"{s}.denoise.weight"], p[f"{s}.denoise.bias"])
                if taps is not None:
                    taps[f"denoise{i + 1}"] = h
            if i < n_stages - 1:
                h = T.avg_pool3d(h, (_temporal_pool(h.shape[2]), 2, 2))
        pooled = T.mean(h, axis=(2, 3, 4))                        # (N, C)
        logits = T.add(T.matmul(pooled, T.transpose(p["fc.weight"], (1, 0))), p["fc.bias"])
        if single:
            logits = T.reshape(logits, (self.config.num_classes,))
        return logits

    def __call__(self, x):
        return self._run(x)

    def features(self, x):
        """Stage outputs keyed by stage name, each (N, C, F', H', W')."""
        taps = {}
        self._run(x, taps)
        return taps

    def predict(self, x, batch_size=256):
        x = np.asarray(x)
        single = x.ndim == 4
        xb = x[None] if single else x
        out = []
        with T.no_grad():
            for i in range(0, len(xb), batch_size):
                out.append(np.argmax(self._run(xb[i:i + batch_size]).data, axis=-1))
        pred = np.concatenate(out) if out else np.empty(0, dtype=np.int64)
        return int(pred[0]) if single else pred

    def requires_grad_(self, flag=True):
        for t in self.params.values():
            t.requires_grad = flag
            t.grad = None
        return self

    def copy(self):
        return VideoNet(self.config, OrderedDict((k, T.Tensor(v.data)) for k, v in self.params.items()))


def param_shapes(config):
    shapes = OrderedDict()
    cin = config.input_shape[1]
    for i, w in enumerate(config.widths):
        s = f"stage{i + 1}"
        shapes[f"{s}.conv.weight"] = (w, cin, 3, 3, 3)
        shapes[f"{s}.conv.bias"] = (w,)
        if config.denoise != "none":
            shapes[f"{s}.denoise.weight"] = (w, w, 1, 1, 1)
            shapes[f"{s}.denoise.bias"] = (w,)
        cin = w
    shapes["fc.weight"] = (config.num_classes, cin)
    shapes["fc.bias"] = (config.num_classes,)
    return shapes


def init_params(config):
    """Seeded uniform init: weights U(+-sqrt(6/fan_in)), biases U(+-1/sqrt(fan_in))."""
    rng = np.random.default_rng(config.seed)
    shapes = param_shapes(config)
    params = OrderedDict()
    for name, shape in shapes.items():
        wshape = shapes[name.rsplit(".", 1)[0] + ".weight"]
        fan_in = int(np.prod(wshape[1:]))
        gain = np.sqrt(6.0) if name.endswith(".weight") else 1.0
        s = gain / np.sqrt(fan_in)
        params[name] = T.Tensor(rng.uniform(-s, s, size=shape))
    return params


def build_model(config):
    return VideoNet(config)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model, path):
    """Write ``model``'s config and params to ``path`` (see package docs for layout)."""
    text = dump_kv(model.config.to_kv()).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(model.params)))
    for name, t in model.params.items():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read(fh, n, what):
    b = fh.read(n)
    if len(b) != n:
        raise CheckpointError(f"corrupt checkpoint: truncated while reading {what}")
    return b


def load_checkpoint(path, expected_config=None):
    """Read a checkpoint and return the :class:`VideoNet` it describes.

    Raises :class:`CheckpointError` on bad magic, version mismatch,
    truncation, or when ``expected_config`` differs from the stored one.
    """
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        version, tlen = struct.unpack("<II", _read(fh, 8, "header"))
        if version != VERSION:
            raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
        try:
            config = NetworkConfig.from_kv(parse_kv(_read(fh, tlen, "config").decode("utf-8")))
        except (UnicodeDecodeError, ConfigError) as exc:
            raise CheckpointError(f"{path}: corrupt config header ({exc})") from None
        if expected_config is not None and expected_config != config:
            raise CheckpointError(
                f"{path}: config mismatch: file has {config}, expected {expected_config}")
        (count,) = struct.unpack("<I", _read(fh, 4, "tensor count"))
        params = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read(fh, 4, "name length"))
            name = _read(fh, nlen, "name").decode("utf-8", errors="replace")
            (rank,) = struct.unpack("<I", _read(fh, 4, "rank"))
            shape = struct.unpack(f"<{rank}I", _read(fh, 4 * rank, "extents"))
            numel = int(np.prod(shape))
            vals = np.frombuffer(_read(fh, 8 * numel, f"values of {name}"), dtype="<f8")
            params[name] = T.Tensor(vals.reshape(shape))
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last tensor")
    try:
        return VideoNet(config, params)
    except ConfigError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
