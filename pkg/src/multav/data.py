"""Synthetic moving-square video classification data.

Class ``c`` of ``K`` is a bright square translating in direction
``2*pi*c/K`` across the frames, drawn on a flat background with per-pixel
uniform noise. Direction is only recoverable from temporal order, so
shuffling frames makes opposite classes ambiguous.

Binary format (little-endian)::

    b"MAVD" | u32 version | u32 len | spec text (key = value, utf-8)
    u32 n_train | u32 n_test
    n_train + n_test records of: u32 label | F*C*H*W float64
"""

import dataclasses
import io
import struct

import numpy as np

from .config import ConfigError, KVReader, dump_kv, fmt, parse_kv

__all__ = ["DatasetSpec", "Dataset", "generate", "save_dataset", "load_dataset",
           "DatasetFormatError", "MAGIC", "VERSION"]

MAGIC = b"MAVD"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 4
    train_per_class: int = 96
    test_per_class: int = 24
    frames: int = 4
    channels: int = 1
    height: int = 16
    width: int = 16
    square: int = 6
    speed: float = 2.0
    intensity: float = 0.55
    background: float = 0.45
    noise: float = 0.12
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if min(self.train_per_class, self.test_per_class) < 0:
            raise ConfigError("per-class counts must be >= 0")
        if min(self.frames, self.channels, self.height, self.width, self.square) < 1:
            raise ConfigError("frames, channels, height, width and square must be >= 1")
        if self.noise < 0 or self.speed < 0:
            raise ConfigError("noise and speed must be >= 0")
        travel = self.speed * (self.frames - 1)
        if self.square + travel > min(self.height, self.width):
            raise ConfigError(
                f"a {self.square}px square moving {travel:g}px does not fit a "
                f"{self.height}x{self.width} frame")

    @property
    def video_shape(self):
        return (self.frames, self.channels, self.height, self.width)

    def to_kv(self):
        return {f.name: fmt(getattr(self, f.name)) for f in dataclasses.fields(self)}

    @classmethod
    def from_kv(cls, items, where="dataset spec"):
        r = KVReader(items, where=where)
        kw = {}
        for f in dataclasses.fields(cls):
            if r.has(f.name):
                kw[f.name] = (r.get_float if f.type in (float, "float") else r.get_int)(f.name)
        r.finish()
        return cls(**kw)


@dataclasses.dataclass
class Dataset:
    """Videos ``x`` of shape (N, F, C, H, W) with integer labels ``y``."""
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    def __iter__(self):
        return iter(zip(self.x, self.y))

    def subset(self, idx):
        return Dataset(self.x[idx], self.y[idx])


def _coverage(start, size, n):
    """Fraction of each unit pixel [j, j+1) covered by [start, start+size)."""
    j = np.arange(n)
    return np.clip(np.minimum(j + 1, start + size) - np.maximum(j, start), 0.0, 1.0)


def render_video(spec, label, start, rng):
    """One video of class ``label`` whose square's top-left starts at ``start`` (row, col)."""
    F, C, H, W = spec.video_shape
    theta = 2.0 * np.pi * label / spec.num_classes
    step = spec.speed * np.array([-np.sin(theta), np.cos(theta)])  # rows grow downward
    video = np.empty((F, C, H, W))
    for t in range(F):
        r, c = start + t * step
        cover = np.outer(_coverage(r, spec.square, H), _coverage(c, spec.square, W))
        frame = spec.background + (spec.intensity - spec.background) * cover
        video[t] = frame[None]
    video += rng.uniform(-spec.noise, spec.noise, size=video.shape)
    return np.clip(video, 0.0, 1.0)


def _start_range(spec, label):
    theta = 2.0 * np.pi * label / spec.num_classes
    travel = spec.speed * (spec.frames - 1) * np.array([-np.sin(theta), np.cos(theta)])
    lo = np.maximum(0.0, -travel)
    hi = np.array([spec.height, spec.width]) - spec.square - np.maximum(0.0, travel)
    return lo, hi


def _split(spec, per_class, rng):
    n = per_class * spec.num_classes
    x = np.empty((n,) + spec.video_shape)
    y = np.empty(n, dtype=np.int64)
    i = 0
    for _ in range(per_class):
        for c in range(spec.num_classes):
            lo, hi = _start_range(spec, c)
            start = rng.uniform(lo, hi)
            x[i] = render_video(spec, c, start, rng)
            y[i] = c
            i += 1
    return Dataset(x, y)


def generate(spec):
    """Deterministic (train, test) splits drawn from independent seed streams."""
    train_ss, test_ss = np.random.SeedSequence(spec.seed).spawn(2)
    train = _split(spec, spec.train_per_class, np.random.default_rng(train_ss))
    test = _split(spec, spec.test_per_class, np.random.default_rng(test_ss))
    return train, test


def save_dataset(path, spec, train, test):
    text = dump_kv(spec.to_kv()).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(text)))
    buf.write(text)
    buf.write(struct.pack("<II", len(train), len(test)))
    for ds in (train, test):
        for video, label in ds:
            if video.shape != spec.video_shape:
                raise ValueError(f"video shape {video.shape} != spec {spec.video_shape}")
            buf.write(struct.pack("<I", int(label)))
            buf.write(np.ascontiguousarray(video, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read(fh, n, what):
    b = fh.read(n)
    if len(b) != n:
        raise DatasetFormatError(f"corrupt dataset file: truncated while reading {what}")
    return b


def load_dataset(path, expected_shape=None):
    """Read a dataset file; returns ``(spec, train, test)``."""
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise DatasetFormatError(f"{path}: not a dataset file (bad magic)")
        version, tlen = struct.unpack("<II", _read(fh, 8, "header"))
        if version != VERSION:
            raise DatasetFormatError(f"{path}: dataset format version {version}, expected {VERSION}")
        try:
            spec = DatasetSpec.from_kv(parse_kv(_read(fh, tlen, "spec").decode("utf-8")))
        except (UnicodeDecodeError, ConfigError) as exc:
            raise DatasetFormatError(f"{path}: corrupt spec header ({exc})") from None
        if expected_shape is not None and tuple(expected_shape) != spec.video_shape:
            raise DatasetFormatError(
                f"{path}: video shape {spec.video_shape} does not match expected {tuple(expected_shape)}")
        n_train, n_test = struct.unpack("<II", _read(fh, 8, "counts"))
        numel = int(np.prod(spec.video_shape))
        splits = []
        for n in (n_train, n_test):
            x = np.empty((n,) + spec.video_shape)
            y = np.empty(n, dtype=np.int64)
            for i in range(n):
                (y[i],) = struct.unpack("<I", _read(fh, 4, "label"))
                x[i] = np.frombuffer(_read(fh, 8 * numel, "video"), dtype="<f8").reshape(spec.video_shape)
            splits.append(Dataset(x, y))
        if fh.read(1):
            raise DatasetFormatError(f"{path}: trailing bytes after last record")
    return spec, splits[0], splits[1]
