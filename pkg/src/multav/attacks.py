"""Additive and multiplicative (MultAV) gradient attacks on video tensors.

Pixel domain is [0, 1]. Every clip operator works on one video, or on a
batch when called with ``batched=True`` (norms are then taken per video over
all of its F*C*H*W elements). Ratio maps use the convention ``ratio = 1``
wherever the clean pixel is 0: multiplication cannot move a zero pixel.

The iterative driver starts at the clean input (no random start unless
asked), and per iteration takes the gradient of the true-label loss, applies
the step rule on mask-true elements only, projects with the constraint's
clip, and clamps to [0, 1].
"""

import dataclasses
import math

import numpy as np

from . import tensor as T
from .config import REQUIRED, ConfigError, KVReader, fmt

__all__ = [
    "MaskSpec", "AttackSpec", "AttackResult",
    "clip_linf_add", "clip_l2_add", "clip_rb_linf", "clip_rb_l2", "ratio_map",
    "step_add_linf", "step_add_l2", "step_mult_linf", "step_mult_l2",
    "signal_dependent_form", "loss_and_input_grad", "make_mask", "make_masks",
    "run_attack", "run_attack_batch", "attack_dataset",
    "PUBLISHED_ATTACKS", "COUNTERPART", "MULTAV_TYPES", "desk_attack", "scale_mask",
    "REFERENCE_FRAME",
]

FAMILIES = ("additive", "multiplicative")
CONSTRAINTS = ("linf", "l2")
MASK_KINDS = ("roa", "af", "spa")
RB_L2_INTERPRETATIONS = ("deviation", "literal")


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class MaskSpec:
    """Where an attack may perturb.

    ``roa``: a ``height`` x ``width`` rectangle, same place on every frame,
    positioned by loss-maximizing grid search (``stride``, gray ``fill``).
    ``af``: a border of ``frame_width`` pixels on every frame.
    ``spa``: the ``k`` pixels per frame with the largest clean-input
    gradient magnitude (channel-summed).
    """
    kind: str
    height: int = 30
    width: int = 30
    placement: str = "grid"
    stride: int = 1
    fill: float = 0.5
    frame_width: int = 10
    k: int = 100
    selection: str = "gradient"

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ConfigError(f"mask.kind must be one of {MASK_KINDS}, got {self.kind!r}")
        if self.placement != "grid":
            raise ConfigError(f"mask.placement must be 'grid', got {self.placement!r}")
        if self.selection != "gradient":
            raise ConfigError(f"mask.selection must be 'gradient', got {self.selection!r}")
        if min(self.height, self.width, self.stride, self.frame_width, self.k) < 1:
            raise ConfigError("mask sizes, stride and k must be >= 1")

    def check_frame(self, H, W):
        if self.kind == "roa" and (self.height > H or self.width > W):
            raise ConfigError(f"ROA rectangle {self.height}x{self.width} larger than frame {H}x{W}")
        if self.kind == "af" and not 2 * self.frame_width < min(H, W):
            raise ConfigError(f"framing width {self.frame_width} must be < min(H, W)/2 for a {H}x{W} frame")

    def to_kv(self, prefix="mask."):
        d = {"kind": self.kind}
        if self.kind == "roa":
            d.update(height=self.height, width=self.width, placement=self.placement,
                     stride=self.stride, fill=self.fill)
        elif self.kind == "af":
            d.update(frame_width=self.frame_width)
        else:
            d.update(k=self.k, selection=self.selection)
        return {prefix + k: fmt(v) for k, v in d.items()}

    @classmethod
    def from_reader(cls, r):
        kw = {"kind": r.get_str("kind", REQUIRED)}
        for key, get in (("height", r.get_int), ("width", r.get_int), ("stride", r.get_int),
                         ("frame_width", r.get_int), ("k", r.get_int), ("fill", r.get_float),
                         ("placement", r.get_str), ("selection", r.get_str)):
            if r.has(key):
                kw[key] = get(key)
        return cls(**kw)


@dataclasses.dataclass(frozen=True)
class AttackSpec:
    family: str
    constraint: str
    epsilon: float
    alpha: float
    steps: int
    mask: MaskSpec = None
    seed: int = 0
    rb_l2_interpretation: str = "deviation"
    random_start: bool = False
    name: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.constraint not in CONSTRAINTS:
            raise ConfigError(f"constraint must be one of {CONSTRAINTS}, got {self.constraint!r}")
        if self.rb_l2_interpretation not in RB_L2_INTERPRETATIONS:
            raise ConfigError(f"rb_l2_interpretation must be one of {RB_L2_INTERPRETATIONS}")
        if not self.steps >= 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if not (math.isfinite(self.epsilon) and math.isfinite(self.alpha)):
            raise ConfigError("epsilon and alpha must be finite")
        if self.family == "additive":
            if self.epsilon < 0 or self.alpha < 0:
                raise ConfigError("additive epsilon and alpha must be >= 0")
        else:
            if not self.alpha > 1:
                raise ConfigError(f"multiplicative alpha must be > 1, got {self.alpha}")
            if self.constraint == "linf" and self.epsilon < 1:
                raise ConfigError(f"ratio bound epsilon must be >= 1, got {self.epsilon}")
            if self.constraint == "l2" and not self.epsilon > 0:
                raise ConfigError(f"RB-l2 epsilon must be > 0, got {self.epsilon}")

    @property
    def label(self):
        if self.name:
            return self.name
        base = {"additive": "pgd", "multiplicative": "multav"}[self.family]
        return f"{base}_{self.mask.kind}" if self.mask else f"{base}_{self.constraint}"

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_kv(self):
        d = {"family": self.family, "constraint": self.constraint,
             "epsilon": fmt(float(self.epsilon)), "alpha": fmt(float(self.alpha)),
             "steps": fmt(self.steps), "seed": fmt(self.seed),
             "rb_l2_interpretation": self.rb_l2_interpretation,
             "random_start": fmt(self.random_start)}
        if self.name:
            d["name"] = self.name
        if self.mask is not None:
            d.update(self.mask.to_kv())
        return d

    @classmethod
    def from_kv(cls, items, where="attack config"):
        r = KVReader(items, where=where)
        spec = cls.from_reader(r)
        r.finish()
        return spec

    @classmethod
    def from_reader(cls, r):
        mr = r.sub("mask.")
        mask = None
        if mr.items:
            mask = MaskSpec.from_reader(mr)
            mr.finish()
        kw = dict(family=r.get_str("family", REQUIRED), constraint=r.get_str("constraint", REQUIRED),
                  epsilon=r.get_float("epsilon", REQUIRED), alpha=r.get_float("alpha", REQUIRED),
                  steps=r.get_int("steps", REQUIRED), mask=mask)
        for key, get in (("seed", r.get_int), ("rb_l2_interpretation", r.get_str),
                         ("random_start", r.get_bool), ("name", r.get_str)):
            if r.has(key):
                kw[key] = get(key)
        return cls(**kw)


@dataclasses.dataclass
class AttackResult:
    """Outcome of one attack on one video.

    ``delta = x_adv - x`` (additive view) and ``ratio = x_adv / x`` with
    ratio 1 at zero pixels (multiplicative view). ``loss_trace`` holds the
    true-label loss at x^0 .. x^T.
    """
    x_adv: np.ndarray
    delta: np.ndarray
    ratio: np.ndarray
    loss_trace: list
    warnings: list = dataclasses.field(default_factory=list)
    mask: np.ndarray = None


# ---------------------------------------------------------------------------
# clip operators
# ---------------------------------------------------------------------------

def _check_pair(a, b, op):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _norms(a, batched):
    # scaled by the max magnitude so huge ratios (tiny clean pixels) cannot overflow
    flat = a.reshape(a.shape[0], -1) if batched else a.reshape(1, -1)
    m = np.max(np.abs(flat), axis=1, keepdims=True) if flat.size else np.zeros((flat.shape[0], 1))
    safe = np.where(m > 0, m, 1.0)
    n = (m * np.sqrt(((flat / safe) ** 2).sum(axis=1, keepdims=True)))[:, 0]
    return n.reshape((-1,) + (1,) * (a.ndim - 1)) if batched else n[0]


def ratio_map(x_adv, x):
    x_adv, x = _check_pair(x_adv, x, "ratio_map")
    pos = x > 0
    return np.where(pos, x_adv / np.where(pos, x, 1.0), 1.0)


def clip_linf_add(x_cand, x_orig, eps):
    """Clamp into [x_orig - eps, x_orig + eps], then into [0, 1]."""
    x_cand, x_orig = _check_pair(x_cand, x_orig, "clip_linf_add")
    if eps < 0:
        raise ValueError(f"epsilon must be >= 0, got {eps}")
    return np.clip(np.clip(x_cand, x_orig - eps, x_orig + eps), 0.0, 1.0)


def clip_l2_add(x_cand, x_orig, eps, batched=False):
    """Radially project the difference onto the l2 ball of radius eps, then clamp to [0, 1]."""
    x_cand, x_orig = _check_pair(x_cand, x_orig, "clip_l2_add")
    if eps < 0:
        raise ValueError(f"epsilon must be >= 0, got {eps}")
    d = x_cand - x_orig
    n = _norms(d, batched)
    scale = np.where(n > eps, eps / np.where(n > 0, n, 1.0), 1.0)
    return np.clip(x_orig + d * scale, 0.0, 1.0)


def clip_rb_linf(x_cand, x_orig, eps_m):
    """Ratio-bound clip: keep max(x'/x, x/x') <= eps_m; zero pixels stay 0."""
    x_cand, x_orig = _check_pair(x_cand, x_orig, "clip_rb_linf")
    if not eps_m >= 1:
        raise ValueError(f"ratio bound must be >= 1, got {eps_m}")
    out = np.clip(x_cand, x_orig / eps_m, x_orig * eps_m)
    out = np.where(x_orig > 0, out, 0.0)
    return np.clip(out, 0.0, 1.0)


def clip_rb_l2(x_cand, x_orig, eps_m, interpretation="deviation", batched=False):
    """l2 ratio-bound projection.

    ``deviation``: ||r - 1||_2 <= eps_m, projecting r radially about 1.
    ``literal``: ||r||_2 <= eps_m + 1, rescaling r about 0.
    """
    x_cand, x_orig = _check_pair(x_cand, x_orig, "clip_rb_l2")
    if interpretation not in RB_L2_INTERPRETATIONS:
        raise ValueError(f"interpretation must be one of {RB_L2_INTERPRETATIONS}, got {interpretation!r}")
    if not eps_m > 0:
        raise ValueError(f"epsilon must be > 0, got {eps_m}")
    r = ratio_map(x_cand, x_orig)
    if interpretation == "deviation":
        dev = r - 1.0
        n = _norms(dev, batched)
        scale = np.where(n > eps_m, eps_m / np.where(n > 0, n, 1.0), 1.0)
        r = 1.0 + dev * scale
    else:
        n = _norms(r, batched)
        bound = eps_m + 1.0
        r = r * np.where(n > bound, bound / np.where(n > 0, n, 1.0), 1.0)
    return np.clip(x_orig * r, 0.0, 1.0)


# ---------------------------------------------------------------------------
# step rules
# ---------------------------------------------------------------------------

def _unit(grad, batched):
    n = _norms(grad, batched)
    return grad / np.where(n > 0, n, 1.0)


def step_add_linf(x_t, grad, alpha):
    x_t, grad = _check_pair(x_t, grad, "step_add_linf")
    return x_t + alpha * np.sign(grad)


def step_add_l2(x_t, grad, alpha, batched=False):
    """x_t + alpha * grad / ||grad||_2; a zero gradient gives a zero step."""
    x_t, grad = _check_pair(x_t, grad, "step_add_l2")
    return x_t + alpha * _unit(grad, batched)


def _check_base(alpha_m):
    if not alpha_m > 0:
        raise ValueError(f"multiplicative step size must be > 0, got {alpha_m}")


def step_mult_linf(x_t, grad, alpha_m):
    """x_t * alpha_m ** sign(grad)."""
    x_t, grad = _check_pair(x_t, grad, "step_mult_linf")
    _check_base(alpha_m)
    return x_t * np.exp(np.sign(grad) * math.log(alpha_m))


def step_mult_l2(x_t, grad, alpha_m, batched=False):
    """x_t * alpha_m ** (grad / ||grad||_2); a zero gradient multiplies by 1."""
    x_t, grad = _check_pair(x_t, grad, "step_mult_l2")
    _check_base(alpha_m)
    return x_t * np.exp(_unit(grad, batched) * math.log(alpha_m))


def signal_dependent_form(x_t, grad, alpha_m, constraint, batched=False):
    """The multiplicative step rewritten as a signal-dependent additive one.

    Returns ``x_t + x_t * (alpha_m ** e - 1)`` with ``e`` the sign of the
    gradient (linf) or the l2-normalized gradient (l2). Evaluated with
    ``numpy.power`` so it checks the ``exp``/``log`` path of the step rules
    rather than repeating it.
    """
    x_t, grad = _check_pair(x_t, grad, "signal_dependent_form")
    _check_base(alpha_m)
    if constraint == "linf":
        e = np.sign(grad)
    elif constraint == "l2":
        # pre-scale by max |g| so subnormal gradients still normalize
        keep = (-1,) + (1,) * (grad.ndim - 1)
        if batched:
            m = np.abs(grad).reshape(grad.shape[0], -1).max(axis=1).reshape(keep)
        else:
            m = np.abs(grad).max()
        gs = np.divide(grad, m, out=np.zeros_like(grad), where=m > 0)
        if batched:
            n = np.sqrt(np.einsum("i...,i...->i", gs, gs)).reshape(keep)
        else:
            n = np.sqrt(np.dot(gs.ravel(), gs.ravel()))
        e = np.divide(gs, n, out=np.zeros_like(gs), where=n > 0)
    else:
        raise ValueError(f"constraint must be 'linf' or 'l2', got {constraint!r}")
    return x_t + x_t * (np.power(alpha_m, e) - 1.0)


# ---------------------------------------------------------------------------
# gradients and masks
# ---------------------------------------------------------------------------

def loss_and_input_grad(model, x, labels):
    """Per-example true-label losses and d(sum of losses)/dx for a batch (N,F,C,H,W)."""
    leaf = T.Tensor(x, requires_grad=True)
    logits = model(leaf)
    loss = T.softmax_cross_entropy(logits, labels, reduction="sum")
    loss.backward()
    return T.cross_entropy_per_example(logits.data, labels), leaf.grad


def batch_losses(model, x, labels, batch_size=256):
    out = []
    with T.no_grad():
        for i in range(0, len(x), batch_size):
            logits = model(x[i:i + batch_size])
            out.append(T.cross_entropy_per_example(logits.data, labels[i:i + batch_size]))
    return np.concatenate(out) if out else np.empty(0)


def _roa_positions(spec, H, W):
    rows = range(0, H - spec.height + 1, spec.stride)
    cols = range(0, W - spec.width + 1, spec.stride)
    return [(r, c) for r in rows for c in cols]


def make_masks(spec, x, model, labels, batch_size=256):
    """Boolean masks (N,F,C,H,W) for a batch of videos."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    N, F, C, H, W = x.shape
    spec.check_frame(H, W)
    mask = np.zeros(x.shape, dtype=bool)
    if spec.kind == "af":
        w = spec.frame_width
        mask[..., :w, :] = True
        mask[..., H - w:, :] = True
        mask[..., :, :w] = True
        mask[..., :, W - w:] = True
        return mask
    if spec.kind == "spa":
        _, g = loss_and_input_grad(model, x, labels)
        score = np.abs(g).sum(axis=2).reshape(N, F, H * W)
        k = min(spec.k, H * W)
        top = np.argsort(-score, axis=-1, kind="stable")[..., :k]
        flat = np.zeros((N, F, H * W), dtype=bool)
        np.put_along_axis(flat, top, True, axis=-1)
        mask[:] = flat.reshape(N, F, 1, H, W)
        return mask
    positions = _roa_positions(spec, H, W)
    h, w = spec.height, spec.width
    per_chunk = max(1, batch_size // len(positions))
    for start in range(0, N, per_chunk):
        idx = np.arange(start, min(N, start + per_chunk))
        cand = np.repeat(x[idx], len(positions), axis=0)
        for j, (r, c) in enumerate(positions):
            cand[j::len(positions), :, :, r:r + h, c:c + w] = spec.fill
        losses = batch_losses(model, cand, np.repeat(labels[idx], len(positions)), batch_size)
        best = np.argmax(losses.reshape(len(idx), len(positions)), axis=1)  # first max wins
        for n, b in zip(idx, best):
            r, c = positions[b]
            mask[n, :, :, r:r + h, c:c + w] = True
    return mask


def make_mask(spec, x, model, label):
    """Mask (F,C,H,W) for one video."""
    return make_masks(spec, np.asarray(x)[None], model, np.array([label]))[0]


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _random_start(spec, x, mask, rng):
    u = rng.uniform(-1.0, 1.0, size=x.shape)
    if mask is not None:
        u = u * mask
    if spec.family == "additive":
        if spec.constraint == "linf":
            return clip_linf_add(x + spec.epsilon * u, x, spec.epsilon)
        d = spec.epsilon * _unit(u, True) * rng.uniform(0, 1, size=(len(x),) + (1,) * (x.ndim - 1))
        return clip_l2_add(x + d, x, spec.epsilon, batched=True)
    if spec.constraint == "linf":
        return clip_rb_linf(x * np.exp(u * math.log(spec.epsilon)), x, spec.epsilon)
    r = 1.0 + spec.epsilon * _unit(u, True) * rng.uniform(0, 1, size=(len(x),) + (1,) * (x.ndim - 1))
    return clip_rb_l2(x * np.maximum(r, 0.0), x, spec.epsilon, spec.rb_l2_interpretation, batched=True)


def _step(spec, x_t, g):
    if spec.family == "additive":
        if spec.constraint == "linf":
            return step_add_linf(x_t, g, spec.alpha)
        return step_add_l2(x_t, g, spec.alpha, batched=True)
    if spec.constraint == "linf":
        return step_mult_linf(x_t, g, spec.alpha)
    return step_mult_l2(x_t, g, spec.alpha, batched=True)


def _clip(spec, cand, x):
    if spec.family == "additive":
        if spec.constraint == "linf":
            return clip_linf_add(cand, x, spec.epsilon)
        return clip_l2_add(cand, x, spec.epsilon, batched=True)
    if spec.constraint == "linf":
        return clip_rb_linf(cand, x, spec.epsilon)
    return clip_rb_l2(cand, x, spec.epsilon, spec.rb_l2_interpretation, batched=True)


def run_attack_batch(model, x, labels, spec, masks=None, final_loss=True):
    """Attack a batch (N,F,C,H,W) in lockstep.

    Returns ``(x_adv, trace, warnings, masks)`` where ``trace`` is (N, T+1)
    (or (N, T) with ``final_loss=False``) and ``warnings`` is a list of
    per-example lists.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 5:
        raise ValueError(f"expected a batch of videos (N,F,C,H,W), got shape {x.shape}")
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("input pixels must lie in [0, 1]")
    if spec.mask is not None and masks is None and spec.steps > 0:
        masks = make_masks(spec.mask, x, model, labels)
    n = len(x)
    warnings = [[] for _ in range(n)]
    trace = np.zeros((n, spec.steps + int(final_loss)))
    x_t = x.copy()
    if spec.random_start and spec.steps > 0:
        x_t = _random_start(spec, x, masks, np.random.default_rng(spec.seed))
    for t in range(spec.steps):
        losses, g = loss_and_input_grad(model, x_t, labels)
        trace[:, t] = losses
        if masks is not None:
            g = g * masks
        if spec.constraint == "l2":
            zero = ~np.any(g.reshape(n, -1) != 0, axis=1)
            for i in np.flatnonzero(zero):
                warnings[i].append(f"step {t}: zero-norm gradient, step skipped")
        x_t = _clip(spec, _step(spec, x_t, g), x)
    if final_loss:
        trace[:, spec.steps] = batch_losses(model, x_t, labels)
    return x_t, trace, warnings, masks


def run_attack(model, x, label, spec, mask=None):
    """Attack one video (F,C,H,W) with true label ``label``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"expected one video (F,C,H,W), got shape {x.shape}")
    masks = None if mask is None else np.asarray(mask, dtype=bool)[None]
    x_adv, trace, warnings, masks = run_attack_batch(model, x[None], np.array([label]), spec, masks)
    x_adv = x_adv[0]
    return AttackResult(x_adv=x_adv, delta=x_adv - x, ratio=ratio_map(x_adv, x),
                        loss_trace=trace[0].tolist(), warnings=warnings[0],
                        mask=None if masks is None else masks[0])


def attack_dataset(model, x, labels, spec, batch_size=64, final_loss=False):
    """Attack every video; masks are recomputed per example. Returns (x_adv, trace)."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    advs, traces = [], []
    for i in range(0, len(x), batch_size):
        a, tr, _, _ = run_attack_batch(model, x[i:i + batch_size], labels[i:i + batch_size],
                                       spec, final_loss=final_loss)
        advs.append(a)
        traces.append(tr)
    if not advs:
        return x.copy(), np.zeros((0, spec.steps))
    return np.concatenate(advs), np.concatenate(traces)


# ---------------------------------------------------------------------------
# published settings
# ---------------------------------------------------------------------------

# Side length, in pixels, of the frames the published mask sizes refer to.
REFERENCE_FRAME = 112

PUBLISHED_ATTACKS = {
    "multav_linf": AttackSpec("multiplicative", "linf", 1.04, 1.01, 5, name="multav_linf"),
    "multav_l2": AttackSpec("multiplicative", "l2", 160.0, 3.55, 5, name="multav_l2"),
    "multav_roa": AttackSpec("multiplicative", "linf", 1.7, 3.55, 5,
                             MaskSpec("roa", height=30, width=30), name="multav_roa"),
    "multav_af": AttackSpec("multiplicative", "linf", 3.55, 1.7, 5,
                            MaskSpec("af", frame_width=10), name="multav_af"),
    "multav_spa": AttackSpec("multiplicative", "linf", 3.55, 1.7, 5,
                             MaskSpec("spa", k=100), name="multav_spa"),
    "pgd_linf": AttackSpec("additive", "linf", 4 / 255, 1 / 255, 5, name="pgd_linf"),
    "pgd_l2": AttackSpec("additive", "l2", 160.0, 1.0, 5, name="pgd_l2"),
    "roa": AttackSpec("additive", "linf", 255 / 255, 70 / 255, 5,
                      MaskSpec("roa", height=30, width=30), name="roa"),
    "af": AttackSpec("additive", "linf", 255 / 255, 70 / 255, 5,
                     MaskSpec("af", frame_width=10), name="af"),
    "spa": AttackSpec("additive", "linf", 255 / 255, 70 / 255, 5,
                      MaskSpec("spa", k=100), name="spa"),
}

MULTAV_TYPES = ("multav_linf", "multav_l2", "multav_roa", "multav_af", "multav_spa")
COUNTERPART = {"multav_linf": "pgd_linf", "multav_l2": "pgd_l2", "multav_roa": "roa",
               "multav_af": "af", "multav_spa": "spa"}


def scale_mask(mask, H, W, reference=REFERENCE_FRAME):
    """Shrink published mask sizes to an H x W frame.

    Every size (rectangle sides, border width, SPA pixel count) scales by
    the linear side ratio. Area scaling would leave SPA with ~2 pixels per
    frame at 16x16, too few to move a trained model.
    """
    if mask is None:
        return None
    sh, sw = H / reference, W / reference

    def length(v, s):
        return max(1, int(round(v * s)))

    if mask.kind == "roa":
        return dataclasses.replace(mask, height=min(H, length(mask.height, sh)),
                                   width=min(W, length(mask.width, sw)))
    if mask.kind == "af":
        fw = length(mask.frame_width, min(sh, sw))
        return dataclasses.replace(mask, frame_width=min(fw, (min(H, W) - 1) // 2))
    return dataclasses.replace(mask, k=min(H * W, length(mask.k, min(sh, sw))))


def desk_attack(name, frame_hw=(16, 16), **overrides):
    """A published attack setting with its mask scaled to ``frame_hw``."""
    try:
        spec = PUBLISHED_ATTACKS[name]
    except KeyError:
        raise ConfigError(f"unknown attack {name!r}; known: {', '.join(PUBLISHED_ATTACKS)}") from None
    spec = spec.replace(mask=scale_mask(spec.mask, *frame_hw))
    return spec.replace(**overrides) if overrides else spec
