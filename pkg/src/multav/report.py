"""Report artifacts: accuracy tables, difference maps, feature maps, gradient checks.

Images are binary PGM (one channel) or PPM (three channels) with 8-bit
samples, so no codec dependency is needed.
"""

import concurrent.futures
import csv
import dataclasses
import io
import os

import numpy as np

from . import tensor as T
from .attacks import PUBLISHED_ATTACKS, AttackSpec, desk_attack, run_attack
from .config import ConfigError, KVReader, read_kv
from .data import load_dataset
from .net import load_checkpoint
from .train import evaluate

__all__ = ["write_image", "read_image", "diffmap", "featmap", "brightness_correlation",
           "GradcheckReport", "gradcheck", "Manifest", "load_manifest", "build_table",
           "write_table", "format_table", "read_table_csv", "resolve_attack", "MissingFilesError"]


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def _to_u8(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img):
    """Write an (H,W) or (3,H,W) array with values in [0,1] as PGM/PPM."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim == 2:
        magic, body = b"P5", _to_u8(img)
    elif img.ndim == 3 and img.shape[0] == 3:
        magic, body = b"P6", _to_u8(np.moveaxis(img, 0, -1))
    else:
        raise ValueError(f"image must be (H,W), (1,H,W) or (3,H,W), got {img.shape}")
    h, w = body.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(body.tobytes())


def read_image(path):
    """Inverse of :func:`write_image`; returns floats in [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1
    magic, w, h = fields[0], int(fields[1]), int(fields[2])
    chans = {b"P5": 1, b"P6": 3}[magic]
    arr = np.frombuffer(data[pos:pos + w * h * chans], dtype=np.uint8).astype(np.float64) / 255.0
    return arr.reshape(h, w) if chans == 1 else np.moveaxis(arr.reshape(h, w, 3), -1, 0)


def _frame_image(frame):
    """(C,H,W) frame -> something :func:`write_image` accepts."""
    if frame.shape[0] in (1, 3):
        return frame
    return frame.mean(axis=0)


# ---------------------------------------------------------------------------
# difference and feature maps
# ---------------------------------------------------------------------------

def brightness_correlation(x, delta):
    """Pearson correlation between pixel values and perturbation magnitude."""
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.abs(np.asarray(delta, dtype=np.float64)).ravel()
    if a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def diffmap(model, x, label, spec, out_dir, magnification=15.0, prefix="example"):
    """Attack one video and write per-frame clean / adversarial / difference images.

    The difference image is ``|x_adv - x| * magnification`` clamped to [0,1].
    Returns a dict with the written paths, the attack result and the
    brightness/|delta| correlation.
    """
    if not magnification > 0:
        raise ConfigError(f"magnification must be > 0, got {magnification}")
    res = run_attack(model, x, label, spec)
    diff = np.clip(np.abs(res.delta) * magnification, 0.0, 1.0)
    paths = []
    for t in range(x.shape[0]):
        for tag, vid in (("clean", x), ("adv", res.x_adv), ("diff", diff)):
            img = _frame_image(vid[t])
            ext = "ppm" if np.ndim(img) == 3 and img.shape[0] == 3 else "pgm"
            path = os.path.join(out_dir, f"{prefix}_{tag}_f{t}.{ext}")
            write_image(path, img)
            paths.append(path)
    return {"paths": paths, "result": res,
            "correlation": brightness_correlation(x, res.delta)}


def _normalize(img):
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        return (img - lo) / (hi - lo), lo, hi
    return np.zeros_like(img), lo, hi


def featmap(model, x, label, spec, stage, out_dir, prefix="example"):
    """Write channel-averaged activations of ``stage`` for clean and attacked input.

    Each image is min/max normalized on its own; the raw range is returned
    per image as ``(name, path, min, max)`` records.
    """
    stages = model.stage_names
    if stage not in stages:
        raise ConfigError(f"unknown stage {stage!r}; this model has: {', '.join(stages)}")
    res = run_attack(model, x, label, spec)
    records = []
    with T.no_grad():
        for tag, vid in (("clean", x), ("adv", res.x_adv)):
            fmap = model.features(vid[None])[stage].data[0]   # (C, F', H', W')
            avg = fmap.mean(axis=0)
            for t in range(avg.shape[0]):
                img, lo, hi = _normalize(avg[t])
                name = f"{prefix}_{stage}_{tag}_f{t}"
                path = os.path.join(out_dir, name + ".pgm")
                write_image(path, img)
                records.append((name, path, lo, hi))
    return records


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class GradcheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance


def _relu_signs(log, n):
    return np.concatenate([(a > 0).reshape(n, -1) for a in log], axis=1)


def gradcheck(model, tolerance=1e-4, seed=0, n_inputs=2, h=1e-5, batch_size=32):
    """Compare the backprop input gradient with central differences.

    Inputs are uniform in [0,1] with random labels. The error of element i
    is ``|a_i - n_i| / max(|a_i|, |n_i|, 1e-3 * max|n|)``. Probes whose
    ``x +- h`` evaluations change any relu's active set straddle a kink,
    where the derivative is not defined; they are skipped and counted.
    """
    rng = np.random.default_rng(seed)
    shape = model.config.input_shape
    x = rng.uniform(0.0, 1.0, size=(n_inputs,) + shape)
    y = rng.integers(0, model.config.num_classes, size=n_inputs)
    model.requires_grad_(False)
    leaf = T.Tensor(x, requires_grad=True)
    T.softmax_cross_entropy(model(leaf), y, reduction="sum").backward()
    analytic = leaf.grad.reshape(n_inputs, -1)

    worst, checked, skipped = 0.0, 0, 0
    d = analytic.shape[1]
    for j in range(n_inputs):
        with T.no_grad(), T.record_relu_inputs() as log:
            model(x[j:j + 1])
        base = _relu_signs(log, 1)[0]
        numeric = np.empty(d)
        kink = np.zeros(d, dtype=bool)
        for start in range(0, d, batch_size):
            idx = np.arange(start, min(d, start + batch_size))
            m = len(idx)
            probes = np.repeat(x[j].reshape(1, -1), 2 * m, axis=0)
            probes[np.arange(m), idx] += h
            probes[m + np.arange(m), idx] -= h
            with T.no_grad(), T.record_relu_inputs() as log:
                loss = T.cross_entropy_per_example(model(probes.reshape((2 * m,) + shape)),
                                                   np.full(2 * m, y[j]))
            signs = _relu_signs(log, 2 * m)
            kink[idx] = np.any(signs[:m] != base, axis=1) | np.any(signs[m:] != base, axis=1)
            numeric[idx] = (loss[:m] - loss[m:]) / (2.0 * h)
        a = analytic[j]
        floor = 1e-3 * np.max(np.abs(numeric))
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        rel = np.abs(a - numeric) / np.where(denom > 0, denom, 1.0)
        ok = ~kink
        if np.any(ok):
            worst = max(worst, float(np.max(rel[ok])))
        checked += int(ok.sum())
        skipped += int(kink.sum())
    return GradcheckReport(worst, checked, skipped, tolerance)


# ---------------------------------------------------------------------------
# manifests and tables
# ---------------------------------------------------------------------------

class MissingFilesError(FileNotFoundError):
    pass


TRAININGS = ("mult", "add")


@dataclasses.dataclass
class NetworkEntry:
    key: str
    name: str
    clean: str = None
    mult: dict = dataclasses.field(default_factory=dict)   # attack label -> checkpoint
    add: dict = dataclasses.field(default_factory=dict)


@dataclasses.dataclass
class Manifest:
    """What to evaluate for a robustness table.

    File format (flat key-value, paths relative to the manifest)::

        data = data.mavd
        attacks = multav_linf, multav_af      # built-in names or attack.<name> entries
        attack.mine = my_attack.cfg           # optional custom attack definitions
        network.toy.name = Toy 3D CNN
        network.toy.clean = clean.mavk
        network.toy.mult.multav_linf = mult_linf.mavk
        network.toy.add.multav_linf = add_linf.mavk
        eval.limit = 0                        # 0 evaluates the whole test split
    """
    data: str
    attacks: list
    attack_files: dict
    networks: list
    limit: int = 0
    batch_size: int = 64
    base_dir: str = "."

    def path(self, p):
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))

    def referenced_paths(self):
        out = [self.data] + list(self.attack_files.values())
        for net in self.networks:
            out += [net.clean] if net.clean else []
            out += list(net.mult.values()) + list(net.add.values())
        return [self.path(p) for p in out]


def load_manifest(path):
    items = read_kv(path)
    r = KVReader(items, where=f"manifest {path}")
    data = r.get_str("data")
    if not data:
        raise ConfigError(f"manifest {path}: missing required key 'data'")
    attacks = [a.strip() for a in (r.get_str("attacks") or "").split(",") if a.strip()]
    if not attacks:
        raise ConfigError(f"manifest {path}: attack list is empty")
    if len(set(attacks)) != len(attacks):
        raise ConfigError(f"manifest {path}: duplicate attack names")
    ar = r.sub("attack.")
    attack_files = {k[len("attack."):]: v for k, v in ar.items.items()}
    for a in attacks:
        if a not in attack_files and a not in PUBLISHED_ATTACKS:
            raise ConfigError(f"manifest {path}: attack {a!r} is neither built in "
                              f"({', '.join(PUBLISHED_ATTACKS)}) nor defined by attack.{a}")
    limit = r.get_int("eval.limit", 0)
    batch_size = r.get_int("eval.batch_size", 64)
    nets = {}
    nr = r.sub("network.")
    for key, value in nr.items.items():
        parts = key[len("network."):].split(".")
        nid = parts[0]
        net = nets.setdefault(nid, NetworkEntry(nid, nid))
        if parts[1:] == ["name"]:
            net.name = value
        elif parts[1:] == ["clean"]:
            net.clean = value
        elif len(parts) == 3 and parts[1] in TRAININGS:
            if parts[2] not in attacks:
                raise ConfigError(f"manifest {path}: {key} names attack {parts[2]!r} "
                                  f"which is not in the attack list")
            getattr(net, parts[1])[parts[2]] = value
        else:
            raise ConfigError(f"manifest {path}: unrecognized key {key!r}")
    r.finish()
    if not nets:
        raise ConfigError(f"manifest {path}: no network.* entries")
    if limit < 0 or batch_size < 1:
        raise ConfigError(f"manifest {path}: eval.limit must be >= 0 and eval.batch_size >= 1")
    return Manifest(data, attacks, attack_files, list(nets.values()), limit, batch_size,
                    os.path.dirname(os.path.abspath(path)))


def resolve_attack(ref, frame_hw, base_dir="."):
    """An :class:`AttackSpec` from a config path or a built-in attack name."""
    path = ref if os.path.isabs(ref) else os.path.join(base_dir, ref)
    if os.path.isfile(path):
        spec = AttackSpec.from_kv(read_kv(path), where=f"attack config {path}")
        if spec.mask is not None:
            spec.mask.check_frame(*frame_hw)
        return spec
    if ref in PUBLISHED_ATTACKS:
        return desk_attack(ref, frame_hw)
    raise ConfigError(f"attack {ref!r} is neither a readable config file nor a built-in "
                      f"name ({', '.join(PUBLISHED_ATTACKS)})")


def build_table(manifest, threads=1):
    """Evaluate every (model, attack) cell. Returns (columns, rows).

    ``rows`` are dicts with ``network``, ``training`` (Clean/Mult/Add/gap),
    ``clean`` and one key per attack; accuracies are percentages, gaps are
    ``Add - Mult`` so negative numbers favour the Mult model.
    """
    missing = [p for p in manifest.referenced_paths() if not os.path.exists(p)]
    if missing:
        raise MissingFilesError("missing file(s): " + ", ".join(missing))
    _, _, test = load_dataset(manifest.path(manifest.data))
    if manifest.limit:
        test = test.subset(slice(0, manifest.limit))
    hw = test.x.shape[-2:]
    specs = {}
    for a in manifest.attacks:
        ref = manifest.attack_files.get(a, a)
        spec = resolve_attack(manifest.path(ref) if a in manifest.attack_files else ref, hw)
        specs[a] = spec

    jobs = []
    for net in manifest.networks:
        if net.clean:
            jobs.append((net.key, "Clean", "clean", net.clean, None))
            jobs += [(net.key, "Clean", a, net.clean, specs[a]) for a in manifest.attacks]
        for training in TRAININGS:
            jobs += [(net.key, training.capitalize(), a, ck, specs[a])
                     for a, ck in getattr(net, training).items()]

    def run(job):
        _, _, _, ckpt, spec = job
        model = load_checkpoint(manifest.path(ckpt))
        if model.config.input_shape != test.x.shape[1:]:
            raise ConfigError(f"{ckpt}: model input {model.config.input_shape} does not match "
                              f"data {test.x.shape[1:]}")
        return 100.0 * evaluate(model, test, spec, batch_size=manifest.batch_size)

    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    cells = {(j[0], j[1], j[2]): v for j, v in zip(jobs, results)}

    rows = []
    for net in manifest.networks:
        clean_acc = cells.get((net.key, "Clean", "clean"))
        for training in ("Clean", "Mult", "Add"):
            if training == "Clean" and not net.clean:
                continue
            if training != "Clean" and not getattr(net, training.lower()):
                continue
            row = {"network": net.name, "training": training, "clean": clean_acc}
            row.update({a: cells.get((net.key, training, a)) for a in manifest.attacks})
            rows.append(row)
        if net.mult or net.add:
            gap = {"network": net.name, "training": "gap", "clean": None}
            for a in manifest.attacks:
                m, d = cells.get((net.key, "Mult", a)), cells.get((net.key, "Add", a))
                gap[a] = None if m is None or d is None else d - m
            rows.append(gap)
    return ["network", "training", "clean"] + list(manifest.attacks), rows


def _csv_value(v):
    return "" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else str(v))


def write_table(columns, rows, out_dir):
    """Write ``table.csv`` and ``table.txt`` into ``out_dir``; returns both paths."""
    csv_path = os.path.join(out_dir, "table.csv")
    txt_path = os.path.join(out_dir, "table.txt")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_csv_value(row[c]) for c in columns])
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(format_table(columns, rows))
    return csv_path, txt_path


def read_table_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def format_table(columns, rows):
    """Aligned text rendering; gap rows appear in parentheses under their Add row."""
    header = ["Network", "Clean", "Training"] + columns[3:]
    body, last = [], None
    for row in rows:
        gap = row["training"] == "gap"
        cells = []
        for c in columns[3:]:
            v = row[c]
            cells.append("" if v is None else (f"({v:+.2f})" if gap else f"{v:.2f}"))
        first = row["network"] != last
        last = row["network"]
        clean = "" if (row["clean"] is None or not first) else f"{row['clean']:.2f}"
        body.append([row["network"] if first else "", clean,
                     "" if gap else row["training"]] + cells)
    widths = [max(len(str(r[i])) for r in [header] + body) for i in range(len(header))]
    buf = io.StringIO()

    def line(vals):
        parts = [str(v).ljust(widths[0]) if i == 0 else str(v).rjust(widths[i])
                 for i, v in enumerate(vals)]
        buf.write("  ".join(parts).rstrip() + "\n")

    line(header)
    buf.write("  ".join("-" * w for w in widths) + "\n")
    for vals in body:
        line(vals)
    return buf.getvalue()
