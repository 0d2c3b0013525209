"""``multav`` command line.

Exit codes: 0 success, 1 usage or config error, 2 verification failure,
3 I/O error (missing, unreadable or corrupt files).
"""

import argparse
import csv
import dataclasses
import logging
import os
import sys

import numpy as np

from .attacks import run_attack_batch
from .config import ConfigError, read_kv
from .data import DatasetFormatError, DatasetSpec, generate, load_dataset, save_dataset
from .net import CheckpointError, load_checkpoint, save_checkpoint, build_model
from .report import (MissingFilesError, build_table, diffmap, featmap, gradcheck,
                     load_manifest, resolve_attack, write_table)
from .train import TrainConfig, TrainingDiverged, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("multav")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    try:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:  # pragma: no cover
        pass


def _out_dir(path):
    if not path:
        raise UsageError("--out is required")
    if not os.path.isdir(path):
        raise FileNotFoundError(f"output directory {path!r} does not exist")
    return path


def _load_data(path, split="test"):
    spec, tr, te = load_dataset(path)
    return spec, (te if split == "test" else tr)


def _example(ds, index):
    if not 0 <= index < len(ds):
        raise ConfigError(f"--index {index} out of range for {len(ds)} examples")
    return ds.x[index], int(ds.y[index])


def _attack(args, hw):
    spec = resolve_attack(args.attack, hw)
    if args.seed is not None:
        spec = spec.replace(seed=args.seed)
    return spec


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    spec = DatasetSpec.from_kv(read_kv(args.config), where=args.config) if args.config else DatasetSpec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out = args.out
    parent = os.path.dirname(os.path.abspath(out))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"directory {parent!r} does not exist")
    train_set, test_set = generate(spec)
    save_dataset(out, spec, train_set, test_set)
    shape = "x".join(map(str, spec.video_shape))
    print(f"wrote {out}: classes={spec.num_classes} train={len(train_set)} "
          f"test={len(test_set)} video={shape}")
    for c in range(spec.num_classes):
        print(f"  class {c}: train={int(np.sum(train_set.y == c))} test={int(np.sum(test_set.y == c))}")
    return EXIT_OK


def cmd_train(args):
    cfg = TrainConfig.from_kv(read_kv(args.config), where=args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    spec, train_set, test_set = load_dataset(args.data)
    if cfg.attack is not None and cfg.attack.mask is not None:
        cfg.attack.mask.check_frame(spec.height, spec.width)
    out_parent = os.path.dirname(os.path.abspath(args.out))
    if not os.path.isdir(out_parent):
        raise FileNotFoundError(f"directory {out_parent!r} does not exist")
    net_cfg = cfg.network(spec.video_shape, spec.num_classes)
    if args.init:
        model = load_checkpoint(args.init)
        if (model.config.input_shape, model.config.num_classes) != (net_cfg.input_shape, net_cfg.num_classes):
            raise ConfigError(f"{args.init}: model shape does not fit the dataset")
    else:
        model = build_model(net_cfg)
    _, history = train(model, train_set, cfg, eval_set=test_set)
    save_checkpoint(model, args.out)
    metrics = args.metrics or os.path.splitext(args.out)[0] + ".metrics.csv"
    with open(metrics, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_acc", "eval_acc"])
        for m in history:
            w.writerow([m.epoch, repr(m.train_loss), repr(m.train_acc), repr(m.eval_acc)])
    last = history[-1]
    print(f"wrote {args.out} and {metrics}")
    print(f"final: epoch={last.epoch} train_loss={last.train_loss:.4f} "
          f"train_acc={last.train_acc:.4f} test_acc={last.eval_acc:.4f}")
    return EXIT_OK


def cmd_attack(args):
    out = _out_dir(args.out)
    model = load_checkpoint(args.checkpoint)
    spec_d, ds = _load_data(args.data, args.split)
    if args.limit:
        ds = ds.subset(slice(0, args.limit))
    spec = _attack(args, (spec_d.height, spec_d.width))
    model.requires_grad_(False)
    clean_pred = model.predict(ds.x)
    rows, adv_pred = [], []
    for start in range(0, len(ds), 64):
        xb, yb = ds.x[start:start + 64], ds.y[start:start + 64]
        x_adv, trace, warns, _ = run_attack_batch(model, xb, yb, spec)
        pb = model.predict(x_adv)
        adv_pred.append(pb)
        for i in range(len(xb)):
            x, xa = xb[i], x_adv[i]
            delta = xa - x
            pos = x > 0
            ratio = np.where(pos, xa / np.where(pos, x, 1.0), 1.0)
            rows.append([start + i, int(yb[i]), int(clean_pred[start + i]), int(pb[i]),
                         repr(float(trace[i, 0])), repr(float(trace[i, -1])),
                         repr(float(np.max(np.abs(delta)))), repr(float(np.linalg.norm(delta))),
                         repr(float(np.max(np.maximum(ratio, 1.0 / np.maximum(ratio, 1e-300))))),
                         "; ".join(warns[i])])
    adv_pred = np.concatenate(adv_pred) if adv_pred else np.empty(0, dtype=np.int64)
    with open(os.path.join(out, "examples.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label", "clean_pred", "adv_pred", "loss_clean", "loss_adv",
                    "linf_delta", "l2_delta", "max_ratio", "warnings"])
        w.writerows(rows)
    clean_acc = float(np.mean(clean_pred == ds.y))
    adv_acc = float(np.mean(adv_pred == ds.y))
    with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"attack = {spec.label}\nexamples = {len(ds)}\n"
                 f"clean_accuracy = {clean_acc!r}\nadversarial_accuracy = {adv_acc!r}\n")
    print(f"{spec.label}: clean accuracy {clean_acc:.4f}, adversarial accuracy {adv_acc:.4f} "
          f"({len(ds)} examples)")
    return EXIT_OK


def cmd_report_table(args):
    out = _out_dir(args.out)
    manifest = load_manifest(args.manifest)
    columns, rows = build_table(manifest, threads=args.threads or 1)
    csv_path, txt_path = write_table(columns, rows, out)
    with open(txt_path, encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    print(f"wrote {csv_path} and {txt_path}")
    return EXIT_OK


def cmd_diffmap(args):
    out = _out_dir(args.out)
    model = load_checkpoint(args.checkpoint)
    spec_d, ds = _load_data(args.data, args.split)
    x, y = _example(ds, args.index)
    res = diffmap(model, x, y, _attack(args, (spec_d.height, spec_d.width)), out,
                  magnification=args.magnification, prefix=f"ex{args.index}")
    print(f"wrote {len(res['paths'])} images to {out}; "
          f"brightness/|delta| correlation {res['correlation']:.4f}")
    return EXIT_OK


def cmd_featmap(args):
    out = _out_dir(args.out)
    model = load_checkpoint(args.checkpoint)
    spec_d, ds = _load_data(args.data, args.split)
    x, y = _example(ds, args.index)
    records = featmap(model, x, y, _attack(args, (spec_d.height, spec_d.width)), args.stage, out,
                      prefix=f"ex{args.index}")
    with open(os.path.join(out, f"ex{args.index}_{args.stage}_ranges.csv"), "w",
              newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "min", "max"])
        for name, _, lo, hi in records:
            w.writerow([name, repr(lo), repr(hi)])
    print(f"wrote {len(records)} feature images for stage {args.stage} to {out}")
    return EXIT_OK


def cmd_gradcheck(args):
    model = load_checkpoint(args.checkpoint)
    if args.tolerance < 0:
        raise ConfigError("--tolerance must be >= 0")
    rep = gradcheck(model, tolerance=args.tolerance, seed=args.seed or 0, n_inputs=args.inputs)
    status = "PASS" if rep.passed else "FAIL"
    print(f"gradcheck {status}: max relative error {rep.max_rel_error:.3e} "
          f"(tolerance {args.tolerance:g}), {rep.checked} elements checked, "
          f"{rep.skipped} skipped at relu kinks")
    return EXIT_OK if rep.passed else EXIT_VERIFY


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="multav", description="Multiplicative adversarial video attacks at desk scale.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    def example_args(sp):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--data", required=True)
        sp.add_argument("--attack", required=True, help="attack config file or built-in name")
        sp.add_argument("--split", choices=("train", "test"), default="test")
        sp.add_argument("--out", required=True, help="existing output directory")

    sp = add("gen-data", cmd_gen_data, "generate a synthetic dataset file")
    sp.add_argument("--config", help="dataset spec (key = value); defaults if omitted")
    sp.add_argument("--out", required=True, help="dataset file to write")

    sp = add("train", cmd_train, "train a model and write a checkpoint")
    sp.add_argument("--config", help="training config (key = value)")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="checkpoint file to write")
    sp.add_argument("--metrics", help="per-epoch CSV (default: next to the checkpoint)")
    sp.add_argument("--init", help="start from this checkpoint instead of a fresh init")

    sp = add("attack", cmd_attack, "attack a dataset split and summarize")
    example_args(sp)
    sp.add_argument("--limit", type=int, default=0, help="attack only the first N examples")

    sp = add("report-table", cmd_report_table, "evaluate a manifest into a robustness table")
    sp.add_argument("--manifest", "--config", dest="manifest", required=True)
    sp.add_argument("--out", required=True, help="existing output directory")

    sp = add("diffmap", cmd_diffmap, "write clean/adversarial/difference frame images")
    example_args(sp)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--magnification", type=float, default=15.0)

    sp = add("featmap", cmd_featmap, "write channel-averaged feature images")
    example_args(sp)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--stage", required=True, help="e.g. conv1, conv2, denoise1")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of the input gradient")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--inputs", type=int, default=2, help="number of random inputs")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _set_threads(args.threads)
        return args.func(args)
    except (UsageError, ConfigError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingFilesError, DatasetFormatError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
