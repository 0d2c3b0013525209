#!/usr/bin/env python3
"""Compare the numba and numpy kernel backends.

Times the three conv3d kernels at both stage shapes of the default network,
then one forward+backward pass of the full model, and checks that both
backends give the same numbers. Prints a table; ``--json`` writes the raw
timings too.

    python benchmarks/bench_kernels.py --batch 64 --runs 5
"""

import argparse
import json
import statistics
import time

import numpy as np

from multav import _kernels as K
from multav import tensor as T
from multav.net import NetworkConfig, build_model

STAGES = {  # (Ci, Co, D, H, W) for the default 4x1x16x16 network
    "stage1": (1, 8, 4, 16, 16),
    "stage2": (8, 16, 2, 8, 8),
}


def timeit(fn, warmup, runs):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def kernel_cases(batch, rng):
    stride = (1, 1, 1)
    for stage, (ci, co, d, h, w) in STAGES.items():
        xp = rng.uniform(size=(batch, ci, d + 2, h + 2, w + 2))
        wt = rng.normal(size=(co, ci, 3, 3, 3))
        gout = rng.normal(size=(batch, co, d, h, w))
        yield f"{stage}.forward", lambda xp=xp, wt=wt: K.conv3d_forward(xp, wt, stride)
        yield f"{stage}.backward_input", \
            lambda g=gout, wt=wt, s=xp.shape: K.conv3d_backward_input(g, wt, s, stride)
        yield f"{stage}.backward_weight", \
            lambda xp=xp, g=gout: K.conv3d_backward_weight(xp, g, (3, 3, 3), stride)


def model_case(batch, rng, denoise):
    model = build_model(NetworkConfig(denoise=denoise))
    x = rng.uniform(size=(batch,) + model.config.input_shape)
    y = rng.integers(0, 4, size=batch)

    def run():
        leaf = T.Tensor(x, requires_grad=True)
        T.softmax_cross_entropy(model(leaf), y).backward()
        return leaf.grad
    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--warmup", type=int, default=2)
    ap.add_argument("--json", help="also write timings to this file")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cases = list(kernel_cases(args.batch, rng))
    for dn in ("none", "nl2d"):
        cases.append((f"model[{dn}].fwd+bwd", model_case(args.batch, rng, dn)))

    results = {}
    prev = K.get_backend()
    try:
        for name, fn in cases:
            row = {}
            outs = {}
            for backend in ("numpy", "numba"):
                K.set_backend(backend)
                row[backend] = timeit(fn, args.warmup, args.runs)
                outs[backend] = fn()
            a, b = outs["numpy"], outs["numba"]
            row["max_abs_diff"] = float(np.max(np.abs(a - b)))
            results[name] = row
    finally:
        K.set_backend(prev)

    print(f"batch={args.batch} runs={args.runs} (median seconds)")
    print(f"{'case':<28}{'numpy':>10}{'numba':>10}{'speedup':>9}{'max|diff|':>12}")
    for name, r in results.items():
        print(f"{name:<28}{r['numpy']:>10.4f}{r['numba']:>10.4f}"
              f"{r['numpy'] / r['numba']:>8.2f}x{r['max_abs_diff']:>12.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"batch": args.batch, "runs": args.runs, "results": results}, fh, indent=2)


if __name__ == "__main__":
    main()
