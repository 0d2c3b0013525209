"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line.

The lines are collected by the ``acceptance_log`` fixture and printed in the
terminal summary, so they show up even when output capture is on.
"""

import filecmp
import math
import time

import numpy as np
import pytest

from multav import attacks as A
from multav.attacks import AttackSpec, desk_attack, run_attack, run_attack_batch
from multav.cli import main as cli_main
from multav.experiment import gap_study
from multav.net import DENOISE_KINDS, NetworkConfig, build_model
from multav.report import brightness_correlation, gradcheck
from multav.train import evaluate

LINF_TOL, L2_TOL = 1e-12, 1e-9
GAP_SEEDS = (0, 1, 2)


def record(log, n, ok, detail):
    log.append((n, bool(ok), detail))
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


# -- 1 -----------------------------------------------------------------------

def test_c1_gradient_correctness(acceptance_log):
    t0 = time.perf_counter()
    worst = {}
    for kind in DENOISE_KINDS:
        errs = []
        for seed in range(20):
            model = build_model(NetworkConfig(input_shape=(4, 1, 8, 8), denoise=kind, seed=seed))
            errs.append(gradcheck(model, seed=seed, n_inputs=1).max_rel_error)
        worst[kind] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 120
    detail = ", ".join(f"{k} max rel err {v:.2e}" for k, v in worst.items())
    record(acceptance_log, 1, ok, f"{detail}; {elapsed:.1f}s")
    assert ok


# -- 2 -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_model():
    model = build_model(NetworkConfig(input_shape=(2, 1, 6, 6), widths=(2, 4), seed=7))
    model.requires_grad_(False)
    return model


KINDS = (("additive", "linf"), ("additive", "l2"), ("multiplicative", "linf"), ("multiplicative", "l2"))


def random_spec(kind, rng):
    family, constraint = kind
    steps = int(rng.integers(1, 6))
    seed = int(rng.integers(1 << 30))
    start = bool(rng.integers(2))
    if family == "additive":
        eps = rng.uniform(0.01, 0.5) if constraint == "linf" else rng.uniform(0.05, 3.0)
        alpha = eps * rng.uniform(0.1, 1.5)
    else:
        eps = rng.uniform(1.0, 3.0) if constraint == "linf" else rng.uniform(0.05, 2.0)
        alpha = rng.uniform(1.001, 3.6)
    return AttackSpec(family, constraint, eps, alpha, steps, seed=seed, random_start=start)


def constraint_violation(spec, x, x_adv):
    """Amount by which x_adv exceeds its bound (<= 0 means satisfied)."""
    if spec.family == "additive":
        d = x_adv - x
        if spec.constraint == "linf":
            return np.max(np.abs(d)) - (spec.epsilon + LINF_TOL)
        return np.linalg.norm(d) - (spec.epsilon + L2_TOL)
    if np.any(x_adv[x == 0] != 0):
        return np.inf
    r = A.ratio_map(x_adv, x)
    if spec.constraint == "linf":
        pos = x > 0
        return np.max(np.maximum(r[pos], 1.0 / r[pos])) - (spec.epsilon + LINF_TOL)
    return np.linalg.norm(r - 1.0) - (spec.epsilon + L2_TOL)


def clip_fns(rng):
    eps_add = rng.uniform(0.01, 0.5)
    eps_l2 = rng.uniform(0.1, 3.0)
    eps_m = rng.uniform(1.0, 3.0)
    eps_rb = rng.uniform(0.1, 2.0)
    return {
        "linf_add": (lambda c, x: A.clip_linf_add(c, x, eps_add), eps_add),
        "l2_add": (lambda c, x: A.clip_l2_add(c, x, eps_l2), eps_l2),
        "rb_linf": (lambda c, x: A.clip_rb_linf(c, x, eps_m), eps_m),
        "rb_l2": (lambda c, x: A.clip_rb_l2(c, x, eps_rb), eps_rb),
    }


def interior_candidate(name, x, eps, rng):
    """A point strictly inside the constraint set and inside [0, 1]."""
    u = rng.uniform(-1, 1, size=x.shape)
    if name == "linf_add":
        c = x + 0.5 * eps * u
    elif name == "l2_add":
        c = x + 0.5 * eps * u / np.linalg.norm(u)
    elif name == "rb_linf":
        c = x * np.exp(0.5 * math.log(eps) * u)
    else:
        c = x * (1.0 + 0.5 * eps * u / np.linalg.norm(u))
    # pull back into the domain while staying inside the set
    return np.where((c < 0) | (c > 1), x, c)


def test_c2_constraint_satisfaction(tiny_model, acceptance_log):
    rng = np.random.default_rng(2)
    worst = {k: -np.inf for k in KINDS}
    for i in range(1000):
        kind = KINDS[i % 4]
        spec = random_spec(kind, rng)
        x = rng.uniform(0, 1, size=(2, 1, 6, 6))
        x[rng.uniform(size=x.shape) < 0.05] = 0.0
        res = run_attack(tiny_model, x, int(rng.integers(4)), spec)
        worst[kind] = max(worst[kind], constraint_violation(spec, x, res.x_adv))
    runs_ok = all(v <= 0 for v in worst.values())

    idem_err = ident_err = 0.0
    for _ in range(1000):
        shape = tuple(rng.integers(1, 5, size=3))
        x = rng.uniform(0, 1, size=shape)
        for name, (clip, eps) in clip_fns(rng).items():
            cand = np.clip(x + rng.normal(scale=0.5, size=shape), 0, 1) if name.endswith("add") \
                else x * rng.uniform(0, 4, size=shape)
            once = clip(cand, x)
            idem_err = max(idem_err, np.max(np.abs(clip(once, x) - once)))
            inside = interior_candidate(name, x, eps, rng)
            ident_err = max(ident_err, np.max(np.abs(clip(inside, x) - inside)))
    clips_ok = idem_err <= 1e-12 and ident_err <= 1e-12
    ok = runs_ok and clips_ok
    detail = ", ".join(f"{f[:4]}-{c} excess {v:.1e}" for (f, c), v in worst.items())
    record(acceptance_log, 2, ok, f"{detail}; clip idempotence err {idem_err:.1e}, "
                                  f"interior identity err {ident_err:.1e}")
    assert ok


# -- 3 -----------------------------------------------------------------------

def test_c3_signal_dependent_equivalence(acceptance_log):
    rng = np.random.default_rng(3)
    worst = {"linf": 0.0, "l2": 0.0}
    for i in range(1000):
        shape = tuple(rng.integers(1, 6, size=4))
        x = rng.uniform(0, 1, size=shape)
        g = rng.normal(size=shape) * (rng.uniform(size=shape) > 0.1)
        alpha_m = rng.uniform(1.0001, 4.0)
        c = "linf" if i % 2 == 0 else "l2"
        step = A.step_mult_linf(x, g, alpha_m) if c == "linf" else A.step_mult_l2(x, g, alpha_m)
        ref = A.signal_dependent_form(x, g, alpha_m, c)
        worst[c] = max(worst[c], np.max(np.abs(step - ref)))
    ok = max(worst.values()) <= 1e-12
    record(acceptance_log, 3, ok, f"max |diff| linf {worst['linf']:.1e}, l2 {worst['l2']:.1e}")
    assert ok


# -- 4 -----------------------------------------------------------------------

MASKED = ("multav_roa", "multav_af", "multav_spa", "roa", "af", "spa")


def test_c4_mask_confinement(trained_model, acceptance_log):
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, size=(100, 4, 1, 16, 16))
    y = rng.integers(0, 4, size=100)
    leaks, spa_counts, ok = {}, set(), True
    for name in MASKED:
        spec = desk_attack(name)
        x_adv, _, _, masks = run_attack_batch(trained_model, x, y, spec)
        out = ~masks
        delta, ratio = x_adv - x, A.ratio_map(x_adv, x)
        leaks[name] = int(np.count_nonzero(delta[out])) + int(np.count_nonzero(ratio[out] != 1.0))
        ok &= leaks[name] == 0
        if spec.mask.kind == "spa":
            want = min(spec.mask.k, 16 * 16)
            per_frame = masks.sum(axis=(2, 3, 4))
            spa_counts |= set(per_frame.ravel().tolist())
            ok &= bool(np.all(per_frame == want))
    record(acceptance_log, 4, ok, f"nonzero outside mask {leaks}; SPA pixels/frame {sorted(spa_counts)}")
    assert ok


# -- 5 -----------------------------------------------------------------------

def test_c5_attack_effectiveness(trained_model, default_data, acceptance_log):
    _, _, test = default_data
    clean = evaluate(trained_model, test)
    accs, times = {}, {}
    for name in A.MULTAV_TYPES:
        t0 = time.perf_counter()
        accs[name] = evaluate(trained_model, test, desk_attack(name))
        times[name] = time.perf_counter() - t0
    ok = clean >= 0.9 and all(a < 0.4 for a in accs.values()) and sum(times.values()) < 600
    detail = ", ".join(f"{k} {100 * v:.1f}%" for k, v in accs.items())
    record(acceptance_log, 5, ok, f"clean {100 * clean:.1f}%; {detail}; sweep {sum(times.values()):.0f}s")
    assert ok


# -- 6, 7 --------------------------------------------------------------------

@pytest.fixture(scope="module")
def gap_results():
    out = {}
    for seed in GAP_SEEDS:
        out[seed] = gap_study(seed, log=lambda r: print(
            f"seed {r.seed} {r.attack}: clean {r.clean_model:.3f} mult {r.mult_model:.3f} "
            f"add {r.add_model:.3f}", flush=True))
    return out


@pytest.mark.slow
def test_c6_robustness_gap(gap_results, acceptance_log):
    per_type = {name: [] for name in A.MULTAV_TYPES}
    for seed, (_, rows) in gap_results.items():
        for r in rows:
            per_type[r.attack].append((r.mult_model, r.add_model))
    wins, parts = 0, []
    for name, pairs in per_type.items():
        mult = float(np.mean([p[0] for p in pairs]))
        add = float(np.mean([p[1] for p in pairs]))
        wins += mult >= add
        seeds = " ".join(f"{100 * m:.1f}/{100 * a:.1f}" for m, a in pairs)
        parts.append(f"{name} mult {100 * mult:.1f} vs add {100 * add:.1f} [per seed {seeds}]")
    ok = wins >= 4
    record(acceptance_log, 6, ok, f"mult >= add on {wins}/5 types; " + "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_c7_adversarial_training_recovers(gap_results, acceptance_log):
    diffs = []
    for seed, (_, rows) in gap_results.items():
        r = next(r for r in rows if r.attack == "multav_linf")
        diffs.append(r.mult_model - r.clean_model)
    ok = min(diffs) >= 0.20
    record(acceptance_log, 7, ok, "multav_linf: mult-trained minus clean-trained accuracy "
           + ", ".join(f"seed {s} {100 * d:+.1f} pts" for s, d in zip(GAP_SEEDS, diffs)))
    assert ok


# -- 8 -----------------------------------------------------------------------

def sign_test_p(wins, n):
    """One-sided binomial sign test P(X >= wins) under p = 1/2."""
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2 ** n


def test_c8_signal_dependency(trained_model, default_data, acceptance_log):
    _, _, test = default_data
    x, y = test.x[:20], test.y[:20]
    corr = {}
    for name in ("multav_linf", "pgd_linf"):
        x_adv, _, _, _ = run_attack_batch(trained_model, x, y, desk_attack(name))
        corr[name] = np.array([brightness_correlation(x[i], x_adv[i] - x[i]) for i in range(20)])
    m, p = corr["multav_linf"], corr["pgd_linf"]
    wins = int(np.sum(m > p))
    pval = sign_test_p(wins, 20)
    ok = m.mean() > 0.2 and pval < 0.05
    record(acceptance_log, 8, ok, f"mean corr multav_linf {m.mean():.3f} (min {m.min():.3f}), "
                                  f"pgd_linf {p.mean():.3f}; mult > pgd on {wins}/20, sign test p={pval:.1e}")
    assert ok


# -- 9 -----------------------------------------------------------------------

MANIFEST = """\
data = data.mavd
attacks = multav_linf, multav_af
network.toy.name = Toy3D
network.toy.clean = clean.mavk
network.toy.mult.multav_linf = mult_linf.mavk
network.toy.add.multav_linf = add_linf.mavk
"""


def run_pipeline(d):
    (d / "data.cfg").write_text("train_per_class = 24\ntest_per_class = 6\n")
    (d / "clean.cfg").write_text("epochs = 8\n")
    for tag, atk in (("mult_linf", "multav_linf"), ("add_linf", "pgd_linf")):
        (d / f"{tag}.cfg").write_text(
            "epochs = 1\nlr = 0.005\nmode = adversarial\n"
            + "".join(f"attack.{k} = {v}\n" for k, v in desk_attack(atk).to_kv().items()))
    (d / "manifest.cfg").write_text(MANIFEST)
    (d / "table").mkdir()
    codes = [cli_main(["gen-data", "--config", str(d / "data.cfg"), "--out", str(d / "data.mavd"),
                       "--seed", "5"]),
             cli_main(["train", "--config", str(d / "clean.cfg"), "--data", str(d / "data.mavd"),
                       "--out", str(d / "clean.mavk"), "--seed", "5"])]
    for tag in ("mult_linf", "add_linf"):
        codes.append(cli_main(["train", "--config", str(d / f"{tag}.cfg"), "--data", str(d / "data.mavd"),
                               "--init", str(d / "clean.mavk"), "--out", str(d / f"{tag}.mavk"),
                               "--seed", "5"]))
    codes.append(cli_main(["report-table", "--manifest", str(d / "manifest.cfg"),
                           "--out", str(d / "table")]))
    return codes


def test_c9_determinism(tmp_path, acceptance_log):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    codes = run_pipeline(a) + run_pipeline(b)
    csvs = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    same = [filecmp.cmp(a / p, b / p, shallow=False) for p in csvs]
    ckpt_same = all(filecmp.cmp(p, b / p.relative_to(a), shallow=False) for p in a.glob("*.mavk"))
    ok = all(c == 0 for c in codes) and len(csvs) == 4 and all(same) and ckpt_same
    record(acceptance_log, 9, ok, f"exit codes {codes}; {sum(same)}/{len(csvs)} CSVs bit-identical "
                                  f"({', '.join(map(str, csvs))}); checkpoints identical: {ckpt_same}")
    assert ok
