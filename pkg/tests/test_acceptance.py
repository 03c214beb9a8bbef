"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line; the full list is printed at the end of
the module (visible in the pytest output) and when the file is run directly
with ``python tests/test_acceptance.py``.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from backbone_ensemble.calibration import T_MAX, T_MIN, fit_temperature, nll
from backbone_ensemble.cascade import CascadeConfig, cascade_cost, cascade_run, order_backbones
from backbone_ensemble.cli import execute
from backbone_ensemble.io import load_manifest, load_npy, save_npy, validate_bundle
from backbone_ensemble.learned import combine_fixed, sl_loss_grad
from backbone_ensemble.metrics import (
    accuracy,
    correctness,
    diversity,
    oracle_accuracy,
    pearson,
    relative_improvement,
    top1,
)
from backbone_ensemble.nlc import (
    NlcModel,
    NlcTrainConfig,
    nlc_forward,
    nlc_init,
    nlc_load,
    nlc_loss_grad,
    nlc_predict,
    nlc_save,
    train_nlc,
)
from backbone_ensemble._nn import inv_softplus, softplus
from backbone_ensemble.static import log_avg
from backbone_ensemble.synth import SynthConfig, generate_arrays, synth_generate

CORRUPT = Path(__file__).parent / "fixtures" / "corrupt"
RESULTS = {}


def record(n, title, ok, detail=""):
    RESULTS[n] = f"[{'PASS' if ok else 'FAIL'}] C{n:<2} {title}" + (f": {detail}" if detail else "")
    assert ok, RESULTS[n]


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    tr = request.config.pluginmanager.getplugin("terminalreporter")
    if tr is not None and RESULTS:
        tr.write_line("")
        tr.write_line("acceptance summary")
        for n in sorted(RESULTS):
            tr.write_line(RESULTS[n])


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


# C1 ------------------------------------------------------------------------

def test_c1_oracle_and_diversity_bounds():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    bad = 0
    for _ in range(1000):
        b, n = int(rng.integers(2, 10)), int(rng.integers(10, 1001))
        kind = rng.integers(0, 4)
        if kind == 0:  # identical correct sets
            base = rng.uniform(size=n) < rng.uniform(0.05, 0.95)
            base[0] = True
            masks = [base.copy() for _ in range(b)]
        elif kind == 1:  # pairwise disjoint correct sets
            owner = rng.integers(-1, b, size=n)
            owner[0] = 0
            masks = [owner == k for k in range(b)]
        else:
            masks = [rng.uniform(size=n) < rng.uniform(0.05, 0.95) for _ in range(b)]
            masks[0][0] = True
        m = np.stack(masks)
        oracle = oracle_accuracy(masks)
        d = diversity(masks)
        equal_sets = all((mk == masks[0]).all() for mk in masks)
        empty_inter = not m.all(axis=0).any()
        ok = (oracle >= max(mk.mean() for mk in masks) and 0.0 <= d <= 1.0
              and (d == 0.0) == equal_sets and (d == 1.0) == empty_inter)
        bad += not ok
    took = time.perf_counter() - start
    record(1, "oracle dominance and diversity bounds", bad == 0 and took < 10,
           f"{bad} violations in 1000 mask sets, {took:.2f}s")


# C2 ------------------------------------------------------------------------

def test_c2_temperature_preserves_argmax():
    rng = np.random.default_rng(2)
    bad = 0
    for _ in range(1000):
        z = rng.normal(0, rng.uniform(0.1, 20), size=(int(rng.integers(1, 200)), int(rng.integers(2, 50))))
        t = math.exp(rng.uniform(math.log(T_MIN), math.log(T_MAX)))
        bad += not (top1(z / t) == top1(z)).all()
    record(2, "temperature scaling preserves argmax", bad == 0, f"{bad} of 1000 matrices changed")


# C3 ------------------------------------------------------------------------

def independent_nll(z, y, t):
    s = z / t
    out = 0.0
    for row, label in zip(s, y):
        m = max(row)
        out += m + math.log(sum(math.exp(v - m) for v in row)) - row[label]
    return out / len(y)


def test_c3_calibration_never_worse_than_identity():
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(200):
        n, c = int(rng.integers(5, 60)), int(rng.integers(2, 12))
        y = rng.integers(0, c, size=n)
        z = rng.normal(0, rng.uniform(0.2, 10), size=(n, c))
        z[np.arange(n), y] += rng.uniform(-1, 4)
        t = fit_temperature(z, y)
        ok = T_MIN <= t <= T_MAX and nll(z, y, t) <= nll(z, y, 1.0)
        ok &= independent_nll(z, y, t) <= independent_nll(z, y, 1.0) + 1e-12
        bad += not ok
    record(3, "fitted temperature NLL <= NLL at t=1", bad == 0, f"{bad} of 200 instances worse")


# C4 ------------------------------------------------------------------------

def nlc_fd_error(model, z, x, y, h=1e-5):
    _, grads = nlc_loss_grad(model, z, x, y)
    worst = 0.0
    for k, p in model.params().items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = nlc_loss_grad(model, z, x, y)[0]
            p[idx] = old - h
            down = nlc_loss_grad(model, z, x, y)[0]
            p[idx] = old
            worst = max(worst, rel_err(grads[k][idx], (up - down) / (2 * h)))
    return worst


def sl_fd_error(theta, z, y, h=1e-5):
    _, g = sl_loss_grad(theta, z, y)
    worst = 0.0
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        fd = (sl_loss_grad(theta + e, z, y)[0] - sl_loss_grad(theta - e, z, y)[0]) / (2 * h)
        worst = max(worst, rel_err(g[i], fd))
    return worst


def test_c4_gradient_checks():
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst_nlc = worst_sl = 0.0
    for _ in range(50):
        b, c, n = int(rng.integers(2, 4)), int(rng.integers(2, 5)), 8
        dims = [int(rng.integers(1, 4)) for _ in range(b)]
        hidden = int(rng.integers(2, 7))
        model = NlcModel(W1=rng.normal(0, 0.7, size=(hidden, sum(dims))), b1=rng.normal(0, 0.5, size=hidden),
                         W2=rng.normal(0, 0.7, size=(b, hidden)), b2=rng.normal(0, 0.5, size=b),
                         feature_dims=dims, normalize=bool(rng.integers(0, 2)))
        z = rng.normal(size=(b, n, c))
        x = rng.normal(size=(n, sum(dims)))
        y = rng.integers(0, c, size=n)
        worst_nlc = max(worst_nlc, nlc_fd_error(model, z, x, y))
        worst_sl = max(worst_sl, sl_fd_error(rng.normal(0, 1, size=b), z, y))
    took = time.perf_counter() - start
    record(4, "analytic gradients match finite differences",
           worst_nlc < 1e-5 and worst_sl < 1e-5 and took < 30,
           f"max rel err nlc {worst_nlc:.2e}, sl {worst_sl:.2e}, {took:.2f}s")


# C5 ------------------------------------------------------------------------

def test_c5_reduction_identities():
    rng = np.random.default_rng(5)
    bad = {"a": 0, "b": 0, "c": 0}
    for s in range(100):
        b, c, n, d = int(rng.integers(2, 6)), int(rng.integers(2, 20)), int(rng.integers(10, 200)), int(rng.integers(2, 9))
        z = rng.normal(size=(b, n, c))
        feats = [rng.normal(size=(n, d)) for _ in range(b)]
        model = nlc_init(b * d, 128, b, seed=s, feature_dims=[d] * b)
        bad["a"] += not (nlc_predict(model, z, feats) == top1(z.sum(axis=0))).all()
        bad["b"] += not (top1(combine_fixed(z, np.full(b, 1.0 / b))) == top1(log_avg(z))).all()
        t = np.exp(rng.uniform(-2, 2, size=b))
        zero = model.replace_params({"W1": np.zeros_like(model.W1), "b1": rng.normal(size=128),
                                     "W2": np.zeros_like(model.W2), "b2": inv_softplus(t)})
        bad["c"] += not (nlc_predict(zero, z, feats) == top1(combine_fixed(z, softplus(zero.b2)))).all()
    record(5, "reduction identities (init, uniform temps, zero hidden)", not any(bad.values()),
           ", ".join(f"({k}) {v} mismatching instances" for k, v in bad.items()))


# C6 ------------------------------------------------------------------------

def test_c6_cascade_limits_and_monotone_cost(tmp_path):
    start = time.perf_counter()
    bundle = synth_generate(SynthConfig(classes=10, n_train=200, n_test=2000, seed=6,
                                        names=["B-32", "RN50", "B-16"], gflops=[14.9, 18.2, 41.1]), tmp_path)
    order = order_backbones(bundle)
    z = bundle.load_logits("test", order)
    pred0, tr0 = cascade_run(bundle, "test", CascadeConfig(threshold=0.0))
    pred1, tr1 = cascade_run(bundle, "test", CascadeConfig(threshold=1.0))
    lim0 = (pred0 == top1(z[0])).all() and cascade_cost(tr0) == bundle.gflops[order[0]]
    lim1 = (pred1 == top1(log_avg(z))).all() and cascade_cost(tr1) == pytest.approx(bundle.gflops.sum())
    costs = [cascade_cost(cascade_run(bundle, "test", CascadeConfig(threshold=t))[1])
             for t in np.linspace(0, 1, 21)]
    monotone = all(a <= b for a, b in zip(costs, costs[1:]))
    took = time.perf_counter() - start
    record(6, "cascade limits and monotone cost", lim0 and lim1 and monotone and took < 30,
           f"limits {lim0}/{lim1}, cost {costs[0]:.1f}..{costs[-1]:.1f} GFLOPs, {took:.2f}s")


# C7 ------------------------------------------------------------------------

def nlc_run(cfg, seed):
    data = generate_arrays(cfg)
    tr, te = data["train"], data["test"]
    model, _ = train_nlc(tr["logits"], tr["features"], tr["labels"], NlcTrainConfig(seed=seed))
    y = te["labels"]
    masks = [correctness(zb, y) for zb in te["logits"]]
    return {
        "nlc": float(np.mean(nlc_predict(model, te["logits"], te["features"]) == y)),
        "single": max(float(m.mean()) for m in masks),
        "logavg": accuracy(log_avg(te["logits"]), y),
        "diversity": diversity(masks),
    }


def test_c7_nlc_beats_best_single():
    start = time.perf_counter()
    runs = [nlc_run(SynthConfig(classes=10, n_train=5000, n_test=2000, backbones=3, acc=[0.7] * 3,
                                rho=0.8, cue=2.0, seed=s), s) for s in range(5)]
    nlc, single, lavg = (float(np.mean([r[k] for r in runs])) for k in ("nlc", "single", "logavg"))
    took = time.perf_counter() - start
    record(7, "synthetic NLC beats best single by >= 5 points and Log-Avg",
           nlc - single >= 0.05 and nlc >= lavg and took < 180,
           f"nlc {nlc:.4f}, best single {single:.4f}, log-avg {lavg:.4f}, {took:.1f}s")


# C8 ------------------------------------------------------------------------

def test_c8_diversity_improvement_correlation():
    start = time.perf_counter()
    divs, gains = [], []
    for k, rho in enumerate(np.round(np.arange(0.1, 1.0, 0.1), 1)):
        r = nlc_run(SynthConfig(rho=float(rho), seed=100 + k), k)
        divs.append(r["diversity"])
        gains.append(relative_improvement(r["nlc"], r["single"]))
    corr = pearson(divs, gains)
    took = time.perf_counter() - start
    record(8, "diversity vs NLC relative improvement correlation > 0.5", corr > 0.5 and took < 600,
           f"pearson {corr:.3f} over 9 bundles, {took:.1f}s")


# C9 ------------------------------------------------------------------------

ADVERSARIAL_A = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
ADVERSARIAL_B = np.array([[0.0, 5.0], [5.0, 0.0], [5.0, 0.0]])
ADVERSARIAL_Y = np.array([0, 0, 1])


def test_c9_log_avg_failure_mode():
    stack = np.stack([ADVERSARIAL_A, ADVERSARIAL_B])
    masks = [correctness(zb, ADVERSARIAL_Y) for zb in stack]
    lavg = accuracy(log_avg(stack), ADVERSARIAL_Y)
    single = max(float(m.mean()) for m in masks)
    oracle = oracle_accuracy(masks)
    record(9, "Log-Avg below best single while oracle is perfect", lavg < single and oracle == 1.0,
           f"log-avg {lavg:.3f}, best single {single:.3f}, oracle {oracle:.3f}")


# C10 -----------------------------------------------------------------------

def test_c10_io_fidelity(tmp_path):
    rng = np.random.default_rng(10)
    npy_ok = True
    for i, (shape, kind) in enumerate([((7, 3), "f"), ((1, 1), "f"), ((50, 129), "f"), ((9, 1), "i")]):
        m = rng.normal(size=shape).astype(np.float32) if kind == "f" else rng.integers(-9, 9, size=shape)
        save_npy(m, tmp_path / f"m{i}.npy")
        back = load_npy(tmp_path / f"m{i}.npy")
        npy_ok &= back.tobytes() == np.ascontiguousarray(m).tobytes() and back.dtype == m.dtype
    model = nlc_init(9, 16, 3, seed=1, feature_dims=[3, 3, 3], names=["a", "b", "c"], w2_std=0.3)
    nlc_save(model, tmp_path / "m.json")
    x = rng.normal(size=(100, 9)).astype(np.float32)
    out = nlc_forward(model, x).astype(np.float32)
    model_ok = nlc_forward(nlc_load(tmp_path / "m.json"), x).astype(np.float32).tobytes() == out.tobytes()
    cases = sorted(p.name for p in CORRUPT.iterdir() if p.is_dir())
    caught = [c for c in cases if validate_bundle(load_manifest(CORRUPT / c / "manifest.json"))]
    record(10, "NPY and model round trips, corrupt manifests caught",
           npy_ok and model_ok and len(cases) == 6 and caught == cases,
           f"npy {npy_ok}, model {model_ok}, {len(caught)}/{len(cases)} fixtures flagged")


# C11 -----------------------------------------------------------------------

def test_c11_seeded_commands_are_deterministic(tmp_path):
    bundle = tmp_path / "bundle"
    assert execute(["synth", "--seed", "11", "--n", "400", "--n-test", "100", "--classes", "4",
                    "--feature-dim", "5", "--out", str(bundle)]) == 0
    m = str(bundle / "manifest.json")
    commands = {
        "synth": ["synth", "--seed", "12", "--n", "80", "--classes", "3", "--feature-dim", "4", "--out"],
        "fewshot-split": ["fewshot-split", "--manifest", m, "--shots", "4", "--seed", "3", "--out"],
        "train gac": ["train", "--method", "gac", "--manifest", m, "--seed", "1", "--epochs", "10", "--out"],
        "train sl": ["train", "--method", "sl", "--manifest", m, "--seed", "1", "--out"],
        "train nlc": ["train", "--method", "nlc", "--manifest", m, "--seed", "1", "--epochs", "10",
                      "--shots", "16", "--out"],
        "train probe": ["train", "--method", "probe", "--backbone", "bb2", "--manifest", m, "--seed", "1",
                        "--shots", "8", "--out"],
        "calibrate": ["calibrate", "--manifest", m, "--seed", "1", "--out"],
    }

    def snapshot(path):
        if path.is_dir():
            return {p.name: p.read_bytes() for p in sorted(path.iterdir())}
        return path.read_bytes()

    differing = []
    for name, argv in commands.items():
        suffix = "" if name == "synth" else (".npy" if name == "fewshot-split" else ".json")
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{name.replace(' ', '_')}_{tag}{suffix}"
            assert execute(argv + [str(out)]) == 0, name
            outs.append(snapshot(out))
        if outs[0] != outs[1]:
            differing.append(name)
    record(11, "seeded commands produce byte-identical artifacts", not differing,
           f"{len(commands) - len(differing)}/{len(commands)} commands identical"
           + (f", differing: {differing}" if differing else ""))


if __name__ == "__main__":
    import sys

    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
