"""Acceptance checks, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured value and
the tolerance it was held to, then asserts.  Run with ``pytest -s`` or as a
script (``python tests/test_acceptance.py``) to see only those lines.  The
desk-scale runs (criteria 6 and 7) take most of the time: roughly 25 minutes
on a single core.
"""
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from echolatent import featsel, ops, pipeline, segnet  # noqa: E402
from echolatent.classifiers import mlp_predict, mlp_train, MlpConfig, rf_train, svm_stack_train  # noqa: E402
from echolatent.cv import kfold_split  # noqa: E402
from echolatent.phantom import PhantomConfig, generate_dataset  # noqa: E402
from echolatent.pipeline import ExperimentConfig, compute_metrics  # noqa: E402
from echolatent.rng import derive_seed  # noqa: E402
from echolatent.tensor import Tensor  # noqa: E402
from gradcases import KINDS, check_case  # noqa: E402
from oracles import lasso_proximal, lasso_value  # noqa: E402

# Desk-scale end-to-end setting shared by criteria 6 and 7: 80 cases of
# 64x64x16 phantom video (the PhantomConfig defaults), FSL keeps 10%.  The segmenter sees
# at most 20 training cases for 6 epochs per fold; see the decisions ledger.
DESK = {
    "n_cases": 80,
    "folds": 4,
    "train": {"epochs": 6, "batch_size": 2},
    "seg_train_cases": 20,
}
ARTIFACT_PROB = 0.5
ORDER_SEEDS = (0, 1, 2, 3)


def verdict(n, ok, detail, capsys=None):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {detail}"
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)
    assert ok, line


# ------------------------------------------------------------------ 1


def test_criterion_01_autodiff(capsys):
    t0 = time.perf_counter()
    worst = {}
    for k in KINDS:
        rng = np.random.default_rng(derive_seed(1, k))
        worst[k] = max(check_case(k, rng) for _ in range(100))
    elapsed = time.perf_counter() - t0
    bad = max(worst, key=worst.get)
    ok = worst[bad] < 1e-5 and elapsed < 60
    verdict(1, ok, f"{len(KINDS)} op kinds x 100 instances, worst rel err {worst[bad]:.1e} ({bad}) < 1e-5; "
                   f"{elapsed:.1f}s < 60s", capsys)


# ------------------------------------------------------------------ 2


def _shift_oracle(net, video, h=1e-6):
    feats, skips = segnet.encode(net, Tensor(segnet._standardize(video)[None, None]))
    base = feats.data
    out = np.empty(base.shape[1])
    for l in range(base.shape[1]):
        vals = []
        for eps in (h, -h):
            f = base.copy()
            f[0, l] += eps
            vals.append(ops.sigmoid(segnet.decode(net, Tensor(f), skips)).data.sum())
        out[l] = (vals[0] - vals[1]) / (2 * h)
    return out / base[0, 0].size


def test_criterion_02_kernel_weights(capsys):
    worst, same_rank = 0.0, True
    for seed in range(3):
        net = segnet.build(levels=2, base_channels=16, seed=seed)
        video = np.random.default_rng(seed).random((4, 8, 8))
        alpha = featsel.kernel_weights(net, video).alpha
        fd = _shift_oracle(net, video)
        worst = max(worst, float(np.max(np.abs(alpha - fd)) / np.max(np.abs(fd))))
        by_kernels = featsel.kernel_weights(net, video, normalizer="kernels").alpha
        same_rank &= np.array_equal(np.argsort(alpha, kind="stable"), np.argsort(by_kernels, kind="stable"))
    ok = worst < 1e-4 and same_rank
    verdict(2, ok, f"kernel weights vs shift oracle rel err {worst:.1e} < 1e-4; ranking equal under "
                   f"N=32 vs N=spatial: {same_rank}", capsys)


# ------------------------------------------------------------------ 3


def test_criterion_03_gradcam_map(capsys):
    cases = [
        # (F1, F2, weights, hand result)
        ([[1, 2], [3, 4]], [[0, 1], [2, 3]], (1, -2), [[1, 0], [0, 0]]),
        ([[1, 0], [0, 1]], [[0, 1], [1, 0]], (2, 3), [[2, 3], [3, 2]]),
        ([[5, -1], [2, 0]], [[1, 1], [1, 1]], (0.5, -1), [[1.5, 0], [0, 0]]),
        ([[-1, -2], [-3, -4]], [[0, 0], [0, 0]], (1, 7), [[0, 0], [0, 0]]),
    ]
    exact = all(
        np.array_equal(featsel.gradcam_map(np.array([[f1], [f2]], dtype=float), np.array(w, dtype=float)).map[0],
                       np.array(want, dtype=float))
        for f1, f2, w, want in cases
    )
    rng = np.random.default_rng(3)
    nonneg = all(
        featsel.gradcam_map(rng.normal(size=(32, 2, 3, 3)), rng.normal(size=32)).map.min() >= 0
        for _ in range(1000)
    )
    verdict(3, exact and nonneg, f"{len(cases)} hand 2x2 instances exact: {exact}; "
                                 f"nonnegative on 1000 random maps: {nonneg}", capsys)


# ------------------------------------------------------------------ 4


def test_criterion_04_lasso(capsys):
    rng = np.random.default_rng(4)
    fits = []
    X = rng.normal(size=(20, 5))
    y = rng.integers(0, 2, 20).astype(float)
    f0 = featsel.lasso_fit(X, y, 0.0, tol=1e-12, max_iter=100_000)
    fits.append(f0)
    Xs, _, _ = featsel.standardize_columns(X)
    ls = np.linalg.solve(Xs.T @ Xs, Xs.T @ (y - y.mean()))
    err_ls = float(np.max(np.abs(f0.coef - ls)))

    a_null = featsel.null_alpha(Xs, y - y.mean())
    zero_ok = True
    for a in (a_null, 1.01 * a_null, 3 * a_null):
        f = featsel.lasso_fit(X, y, a)
        fits.append(f)
        zero_ok &= not f.coef.any()

    worst_obj, same_support = 0.0, True
    for _ in range(20):
        X = rng.normal(size=(30, 5))
        y = (X @ rng.normal(size=5) + rng.normal(size=30) > 0).astype(float)
        f = featsel.lasso_fit(X, y, 0.1, tol=1e-10, max_iter=100_000)
        fits.append(f)
        Xs, _, _ = featsel.standardize_columns(X)
        yc = y - y.mean()
        ref = lasso_proximal(Xs, yc, 0.1)
        worst_obj = max(worst_obj, abs(lasso_value(Xs, yc, f.coef, 0.1) - lasso_value(Xs, yc, ref, 0.1)))
        same_support &= np.array_equal(np.flatnonzero(f.coef), np.flatnonzero(ref))
    kkt_ok = all(f.kkt_residual <= 10 * f.tol for f in fits if f.converged)
    ok = err_ls < 1e-6 and zero_ok and worst_obj < 1e-6 and same_support and kkt_ok
    verdict(4, ok, f"alpha=0 vs normal equations {err_ls:.1e} < 1e-6; null threshold exact zero: {zero_ok}; "
                   f"20 prox-gradient instances obj diff {worst_obj:.1e} < 1e-6, supports equal: {same_support}; "
                   f"KKT <= 10 tol on {sum(f.converged for f in fits)} converged fits: {kkt_ok}", capsys)


# ------------------------------------------------------------------ 5


def test_criterion_05_fsr(capsys):
    # hand-counted table: k2 in 10 cases, k7 in 9, k11 in 8, k30 in 1, fillers at most twice
    fillers = iter([12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 12, 13, 14, 15, 30, 16, 17])
    cases = []
    for i in range(10):
        top = [2] + ([7] if i < 9 else []) + ([11] if i < 8 else [])
        while len(top) < 5:
            top.append(next(fillers))
        a = np.zeros(32)
        a[top] = np.linspace(5, 1, 5)
        cases.append(a)
    sel = featsel.fsr_select(cases)
    freq = sel.details["frequencies"]
    hand = {2: 10, 7: 9, 11: 8, 30: 1, 12: 2, 13: 2, 14: 2, 15: 2, 16: 2, 17: 2}
    table_ok = all(freq[k] == v for k, v in hand.items()) and sum(freq.values()) == 50
    ok = len(sel.indices) == 3 and sel.indices == (2, 7, 11) and table_ok and abs(sel.reduction_ratio - 0.90) <= 0.01
    verdict(5, ok, f"selected {list(sel.indices)} (hand: [2, 7, 11]); frequency table matches: {table_ok}; "
                   f"reduction {sel.reduction_ratio:.4f} ~ 0.90 (+-0.01)", capsys)


# ------------------------------------------------------------------ 6


def test_criterion_06_segmentation(capsys):
    # one fold, segmenter fitted on every training case (no cap)
    cfg = ExperimentConfig.from_dict({**DESK, "seg_train_cases": None})
    cases = generate_dataset(PhantomConfig(), cfg.n_cases)
    labels = np.array([c.label for c in cases])
    held = kfold_split(labels, cfg.folds, derive_seed(cfg.seed, "cv"))[0]
    train = np.setdiff1d(np.arange(cfg.n_cases), held)
    t0 = time.perf_counter()
    res = pipeline.train_fold_segnet(cases, train, cfg, 0)
    minutes = (time.perf_counter() - t0) / 60
    d = float(np.mean([segnet.dice(segnet.segment(res.params, cases[i].video) > 0.5, cases[i].mask) for i in held]))
    epochs = cfg.train["epochs"]
    ok = d >= 0.80 and epochs <= 40 and minutes <= 10
    verdict(6, ok, f"held-out Dice {d:.3f} >= 0.80 after {epochs} epochs (<= 40) on {train.size} training cases; "
                   f"fold training {minutes:.1f} min <= 10 (1 core)", capsys)


# ------------------------------------------------------------------ 7


def _desk_run(seed, artifact_prob, variants):
    cfg = ExperimentConfig.from_dict({**DESK, "phantom": {"seed": seed, "artifact_prob": artifact_prob},
                                      "seed": seed, "variants": variants})
    return pipeline.run_experiment(cfg)


def test_criterion_07_end_to_end(capsys):
    report = _desk_run(0, 0.0, [["FSL", "RFC"]])
    v = report.variant("FSL", "RFC")
    acc, red = v.pooled.accuracy, v.reduction
    wins = []
    for s in ORDER_SEEDS:
        r = _desk_run(s, ARTIFACT_PROB, [["FSL", "RFC"], ["FSR", "RFC"]])
        wins.append((r.variant("FSL", "RFC").pooled.accuracy, r.variant("FSR", "RFC").pooled.accuracy))
    n_ok = sum(a >= b for a, b in wins)
    ok = acc >= 0.90 and red >= 0.85 and n_ok >= 3
    pairs = ", ".join(f"{a:.3f}/{b:.3f}" for a, b in wins)
    verdict(7, ok, f"FSL+RFC pooled accuracy {acc:.3f} >= 0.90, reduction {red:.3f} >= 0.85; "
                   f"artifact config FSL/FSR accuracy per seed [{pairs}], FSL >= FSR in {n_ok}/4 (need 3)", capsys)


# ------------------------------------------------------------------ 8


def test_criterion_08_classifiers(capsys):
    rng = np.random.default_rng(8)
    y = np.arange(60) % 2
    X = rng.normal(size=(60, 6)) + 1.5 * y[:, None]
    stack = svm_stack_train(X, y, n_base=5, seed=8)
    dual_ok = all(
        np.all(b.alpha >= 0) and np.all(b.alpha <= b.C) and abs(b.alpha @ b.y) <= 1e-6 for b in stack.bases
    )
    mlp = mlp_train(X, y, MlpConfig(epochs=20, seed=8))
    P = mlp_predict(mlp, rng.normal(size=(50, 6)) * 4)
    simplex = float(np.max(np.abs(P.sum(axis=1) - 1)))
    forest = rf_train(X, y, seed=8)
    depth = max(t.max_depth for t in forest.trees)
    ok = dual_ok and mlp.widths[:3] == (64, 256, 512) and simplex <= 1e-9 and forest.n_trees == 100 and depth <= 11
    verdict(8, ok, f"SVM dual feasible on {len(stack.bases)} bases: {dual_ok}; MLP widths {mlp.widths[:3]}, "
                   f"softmax sum err {simplex:.1e} <= 1e-9; RFC {forest.n_trees} trees, deepest path {depth} <= 11",
            capsys)


# ------------------------------------------------------------------ 9


def test_criterion_09_reproducibility_and_leakage(capsys):
    small = {"n_cases": 16, "phantom": {"frames": 8, "height": 32, "width": 32, "seed": 9}, "folds": 4,
             "train": {"epochs": 2, "batch_size": 4}, "seed": 9,
             "variants": [["NONE", "RFC"], ["FSR", "SVMC"], ["FSL", "MLP"], ["FSL", "RFC"]]}
    cfg = ExperimentConfig.from_dict(small)
    first = pipeline.report_csv(pipeline.run_experiment(cfg)).encode()
    second = pipeline.report_csv(pipeline.run_experiment(cfg)).encode()
    identical = first == second

    cases = generate_dataset(PhantomConfig(frames=8, height=32, width=32, seed=9), 16)
    labels = np.array([c.label for c in cases])
    folds = kfold_split(labels, 4, seed=9)
    net = segnet.build(seed=9)
    flat = np.stack([featsel.flatten_features(segnet.extract_bottleneck(net, c.video)) for c in cases])
    alphas = np.stack([featsel.kernel_weights(net, c.video).alpha for c in cases])
    same = True
    for held in folds:
        train = np.setdiff1d(np.arange(16), held)
        poisoned = labels.copy()
        poisoned[held] = 1 - poisoned[held]
        for method in ("FSR", "FSL"):
            a = pipeline.select_features(method, flat, labels, alphas, train, cfg)
            b = pipeline.select_features(method, flat, poisoned, alphas, train, cfg)
            same &= a.indices == b.indices
    verdict(9, identical and same, f"two runs byte-identical report.csv: {identical}; poisoned held-out labels "
                                   f"leave FSR/FSL selections unchanged on all 4 folds: {same}", capsys)


# ------------------------------------------------------------------ 10


def test_criterion_10_metrics(capsys):
    # (tp, fp, tn, fn) -> hand-computed (sensitivity, specificity, f1, accuracy); None = absent
    table = [
        ((5, 0, 5, 0), (1.0, 1.0, 1.0, 1.0)),
        ((39, 9, 51, 11), (39 / 50, 51 / 60, 78 / 98, 90 / 110)),
        ((0, 3, 7, 0), (None, 7 / 10, 0.0, 7 / 10)),
        ((4, 0, 0, 6), (4 / 10, None, 8 / 14, 4 / 10)),
        ((0, 0, 9, 0), (None, 1.0, None, 1.0)),
        ((3, 0, 0, 0), (1.0, None, 1.0, 1.0)),
        ((0, 5, 0, 5), (0.0, 0.0, 0.0, 0.0)),
        ((10, 2, 8, 5), (10 / 15, 8 / 10, 20 / 27, 18 / 25)),
        ((1, 1, 1, 1), (0.5, 0.5, 0.5, 0.5)),
        ((35, 10, 30, 0), (1.0, 30 / 40, 70 / 80, 65 / 75)),
    ]
    mismatches = [c for c, want in table if compute_metrics(*c).as_tuple() != want]
    rejects = False
    try:
        compute_metrics(0, 0, 0, 0)
    except ValueError:
        rejects = True
    ok = not mismatches and rejects
    verdict(10, ok, f"{len(table) - len(mismatches)}/{len(table)} constructed matrices exact (incl. absent "
                    f"metrics); all-zero counts rejected: {rejects}", capsys)


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn(None)
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
