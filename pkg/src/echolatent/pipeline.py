"""Cross-validated diagnosis experiments and their reports.

Per fold: train the segmentation network on the training split, extract
bottleneck features for every case, select features from training cases only,
train each configured classifier and score the held-out cases.  One
segmentation model per fold is shared by all variants of an experiment.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import classifiers, featsel, segnet
from .classifiers.io import save_model
from .cv import kfold_split
from .dataset import read_dataset
from .phantom import LabeledEcho, PhantomConfig, generate_dataset
from .rng import derive_seed, generator

log = logging.getLogger(__name__)

SELECTIONS = ("NONE", "FSR", "FSL")

# Published results of the source study, kept for context in report.md only.
PAPER_TABLE = [
    ("DCNN (2D [SCI])", 0.67, 0.78, 0.69, 0.73),
    ("DCNN (2D [MCI])", 0.73, 0.77, 0.73, 0.75),
    ("RNN", 0.71, 0.79, 0.72, 0.75),
    ("DCNN (2D+t)", 0.79, 0.80, 0.78, 0.80),
    ("LV-SegNet + SVMC", 0.76, 0.84, 0.80, 0.80),
    ("LV-SegNet + MLP", 0.81, 0.79, 0.81, 0.80),
    ("LV-SegNet + RFC", 0.67, 0.75, 0.71, 0.71),
    ("LV-SegNet + FSR + SVMC", 0.76, 0.72, 0.75, 0.74),
    ("LV-SegNet + FSR + MLP", 0.75, 0.66, 0.73, 0.71),
    ("LV-SegNet + FSR + RFC", 0.58, 0.75, 0.57, 0.67),
    ("LV-SegNet + FSL + SVMC", 0.73, 0.82, 0.76, 0.78),
    ("LV-SegNet + FSL + MLP", 0.73, 0.87, 0.80, 0.81),
    ("LV-SegNet + FSL + RFC", 0.78, 0.85, 0.82, 0.82),
]


class StageError(RuntimeError):
    def __init__(self, stage: str, fold: int | None, cause: Exception):
        where = f"fold {fold}" if fold is not None else "setup"
        super().__init__(f"stage '{stage}' failed in {where}: {cause}")
        self.stage = stage
        self.fold = fold


@dataclass
class ExperimentConfig:
    dataset: str | None = None  # dataset directory; None generates a phantom set
    frames: int | None = None  # resample external videos to this many frames
    n_cases: int = 80
    phantom: dict = field(default_factory=dict)  # PhantomConfig fields
    folds: int = 4
    selection: str = "FSL"
    classifier: str = "RFC"
    variants: list | None = None  # [[selection, classifier], ...]; overrides the pair above
    segnet: dict = field(default_factory=lambda: {"levels": 3, "base_channels": 8, "kernel": 3})
    train: dict = field(default_factory=dict)  # TrainConfig fields (seed is derived per fold)
    seg_train_cases: int | None = None  # cap on training cases used to fit the segmenter
    pooling: str = "temporal-mean"
    fsr: dict = field(default_factory=lambda: {"top_k": 5, "n_select": 3})
    fsl: dict = field(default_factory=lambda: {"target_keep_fraction": 0.10, "n_alphas": 20, "alpha_ratio": 0.01})
    svmc: dict = field(default_factory=dict)
    mlp: dict = field(default_factory=dict)
    rfc: dict = field(default_factory=dict)
    seed: int = 0
    report_runtime: bool = False
    gradcam_images: int = 4

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        for sel, clf in self.variant_list():
            if sel not in SELECTIONS:
                raise ValueError(f"unknown selection {sel!r}; expected one of {SELECTIONS}")
            if clf not in classifiers.KINDS:
                raise ValueError(f"unknown classifier {clf!r}; expected one of {classifiers.KINDS}")
        if self.pooling not in featsel.POOLINGS:
            raise ValueError(f"pooling must be one of {featsel.POOLINGS}")

    def variant_list(self) -> list[tuple[str, str]]:
        if self.variants:
            return [(str(s), str(c)) for s, c in self.variants]
        return [(self.selection, self.classifier)]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Metrics:
    sensitivity: float | None
    specificity: float | None
    f1: float | None
    accuracy: float | None

    def as_tuple(self):
        return (self.sensitivity, self.specificity, self.f1, self.accuracy)


def compute_metrics(tp: int, fp: int, tn: int, fn: int) -> Metrics:
    """Sensitivity, specificity, F1 and accuracy; zero-denominator ratios are None."""
    counts = (tp, fp, tn, fn)
    if any(c < 0 for c in counts):
        raise ValueError(f"confusion counts must be nonnegative, got {counts}")
    n = tp + fp + tn + fn
    if n == 0:
        raise ValueError("confusion counts are all zero")

    def ratio(a, b):
        return a / b if b else None

    return Metrics(
        sensitivity=ratio(tp, tp + fn),
        specificity=ratio(tn, tn + fp),
        f1=ratio(2 * tp, 2 * tp + fp + fn),
        accuracy=(tp + tn) / n,
    )


@dataclass
class FoldResult:
    fold: int
    case_index: np.ndarray
    predicted: np.ndarray
    score: np.ndarray
    truth: np.ndarray
    selection: featsel.SelectionResult | None = None

    @property
    def confusion(self) -> tuple[int, int, int, int]:
        p, t = self.predicted, self.truth
        return (
            int(((p == 1) & (t == 1)).sum()),
            int(((p == 1) & (t == 0)).sum()),
            int(((p == 0) & (t == 0)).sum()),
            int(((p == 0) & (t == 1)).sum()),
        )

    @property
    def metrics(self) -> Metrics:
        return compute_metrics(*self.confusion)


@dataclass
class VariantResult:
    selection: str
    classifier: str
    folds: list[FoldResult]
    runtime_s: float = 0.0

    @property
    def name(self) -> str:
        if self.selection == "NONE":
            return f"LV-SegNet + {self.classifier}"
        return f"LV-SegNet + {self.selection} + {self.classifier}"

    @property
    def confusion(self) -> tuple[int, int, int, int]:
        return tuple(int(sum(f.confusion[i] for f in self.folds)) for i in range(4))

    @property
    def pooled(self) -> Metrics:
        return compute_metrics(*self.confusion)

    @property
    def reduction(self) -> float:
        return float(np.mean([f.selection.reduction_ratio for f in self.folds]))

    def fold_mean(self) -> Metrics:
        vals = []
        for i in range(4):
            got = [f.metrics.as_tuple()[i] for f in self.folds if f.metrics.as_tuple()[i] is not None]
            vals.append(float(np.mean(got)) if got else None)
        return Metrics(*vals)


@dataclass
class MetricsReport:
    variants: list[VariantResult]
    fingerprint: str
    seg_dice: list[float] = field(default_factory=list)  # held-out mean Dice per fold
    shared_runtime_s: float = 0.0
    report_runtime: bool = False

    def variant(self, selection: str, classifier: str) -> VariantResult:
        for v in self.variants:
            if (v.selection, v.classifier) == (selection, classifier):
                return v
        raise KeyError((selection, classifier))


# ------------------------------------------------------------------ fold stages


def _stage(name: str, fold: int | None, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, fold, exc) from exc


def _classifier_params(cfg: ExperimentConfig, kind: str) -> dict:
    return dict({"SVMC": cfg.svmc, "MLP": cfg.mlp, "RFC": cfg.rfc}[kind])


def select_features(method: str, flat: np.ndarray, labels: np.ndarray, alphas: np.ndarray | None,
                    train_idx: np.ndarray, cfg: ExperimentConfig, fold: int | None = None) -> featsel.SelectionResult:
    """Feature selection for one fold; reads rows ``train_idx`` only."""
    train_idx = np.asarray(train_idx, dtype=int)
    if method == "NONE":
        return featsel.no_selection(flat.shape[1], fold)
    if method == "FSR":
        return featsel.fsr_select([alphas[i] for i in train_idx], fold=fold, **cfg.fsr)
    if method == "FSL":
        opts = dict(cfg.fsl)
        n_alphas = opts.pop("n_alphas", 20)
        ratio = opts.pop("alpha_ratio", 0.01)
        X, y = flat[train_idx], labels[train_idx]
        grid = opts.pop("alpha_grid", None)
        if grid is None:
            grid = featsel.default_alpha_grid(X, y, n_alphas, ratio)
        return featsel.fsl_select(X, y, alpha_grid=grid, fold=fold, **opts)
    raise ValueError(f"unknown selection {method!r}")


def _load_cases(cfg: ExperimentConfig) -> list[LabeledEcho]:
    if cfg.dataset:
        return read_dataset(cfg.dataset, cfg.frames)
    return generate_dataset(PhantomConfig(**cfg.phantom), cfg.n_cases)


def train_fold_segnet(cases, train_idx, cfg: ExperimentConfig, fold: int) -> segnet.TrainResult:
    idx = np.asarray(train_idx)
    if cfg.seg_train_cases is not None and cfg.seg_train_cases < idx.size:
        idx = np.sort(generator(cfg.seed, "fold", fold, "seg-subset").permutation(idx)[: cfg.seg_train_cases])
    params = segnet.build(**cfg.segnet, seed=derive_seed(cfg.seed, "fold", fold, "segnet-init"))
    tcfg = segnet.TrainConfig(**{**cfg.train, "seed": derive_seed(cfg.seed, "fold", fold, "segnet-train")})
    return segnet.train([cases[i].video for i in idx], [cases[i].mask for i in idx], params, tcfg)


def run_experiment(cfg: ExperimentConfig, out_dir=None, cases: Sequence[LabeledEcho] | None = None) -> MetricsReport:
    """Run every configured variant under stratified k-fold cross-validation.

    ``out_dir`` (optional) receives per-fold checkpoints, selection files and
    GradCAM images.  ``cases`` overrides the dataset named in the config.
    """
    cases = list(cases) if cases is not None else _stage("load", None, _load_cases, cfg)
    labels = np.array([c.label for c in cases], dtype=int)
    folds = _stage("split", None, kfold_split, labels, cfg.folds, derive_seed(cfg.seed, "cv"))
    variants = cfg.variant_list()
    need_fsr = any(s == "FSR" for s, _ in variants)
    out = Path(out_dir) if out_dir is not None else None
    results = {v: [] for v in variants}
    runtimes = {v: 0.0 for v in variants}
    seg_dice = []
    shared = 0.0
    all_idx = np.arange(len(cases))

    for f, test_idx in enumerate(folds):
        t0 = time.perf_counter()
        train_idx = np.setdiff1d(all_idx, test_idx)
        trained = _stage("segnet", f, train_fold_segnet, cases, train_idx, cfg, f)
        net = trained.params
        feats = _stage("features", f, lambda: np.stack([segnet.extract_bottleneck(net, c.video) for c in cases]))
        flat = np.stack([featsel.flatten_features(x, cfg.pooling) for x in feats])
        dice = _stage("segment", f, lambda: [
            segnet.dice(segnet.segment(net, cases[i].video) > 0.5, cases[i].mask) for i in test_idx])
        seg_dice.append(float(np.mean(dice)))
        alphas = None
        if need_fsr:
            alphas = np.zeros((len(cases), feats.shape[1]))
            for i in train_idx:
                alphas[i] = _stage("kernel-weights", f, featsel.kernel_weights, net, cases[i].video).alpha
        shared += time.perf_counter() - t0
        fold_dir = out / f"fold{f}" if out is not None else None
        if fold_dir is not None:
            segnet.save_params(net, fold_dir / "segnet", seed=derive_seed(cfg.seed, "fold", f, "segnet-init"),
                               epoch=len(trained.loss_history))
        log.info("fold %d: segnet loss %.4f, held-out dice %.3f", f, trained.loss_history[-1], seg_dice[-1])

        selections: dict[str, featsel.SelectionResult] = {}
        for sel, clf in variants:
            t1 = time.perf_counter()
            if sel not in selections:
                selections[sel] = _stage(f"selection:{sel}", f, select_features, sel, flat, labels, alphas,
                                         train_idx, cfg, f)
                if fold_dir is not None:
                    _write_selection(fold_dir, selections[sel], cfg, feats.shape[1:])
                    if sel == "FSR" and cfg.gradcam_images:
                        _write_gradcams(fold_dir, selections[sel], feats, alphas, train_idx, cases, cfg)
            selection = selections[sel]
            cols = selection.columns(feats.shape[1:], cfg.pooling)
            seed = derive_seed(cfg.seed, "fold", f, "clf", clf)
            model = _stage(f"classifier:{clf}", f, classifiers.train_classifier, clf, flat[np.ix_(train_idx, cols)],
                           labels[train_idx], seed, **_classifier_params(cfg, clf))
            pred, score = classifiers.predict(model, flat[np.ix_(test_idx, cols)])
            if fold_dir is not None:
                save_model(model, fold_dir / f"{sel}_{clf}")
            results[(sel, clf)].append(FoldResult(f, test_idx, pred, score, labels[test_idx], selection))
            runtimes[(sel, clf)] += time.perf_counter() - t1

    return MetricsReport(
        variants=[VariantResult(s, c, results[(s, c)], runtimes[(s, c)] + shared) for s, c in variants],
        fingerprint=cfg.fingerprint(),
        seg_dice=seg_dice,
        shared_runtime_s=shared,
        report_runtime=cfg.report_runtime,
    )


def _write_selection(fold_dir: Path, sel: featsel.SelectionResult, cfg, feature_shape) -> None:
    fold_dir.mkdir(parents=True, exist_ok=True)
    body = sel.to_json()
    body["pooling"] = cfg.pooling
    body["feature_shape"] = [int(d) for d in feature_shape]
    (fold_dir / f"selection_{sel.method}.json").write_text(json.dumps(body, indent=2, sort_keys=True))


def _write_gradcams(fold_dir: Path, sel, feats, alphas, train_idx, cases, cfg) -> None:
    img_dir = fold_dir / "gradcam"
    img_dir.mkdir(parents=True, exist_ok=True)
    keep = np.asarray(sel.indices)
    for i in train_idx[: cfg.gradcam_images]:
        for tag, kernels in (("all", np.arange(feats.shape[1])), ("fsr", keep)):
            cam = featsel.gradcam_map(feats[i][kernels], alphas[i][kernels], upsample_to=None).map
            img = cam.mean(axis=0)
            factor = cases[i].video.shape[1] // img.shape[0]
            featsel.write_pgm(img_dir / f"{cases[i].case_id}_{tag}.pgm",
                              np.kron(img, np.ones((factor, factor))))


# ------------------------------------------------------------------ reporting


def _fmt(v) -> str:
    return "NA" if v is None else f"{v:.4f}"


def report_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "sensitivity", "specificity", "f1", "accuracy", "reduction", "runtime_s"])
    for v in report.variants:
        runtime = f"{v.runtime_s:.2f}" if report.report_runtime else "NA"
        w.writerow([v.name, *(_fmt(x) for x in v.pooled.as_tuple()), _fmt(v.reduction), runtime])
    return buf.getvalue()


def folds_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "fold", "tp", "fp", "tn", "fn", "sensitivity", "specificity", "f1", "accuracy",
                "reduction"])
    for v in report.variants:
        for f in v.folds:
            w.writerow([v.name, f.fold, *f.confusion, *(_fmt(x) for x in f.metrics.as_tuple()),
                        _fmt(f.selection.reduction_ratio)])
    return buf.getvalue()


def report_markdown(report: MetricsReport) -> str:
    lines = [
        "# Diagnosis experiment report",
        "",
        f"Config fingerprint: `{report.fingerprint}`",
        "",
        "## Results on this dataset (pooled over folds)",
        "",
        "| Method | Sensitivity | Specificity | F1-score | Accuracy | Reduction |",
        "|---|---|---|---|---|---|",
    ]
    for v in report.variants:
        lines.append(f"| {v.name} | " + " | ".join(_fmt(x) for x in v.pooled.as_tuple()) + f" | {_fmt(v.reduction)} |")
    lines += ["", "## Mean of per-fold metrics", "",
              "| Method | Sensitivity | Specificity | F1-score | Accuracy |", "|---|---|---|---|---|"]
    for v in report.variants:
        lines.append(f"| {v.name} | " + " | ".join(_fmt(x) for x in v.fold_mean().as_tuple()) + " |")
    lines += ["", "Held-out segmentation Dice per fold: " + ", ".join(f"{d:.3f}" for d in report.seg_dice)]
    if report.report_runtime:
        lines += ["", f"Shared per-fold runtime (segmentation, features): {report.shared_runtime_s:.1f} s"]
    lines += [
        "",
        "## Reference values: published, not reproduced",
        "",
        "Private 300-video echocardiogram dataset; listed for context only.",
        "",
        "| Method | Sensitivity | Specificity | F1-score | Accuracy |",
        "|---|---|---|---|---|",
    ]
    for name, *vals in PAPER_TABLE:
        lines.append(f"| {name} | " + " | ".join(f"{x:.2f}" for x in vals) + " |")
    return "\n".join(lines) + "\n"


def emit_report(report: MetricsReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, text in (("report.csv", report_csv(report)), ("folds.csv", folds_csv(report)),
                           ("report.md", report_markdown(report))):
            p = out / name
            p.write_text(text)
            paths.append(p)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return paths
