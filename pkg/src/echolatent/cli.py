"""Command line entry point: ``echolatent <group> <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import classifiers, featsel, ltsr, pipeline, segnet
from .classifiers.io import load_model, save_model
from .dataset import read_dataset, read_manifest, write_dataset
from .phantom import PhantomConfig, generate_dataset

log = logging.getLogger("echolatent")


def _phantom_generate(args) -> int:
    cfg = PhantomConfig(frames=args.frames, height=args.height, width=args.width, speckle=args.speckle,
                        artifact_prob=args.artifact_prob, seed=args.seed)
    out = write_dataset(generate_dataset(cfg, args.n), args.out)
    print(f"wrote {args.n} cases to {out}")
    return 0


def _segnet_train(args) -> int:
    cases = read_dataset(args.data, args.frames)
    params = segnet.build(args.levels, args.base_channels, seed=args.seed)
    cfg = segnet.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr0=args.lr, seed=args.seed)
    result = segnet.train([c.video for c in cases], [c.mask for c in cases], params, cfg)
    segnet.save_params(result.params, args.out, seed=args.seed, epoch=args.epochs)
    print(f"final loss {result.loss_history[-1]:.4f}; checkpoint in {args.out}")
    return 0


def _segnet_segment(args) -> int:
    params = segnet.load_params(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scores = []
    for c in read_dataset(args.data, args.frames):
        pred = (segnet.segment(params, c.video) > 0.5).astype(np.float64)
        ltsr.save(out / f"{c.case_id}_mask.ltsr", pred)
        scores.append(segnet.dice(pred, c.mask))
    print(f"mean Dice {np.mean(scores):.4f} over {len(scores)} cases")
    return 0


def _segnet_extract(args) -> int:
    params = segnet.load_params(args.model)
    cases = read_dataset(args.data, args.frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    feats = np.stack([segnet.extract_bottleneck(params, c.video) for c in cases])
    ltsr.save(out / "features.ltsr", feats)
    if args.kernel_weights:
        alphas = np.stack([featsel.kernel_weights(params, c.video).alpha for c in cases])
        ltsr.save(out / "kernel_weights.ltsr", alphas)
    print(f"features {feats.shape} written to {out}")
    return 0


def _labels(manifest) -> np.ndarray:
    return np.array([r["label"] for r in read_manifest(manifest)], dtype=int)


def _write_selection(sel, out, pooling, feature_shape) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    body = sel.to_json()
    body["pooling"] = pooling
    body["feature_shape"] = [int(d) for d in feature_shape]
    path = out / "selection.json"
    path.write_text(json.dumps(body, indent=2, sort_keys=True))
    return path


def _featsel_fsr(args) -> int:
    feats = ltsr.load(args.features)
    alphas = ltsr.load(args.kernel_weights)
    sel = featsel.fsr_select(list(alphas), top_k=args.top_k, n_select=args.n_select)
    path = _write_selection(sel, args.out, args.pooling, feats.shape[1:])
    if args.heatmaps:
        for i in range(min(args.heatmaps, feats.shape[0])):
            for tag, ks in (("all", np.arange(feats.shape[1])), ("fsr", np.asarray(sel.indices))):
                cam = featsel.gradcam_map(feats[i][ks], alphas[i][ks]).map.mean(axis=0)
                featsel.write_pgm(Path(args.out) / f"case{i:04d}_{tag}.pgm", cam)
    print(f"FSR kernels {list(sel.indices)}; {path}")
    return 0


def _featsel_fsl(args) -> int:
    feats = ltsr.load(args.features)
    X = np.stack([featsel.flatten_features(f, args.pooling) for f in feats])
    y = _labels(args.manifest)
    sel = featsel.fsl_select(X, y, target_keep_fraction=args.keep)
    path = _write_selection(sel, args.out, args.pooling, feats.shape[1:])
    print(f"FSL kept {len(sel.indices)} of {sel.n_features} features (alpha {sel.alpha:.4g}); {path}")
    return 0


def _matrix(features, selection):
    feats = ltsr.load(features)
    if selection is None:
        return np.stack([featsel.flatten_features(f) for f in feats])
    body = json.loads(Path(selection).read_text())
    pooling = body.get("pooling", "temporal-mean")
    sel = featsel.SelectionResult.from_json(body)
    X = np.stack([featsel.flatten_features(f, pooling) for f in feats])
    return X[:, sel.columns(feats.shape[1:], pooling)]


def _clf_train(args) -> int:
    X = _matrix(args.features, args.selection)
    model = classifiers.train_classifier(args.kind, X, _labels(args.manifest), args.seed)
    save_model(model, args.out)
    print(f"{args.kind} trained on {X.shape}; model in {args.out}")
    return 0


def _clf_predict(args) -> int:
    X = _matrix(args.features, args.selection)
    labels, scores = classifiers.predict(load_model(args.model), X)
    ids = [r["id"] for r in read_manifest(args.manifest)] if args.manifest else [str(i) for i in range(len(labels))]
    lines = ["id,predicted,score"] + [f"{i},{l},{s:.6f}" for i, l, s in zip(ids, labels, scores)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _pipeline_run(args) -> int:
    cfg = pipeline.ExperimentConfig.from_json(args.config)
    report = pipeline.run_experiment(cfg, args.out)
    for p in pipeline.emit_report(report, args.out):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="echolatent", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    groups = ap.add_subparsers(dest="group", required=True)

    ph = groups.add_parser("phantom").add_subparsers(dest="cmd", required=True)
    g = ph.add_parser("generate", help="write a synthetic echo dataset")
    g.add_argument("--out", required=True)
    g.add_argument("-n", type=int, default=80)
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--speckle", type=float, default=0.2)
    g.add_argument("--artifact-prob", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=_phantom_generate)

    sn = groups.add_parser("segnet").add_subparsers(dest="cmd", required=True)
    t = sn.add_parser("train")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--batch-size", type=int, default=4)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--levels", type=int, default=3)
    t.add_argument("--base-channels", type=int, default=8)
    t.add_argument("--frames", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(fn=_segnet_train)
    for name, fn in (("segment", _segnet_segment), ("extract", _segnet_extract)):
        s = sn.add_parser(name)
        s.add_argument("--model", required=True)
        s.add_argument("--data", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--frames", type=int)
        if name == "extract":
            s.add_argument("--kernel-weights", action="store_true", help="also write GradCAM kernel weights")
        s.set_defaults(fn=fn)

    fs = groups.add_parser("featsel").add_subparsers(dest="cmd", required=True)
    r = fs.add_parser("fsr")
    r.add_argument("--features", required=True)
    r.add_argument("--kernel-weights", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--top-k", type=int, default=5)
    r.add_argument("--n-select", type=int, default=3)
    r.add_argument("--pooling", default="temporal-mean", choices=featsel.POOLINGS)
    r.add_argument("--heatmaps", type=int, default=0, help="number of cases to render as PGM")
    r.set_defaults(fn=_featsel_fsr)
    l = fs.add_parser("fsl")
    l.add_argument("--features", required=True)
    l.add_argument("--manifest", required=True)
    l.add_argument("--out", required=True)
    l.add_argument("--keep", type=float, default=0.10)
    l.add_argument("--pooling", default="temporal-mean", choices=featsel.POOLINGS)
    l.set_defaults(fn=_featsel_fsl)

    cl = groups.add_parser("clf").add_subparsers(dest="cmd", required=True)
    c = cl.add_parser("train")
    c.add_argument("--kind", required=True, choices=classifiers.KINDS)
    c.add_argument("--features", required=True)
    c.add_argument("--manifest", required=True)
    c.add_argument("--selection")
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=_clf_train)
    p = cl.add_parser("predict")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--selection")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.set_defaults(fn=_clf_predict)

    pl = groups.add_parser("pipeline").add_subparsers(dest="cmd", required=True)
    run = pl.add_parser("run")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.set_defaults(fn=_pipeline_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
