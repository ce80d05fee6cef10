"""Model files: ``clf.json`` manifest plus LTSR tensors (MLP) or JSON bodies (RFC, SVMC)."""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .. import ltsr
from . import kind_of
from .forest import RfModel, Tree
from .mlp import MlpConfig, MlpModel
from .svm import RbfSvm, SvmStackModel


def _svm_json(m: RbfSvm) -> dict:
    return {
        "support_vectors": m.support_vectors.tolist(),
        "dual_coef": m.dual_coef.tolist(),
        "intercept": m.intercept,
        "gamma": m.gamma,
        "C": m.C,
        "converged": m.converged,
        "n_iter": m.n_iter,
    }


def _svm_from(d: dict) -> RbfSvm:
    sv = np.asarray(d["support_vectors"], dtype=float)
    return RbfSvm(sv, np.asarray(d["dual_coef"], dtype=float), d["intercept"], d["gamma"], d["C"],
                  alpha=np.abs(np.asarray(d["dual_coef"], dtype=float)), y=np.sign(d["dual_coef"]),
                  converged=d["converged"], n_iter=d["n_iter"])


def save_model(model, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = kind_of(model)
    if kind == "MLP":
        hyper = dataclasses.asdict(model.config)
        files = []
        for i, w in enumerate(model.weights):
            name = f"mlp_param{i}.ltsr"
            ltsr.save(out / name, w)
            files.append(name)
        ltsr.save(out / "x_mean.ltsr", model.x_mean)
        ltsr.save(out / "x_scale.ltsr", model.x_scale)
        body = {"params": files}
        seed = model.config.seed
    elif kind == "RFC":
        hyper = {"n_trees": model.n_trees, "max_depth": model.max_depth, "max_features": model.max_features}
        (out / "forest.json").write_text(json.dumps({"trees": [t.to_json() for t in model.trees]}))
        body = {"file": "forest.json"}
        seed = model.seed
    else:
        hyper = dict(model.hyper)
        seed = hyper.get("seed", 0)
        payload = {
            "bases": [_svm_json(b) for b in model.bases],
            "meta_w": model.meta_w.tolist(),
            "meta_b": model.meta_b,
            "x_mean": model.x_mean.tolist(),
            "x_scale": model.x_scale.tolist(),
        }
        (out / "svm.json").write_text(json.dumps(payload))
        body = {"file": "svm.json"}
    manifest = {"kind": kind, "hyperparameters": hyper, "seed": seed, **body}
    (out / "clf.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def load_model(model_dir):
    d = Path(model_dir)
    manifest = json.loads((d / "clf.json").read_text())
    kind = manifest["kind"]
    if kind == "MLP":
        weights = [ltsr.load(d / f) for f in manifest["params"]]
        hyper = dict(manifest["hyperparameters"])
        hyper["hidden"] = tuple(hyper["hidden"])
        return MlpModel(weights, ltsr.load(d / "x_mean.ltsr"), ltsr.load(d / "x_scale.ltsr"), MlpConfig(**hyper))
    if kind == "RFC":
        trees = [Tree.from_json(t) for t in json.loads((d / manifest["file"]).read_text())["trees"]]
        h = manifest["hyperparameters"]
        return RfModel(trees, h["max_depth"], h["max_features"], manifest["seed"])
    if kind == "SVMC":
        p = json.loads((d / manifest["file"]).read_text())
        return SvmStackModel(
            bases=[_svm_from(b) for b in p["bases"]],
            meta_w=np.asarray(p["meta_w"], dtype=float),
            meta_b=p["meta_b"],
            x_mean=np.asarray(p["x_mean"], dtype=float),
            x_scale=np.asarray(p["x_scale"], dtype=float),
            hyper=manifest["hyperparameters"],
        )
    raise ValueError(f"unknown model kind {kind!r} in {d / 'clf.json'}")
