"""Binary classifiers over selected feature vectors: SVMC, MLP and RFC."""
from __future__ import annotations

import numpy as np

from .forest import RfModel, Tree, grow_tree, rf_predict, rf_train
from .mlp import HIDDEN, MlpConfig, MlpModel, mlp_predict, mlp_train
from .svm import RbfSvm, SvmStackModel, rbf_kernel, svm_stack_train, svm_train

KINDS = ("SVMC", "MLP", "RFC")


def train_classifier(kind: str, X, y, seed: int = 0, **params):
    """Train the classifier named ``kind`` on 0/1 labels."""
    if kind == "SVMC":
        return svm_stack_train(X, y, seed=seed, **params)
    if kind == "MLP":
        return mlp_train(X, y, MlpConfig(seed=seed, **params))
    if kind == "RFC":
        return rf_train(X, y, seed=seed, **params)
    raise ValueError(f"unknown classifier {kind!r}; expected one of {KINDS}")


def predict(model, X) -> tuple[np.ndarray, np.ndarray]:
    """Labels and a score in [0, 1] for label 1."""
    if isinstance(model, SvmStackModel):
        p = model.predict_proba(X)
        return (p > 0.5).astype(int), p
    if isinstance(model, MlpModel):
        p = mlp_predict(model, X)[:, 1]
        return (p > 0.5).astype(int), p
    if isinstance(model, RfModel):
        return rf_predict(model, X)
    raise TypeError(f"not a classifier model: {type(model).__name__}")


def kind_of(model) -> str:
    return {SvmStackModel: "SVMC", MlpModel: "MLP", RfModel: "RFC"}[type(model)]


__all__ = [
    "HIDDEN", "KINDS", "MlpConfig", "MlpModel", "RbfSvm", "RfModel", "SvmStackModel", "Tree",
    "grow_tree", "kind_of", "mlp_predict", "mlp_train", "predict", "rbf_kernel", "rf_predict",
    "rf_train", "svm_stack_train", "svm_train", "train_classifier",
]
