"""RBF support vector machines solved by SMO, and a stacked ensemble of them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..cv import kfold_split
from ..rng import generator

TAU = 1e-12


def rbf_kernel(u, v, gamma: float) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch {u.shape} vs {v.shape}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = u - v
    return float(np.exp(-gamma * (d @ d)))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def default_gamma(X: np.ndarray) -> float:
    """1 / (n_features * var(X)); falls back to 1 / n_features for constant X."""
    var = float(np.var(X))
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0 / X.shape[1]


@dataclass
class RbfSvm:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for the support vectors
    intercept: float
    gamma: float
    C: float
    alpha: np.ndarray  # full dual vector over the training set
    y: np.ndarray
    converged: bool
    n_iter: int

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.support_vectors.shape[0] == 0:
            return np.full(X.shape[0], self.intercept)
        return rbf_matrix(X, self.support_vectors, self.gamma) @ self.dual_coef + self.intercept

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1, -1)


def svm_train(X, y, C: float = 1.0, gamma: float | None = None, tol: float = 1e-3,
              max_iter: int = 100_000) -> RbfSvm:
    """Soft-margin RBF SVM; SMO with maximal-violating-pair working sets."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise ValueError("svm_train needs labels in {-1, +1} with both classes present")
    if C <= 0:
        raise ValueError("C must be positive")
    gamma = default_gamma(X) if gamma is None else float(gamma)
    n = len(y)
    K = rbf_matrix(X, X, gamma)
    Q = (y[:, None] * y[None, :]) * K
    diag = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of 0.5 a'Qa - e'a
    converged = False
    it = 0
    pos = y > 0
    while it < max_iter:
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        score = -y * G
        i = int(np.argmax(np.where(up, score, -np.inf)))
        j = int(np.argmin(np.where(low, score, np.inf)))
        if score[i] - score[j] < tol:
            converged = True
            break
        it += 1
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(diag[i] + diag[j] + 2 * Q[i, j], TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = max(diag[i] + diag[j] - 2 * Q[i, j], TAU)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        G += Q[:, i] * (alpha[i] - ai) + Q[:, j] * (alpha[j] - aj)

    # rho from free vectors, else midpoint of the feasible interval
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        ub = yG[low].min() if low.any() else np.inf
        lb = yG[up].max() if up.any() else -np.inf
        ub = lb if not np.isfinite(ub) else ub
        lb = ub if not np.isfinite(lb) else lb
        rho = float(0.5 * (ub + lb))
    sv = alpha > 0
    return RbfSvm(
        support_vectors=X[sv].copy(),
        dual_coef=(alpha * y)[sv],
        intercept=-rho,
        gamma=gamma,
        C=float(C),
        alpha=alpha,
        y=y,
        converged=converged,
        n_iter=it,
    )


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class SvmStackModel:
    bases: list[RbfSvm]
    meta_w: np.ndarray
    meta_b: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    hyper: dict = field(default_factory=dict)

    def base_decisions(self, X) -> np.ndarray:
        Xs = (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.x_mean) / self.x_scale
        return np.column_stack([b.decision_function(Xs) for b in self.bases])

    def predict_proba(self, X) -> np.ndarray:
        u = _sigmoid(self.base_decisions(X)) - 0.5
        return _sigmoid(u @ self.meta_w + self.meta_b)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(int)


def _bootstrap(rng, idx: np.ndarray, y: np.ndarray, retries: int = 100) -> np.ndarray:
    for _ in range(retries):
        pick = idx[rng.integers(0, idx.size, idx.size)]
        if np.unique(y[pick]).size == 2:
            return pick
    raise ValueError(f"could not draw a two-class bootstrap replica in {retries} tries")


def _meta_init(n_base: int) -> tuple[np.ndarray, float]:
    # soft vote: a unanimous confident ensemble maps to sigmoid(4)
    return np.full(n_base, 8.0 / n_base), 0.0


def svm_stack_train(X, y, n_base: int = 5, C: float = 1.0, gamma: float | None = None,
                    meta_lr: float = 1e-4, meta_epochs: int = 1000, inner_folds: int = 4,
                    seed: int = 0) -> SvmStackModel:
    """Bootstrap-bagged RBF SVMs under a logistic-regression meta-estimator.

    The meta-estimator sees out-of-fold base decision values (passed through a
    sigmoid and centered), starts from an equal-weight soft vote and is refined
    by full-batch gradient descent at ``meta_lr``.  Labels are 0/1.
    """
    if n_base < 1:
        raise ValueError("n_base must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(int).ravel()
    if set(np.unique(y)) != {0, 1}:
        raise ValueError("svm_stack_train needs both labels 0 and 1")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = (X - mean) / scale
    ys = np.where(y == 1, 1.0, -1.0)
    gamma = default_gamma(Xs) if gamma is None else float(gamma)
    n = len(y)

    k = min(inner_folds, int(np.bincount(y).min()))
    oof = np.zeros((n, n_base))
    if k >= 2:
        for f, held in enumerate(kfold_split(y, k, seed=seed)):
            train = np.setdiff1d(np.arange(n), held)
            for b in range(n_base):
                pick = _bootstrap(generator(seed, "oof", f, b), train, y)
                oof[held, b] = svm_train(Xs[pick], ys[pick], C, gamma).decision_function(Xs[held])
    bases = []
    for b in range(n_base):
        pick = _bootstrap(generator(seed, "base", b), np.arange(n), y)
        bases.append(svm_train(Xs[pick], ys[pick], C, gamma))
    if k < 2:
        oof = np.column_stack([m.decision_function(Xs) for m in bases])

    w, b0 = _meta_init(n_base)
    u = _sigmoid(oof) - 0.5
    for _ in range(meta_epochs):
        err = _sigmoid(u @ w + b0) - y
        w = w - meta_lr * (u.T @ err) / n
        b0 = b0 - meta_lr * err.mean()
    return SvmStackModel(
        bases=bases,
        meta_w=w,
        meta_b=float(b0),
        x_mean=mean,
        x_scale=scale,
        hyper={"n_base": n_base, "C": C, "gamma": gamma, "meta_lr": meta_lr,
               "meta_epochs": meta_epochs, "inner_folds": inner_folds, "seed": seed},
    )
