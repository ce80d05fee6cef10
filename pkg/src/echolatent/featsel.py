"""Feature selection on bottleneck activations.

Two independent routes:

* FSR ranks bottleneck kernels by their GradCAM weight (mean gradient of the
  summed foreground probability with respect to each kernel's activation map),
  keeps the top 5 kernels of every training case and returns the 3 kernels that
  occur most often across cases.
* FSL fits an L1-penalized least-squares model on flattened features by cyclic
  coordinate descent and keeps the support of the coefficient vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

from . import ops
from .segnet import SegNetParams, _standardize, check_input, decode, encode
from .tensor import Tensor, backward, parameter

POOLINGS = ("none", "temporal-mean")


@dataclass
class KernelWeights:
    alpha: np.ndarray  # one weight per bottleneck kernel
    class_id: int = 1


@dataclass
class GradCamMap:
    map: np.ndarray  # (T', H', W'), nonnegative
    upsampled: np.ndarray | None = None


@dataclass
class SelectionResult:
    method: str  # "FSR", "FSL" or "NONE"
    indices: tuple[int, ...]  # kernel indices (FSR) or flattened feature indices (FSL, NONE)
    n_features: int  # size of the full flattened feature vector
    reduction_ratio: float
    fold: int | None = None
    alpha: float | None = None
    details: dict = field(default_factory=dict)

    def columns(self, feature_shape: Sequence[int], pooling: str = "temporal-mean") -> np.ndarray:
        """Flattened feature columns covered by this selection."""
        if self.method == "FSR":
            return kernel_columns(self.indices, feature_shape, pooling)
        return np.asarray(self.indices, dtype=int)

    def to_json(self) -> dict:
        out = {
            "method": self.method,
            "indices": [int(i) for i in self.indices],
            "alpha": self.alpha,
            "reduction_ratio": self.reduction_ratio,
            "n_features": self.n_features,
            "fold": self.fold,
        }
        out.update(self.details)
        return out

    @classmethod
    def from_json(cls, d: dict) -> "SelectionResult":
        known = {"method", "indices", "alpha", "reduction_ratio", "n_features", "fold"}
        return cls(
            method=d["method"],
            indices=tuple(int(i) for i in d["indices"]),
            n_features=int(d["n_features"]),
            reduction_ratio=float(d["reduction_ratio"]),
            fold=d.get("fold"),
            alpha=d.get("alpha"),
            details={k: v for k, v in d.items() if k not in known},
        )


# ------------------------------------------------------------------ flattening


def flatten_features(features: np.ndarray, pooling: str = "temporal-mean") -> np.ndarray:
    """Row-major flatten of (C, T', H', W') features.

    With ``pooling="none"`` element (c, t, y, x) lands at
    ``((c*T' + t)*H' + y)*W' + x``; with ``"temporal-mean"`` the time axis is
    averaged first and (c, y, x) lands at ``(c*H' + y)*W' + x``.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 4:
        raise ValueError(f"features must be (C, T, H, W), got {features.shape}")
    if pooling == "none":
        return features.reshape(-1).copy()
    if pooling == "temporal-mean":
        return features.mean(axis=1).reshape(-1)
    raise ValueError(f"pooling must be one of {POOLINGS}, got {pooling!r}")


def flat_size(feature_shape: Sequence[int], pooling: str = "temporal-mean") -> int:
    C, T, H, W = feature_shape
    return C * H * W * (T if pooling == "none" else 1)


def kernel_columns(kernels: Sequence[int], feature_shape: Sequence[int], pooling: str = "temporal-mean") -> np.ndarray:
    per_kernel = flat_size(feature_shape, pooling) // feature_shape[0]
    return np.concatenate([np.arange(k * per_kernel, (k + 1) * per_kernel) for k in kernels]).astype(int)


# ------------------------------------------------------------------ GradCAM (FSR)


def _frozen(params: SegNetParams) -> SegNetParams:
    return SegNetParams(
        params.levels, params.base_channels, params.kernel, {k: Tensor(v.data) for k, v in params.weights.items()}
    )


def class_score(prob: Tensor, class_id: int) -> Tensor:
    """Scalar class output: summed probability of ``class_id`` over all voxels."""
    if class_id == 1:
        return ops.reduce_sum(prob)
    if class_id == 0:
        return ops.reduce_sum(ops.sub(1.0, prob))
    raise ValueError(f"class_id must be 0 or 1, got {class_id}")


def kernel_weights(
    params: SegNetParams,
    video: np.ndarray,
    class_id: int = 1,
    normalizer: str = "spatial",
    objective: Callable[[Tensor], Tensor] | None = None,
) -> KernelWeights:
    """Per-kernel GradCAM weights of the bottleneck for one video.

    ``normalizer="spatial"`` divides the summed gradient by the number of
    positions in a kernel map; ``"kernels"`` divides by the kernel count.
    ``objective`` replaces the default class score (it receives the
    probability tensor).
    """
    for name, w in params.weights.items():
        if not np.all(np.isfinite(w.data)):
            raise ValueError(f"network weight {name} is not finite")
    check_input(params, video)
    net = _frozen(params)
    feats, skips = encode(net, Tensor(_standardize(video)[None, None]))
    leaf = parameter(feats.data)
    prob = ops.sigmoid(decode(net, leaf, skips))
    score = objective(prob) if objective is not None else class_score(prob, class_id)
    (grad,) = backward(score, [leaf])
    grad = grad[0]
    if normalizer == "spatial":
        n = grad[0].size
    elif normalizer == "kernels":
        n = grad.shape[0]
    else:
        raise ValueError(f"normalizer must be 'spatial' or 'kernels', got {normalizer!r}")
    alpha = grad.reshape(grad.shape[0], -1).sum(axis=1) / n
    if not np.all(np.isfinite(alpha)):
        raise ValueError("kernel weights are not finite")
    return KernelWeights(alpha=alpha, class_id=class_id)


def gradcam_map(features: np.ndarray, weights: KernelWeights | np.ndarray, upsample_to=None) -> GradCamMap:
    """relu(sum_l alpha_l * F_l) over the kernel axis."""
    alpha = np.asarray(weights.alpha if isinstance(weights, KernelWeights) else weights, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != alpha.shape[0]:
        raise ValueError(f"{features.shape[0]} feature kernels but {alpha.shape[0]} weights")
    cam = np.maximum(np.tensordot(alpha, features, axes=(0, 0)), 0.0)
    up = None
    if upsample_to is not None:
        factors = [o // s for o, s in zip(upsample_to, cam.shape)]
        if any(f * s != o for f, s, o in zip(factors, cam.shape, upsample_to)):
            raise ValueError(f"cannot upsample {cam.shape} to {tuple(upsample_to)} by integer factors")
        up = cam
        for axis, f in enumerate(factors):
            up = np.repeat(up, f, axis=axis)
    return GradCamMap(cam, up)


def top_kernels(alpha: np.ndarray, k: int = 5) -> np.ndarray:
    """Indices of the ``k`` largest weights; ties go to the lower index."""
    alpha = np.asarray(alpha)
    order = np.lexsort((np.arange(alpha.size), -alpha))
    return order[:k]


def fsr_select(per_case: Sequence[KernelWeights | np.ndarray], top_k: int = 5, n_select: int = 3,
               fold: int | None = None) -> SelectionResult:
    if not per_case:
        raise ValueError("fsr_select needs at least one case")
    alphas = [np.asarray(w.alpha if isinstance(w, KernelWeights) else w) for w in per_case]
    n_kernels = alphas[0].size
    if any(a.size != n_kernels for a in alphas):
        raise ValueError("all kernel weight vectors must have the same length")
    pooled = np.concatenate([top_kernels(a, top_k) for a in alphas])
    counts = np.bincount(pooled, minlength=n_kernels)
    chosen = np.lexsort((np.arange(n_kernels), -counts))[:n_select]
    return SelectionResult(
        method="FSR",
        indices=tuple(int(i) for i in chosen),
        n_features=n_kernels,
        reduction_ratio=1.0 - n_select / n_kernels,
        fold=fold,
        details={"frequencies": {int(i): int(counts[i]) for i in np.flatnonzero(counts)}},
    )


# ------------------------------------------------------------------ LASSO (FSL)


def soft_threshold(z: float, t: float) -> float:
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    return float(np.sign(z) * max(abs(z) - t, 0.0))


@njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def _kkt_residual(X, r, w, alpha):
    n, p = X.shape
    worst = 0.0
    for j in range(p):
        g = 0.0
        for i in range(n):
            g += X[i, j] * r[i]
        g /= n
        if w[j] > 0:
            dev = abs(g - alpha)
        elif w[j] < 0:
            dev = abs(g + alpha)
        else:
            dev = max(abs(g) - alpha, 0.0)
        if dev > worst:
            worst = dev
    return worst


@njit(cache=True)
def _coordinate_descent(X, y, w, alpha, tol, max_iter, history):
    n, p = X.shape
    r = y - X @ w
    col_sq = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        col_sq[j] = s / n
    max_delta = np.inf
    kkt = np.inf
    for it in range(max_iter):
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            rho = 0.0
            for i in range(n):
                rho += X[i, j] * r[i]
            rho = rho / n + col_sq[j] * w[j]
            new = _soft(rho, alpha) / col_sq[j]
            d = new - w[j]
            if d != 0.0:
                for i in range(n):
                    r[i] -= d * X[i, j]
                w[j] = new
                if abs(d) > max_delta:
                    max_delta = abs(d)
        obj = 0.0
        for i in range(n):
            obj += r[i] * r[i]
        history[it] = obj / (2 * n) + alpha * np.abs(w).sum()
        if max_delta < tol:
            kkt = _kkt_residual(X, r, w, alpha)
            if kkt <= tol:
                return it + 1, max_delta, kkt, True
    kkt = _kkt_residual(X, r, w, alpha)
    return max_iter, max_delta, kkt, False


@dataclass
class LassoFit:
    coef: np.ndarray  # in standardized-feature space when standardize=True
    intercept: float
    alpha: float
    n_iter: int
    tol: float
    kkt_residual: float
    converged: bool
    x_mean: np.ndarray
    x_scale: np.ndarray
    objective_history: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coef != 0)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_scale

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.transform(X) @ self.coef + self.intercept


def standardize_columns(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero-mean unit-variance columns; constant columns keep scale 1 (and become zero)."""
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return (X - mean) / scale, mean, scale


def lasso_objective(X: np.ndarray, y: np.ndarray, w: np.ndarray, alpha: float) -> float:
    r = X @ w - y
    return float(r @ r / (2 * X.shape[0]) + alpha * np.abs(w).sum())


@njit(cache=True)
def _max_abs_corr(X, y):
    # same summation order as the first sweep of _coordinate_descent, so a fit
    # at exactly this penalty sees |rho| <= alpha bit-for-bit
    n, p = X.shape
    best = 0.0
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * y[i]
        s = abs(s / n)
        if s > best:
            best = s
    return best


def null_alpha(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty at which the all-zero coefficient vector is optimal: max_j |x_j'y| / n."""
    return float(_max_abs_corr(np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)))


def lasso_fit(X, y, alpha: float, tol: float = 1e-7, max_iter: int = 10_000, standardize: bool = True,
              warm_start: np.ndarray | None = None) -> LassoFit:
    """Minimize (1/2n)||Xw - y||^2 + alpha*||w||_1 by cyclic coordinate descent.

    With ``standardize`` the columns of X are centered and scaled and y is
    centered; the intercept is then mean(y).  Convergence requires both the
    largest coordinate update of a sweep and the KKT residual to drop below
    ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    if n < 2:
        raise ValueError("lasso_fit needs at least 2 samples")
    if y.shape[0] != n:
        raise ValueError(f"X has {n} rows but y has {y.shape[0]} entries")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if standardize:
        Xs, mean, scale = standardize_columns(X)
        intercept = float(y.mean())
        yc = y - intercept
    else:
        Xs, mean, scale, intercept, yc = X, np.zeros(p), np.ones(p), 0.0, y
    w = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=np.float64)
    history = np.empty(max_iter)
    n_iter, delta, kkt, ok = _coordinate_descent(np.asfortranarray(Xs), yc, w, float(alpha), float(tol),
                                                 int(max_iter), history)
    return LassoFit(
        coef=w,
        intercept=intercept,
        alpha=float(alpha),
        n_iter=int(n_iter),
        tol=float(tol),
        kkt_residual=float(kkt),
        converged=bool(ok),
        x_mean=mean,
        x_scale=scale,
        objective_history=history[:n_iter].copy(),
    )


def default_alpha_grid(X, y, n_alphas: int = 20, ratio: float = 1e-2) -> np.ndarray:
    """Geometric grid from the null penalty down to ``ratio`` times it (decreasing)."""
    Xs, _, _ = standardize_columns(X)
    a_max = null_alpha(Xs, np.asarray(y, dtype=np.float64) - np.mean(y))
    return a_max * np.geomspace(1.0, ratio, n_alphas)


def fsl_select(X, y, target_keep_fraction: float = 0.10, alpha_grid=None, tol: float = 1e-7,
               max_iter: int = 10_000, fold: int | None = None) -> SelectionResult:
    """Fit the LASSO along ``alpha_grid``; keep the support whose size is closest to the target fraction."""
    if not 0.0 < target_keep_fraction < 1.0:
        raise ValueError("target_keep_fraction must be in (0, 1)")
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    grid = default_alpha_grid(X, y) if alpha_grid is None else np.asarray(alpha_grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("alpha grid is empty")
    fits: dict[int, LassoFit] = {}
    warm = None
    # largest penalty first so each fit can warm-start from the sparser one
    for i in np.argsort(-grid, kind="stable"):
        fit = lasso_fit(X, y, float(grid[i]), tol=tol, max_iter=max_iter, warm_start=warm)
        fits[int(i)] = fit
        warm = fit.coef
    sizes = np.array([fits[i].support.size for i in range(grid.size)])
    if sizes.max() == 0:
        raise ValueError(
            f"every alpha in [{grid.min():.4g}, {grid.max():.4g}] gives an empty support"
        )
    target = target_keep_fraction * p
    gap = np.abs(sizes - target)
    candidates = np.flatnonzero(gap == gap.min())
    best = int(candidates[np.argmax(grid[candidates])])
    fit = fits[best]
    support = fit.support
    return SelectionResult(
        method="FSL",
        indices=tuple(int(i) for i in support),
        n_features=p,
        reduction_ratio=1.0 - support.size / p,
        fold=fold,
        alpha=float(grid[best]),
        details={
            "support_sizes": [int(s) for s in sizes],
            "alpha_grid": [float(a) for a in grid],
            "converged": bool(fit.converged),
        },
    )


def no_selection(n_features: int, fold: int | None = None) -> SelectionResult:
    return SelectionResult("NONE", tuple(range(n_features)), n_features, 0.0, fold=fold)


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM, min-max scaled (a constant image maps to 0)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got {img.shape}")
    lo, hi = img.min(), img.max()
    scaled = np.zeros(img.shape) if hi == lo else (img - lo) / (hi - lo)
    data = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
