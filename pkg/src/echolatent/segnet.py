"""U-Net-shaped encoder/decoder for binary video segmentation.

Layout for ``levels = L`` and ``base = c``: L-1 encoder levels, each two
3x3x3 conv+ReLU blocks followed by 2x2x2 max pooling (time included), then a
bottleneck of two conv+ReLU blocks with ``c * 2**(L-1) == 32`` channels.  The
decoder mirrors the pooled levels with stride-2 transposed convolutions,
channel concatenation of the skip tensor and two conv+ReLU blocks; a 1x1x1
conv and sigmoid produce the foreground probability.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ltsr, ops
from .optim import Adam, lr_schedule
from .rng import derive_seed, generator
from .tensor import Tensor, backward, parameter

log = logging.getLogger(__name__)

BOTTLENECK_CHANNELS = 32


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"segmentation loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch


@dataclass
class SegNetParams:
    levels: int
    base_channels: int
    kernel: int
    weights: dict[str, Tensor]

    @property
    def stride(self) -> int:
        return 2 ** (self.levels - 1)

    @property
    def bottleneck_channels(self) -> int:
        return self.weights["bottleneck.conv2.w"].shape[0]

    def tensors(self) -> list[Tensor]:
        return [self.weights[k] for k in sorted(self.weights)]

    def copy(self) -> "SegNetParams":
        return SegNetParams(
            self.levels,
            self.base_channels,
            self.kernel,
            {k: parameter(v.data.copy()) for k, v in self.weights.items()},
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.weights.items()}


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 4
    lr0: float = 1e-3
    decay: float = 0.05
    augment: float = 0.1
    dice_weight: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.augment < 0:
            raise ValueError("augmentation amplitude must be >= 0")
        if not 0.0 <= self.dice_weight <= 1.0:
            raise ValueError("dice_weight must be in [0, 1]")


@dataclass
class TrainResult:
    params: SegNetParams
    loss_history: list[float] = field(default_factory=list)


def _init_conv(rng, c_out, c_in, k) -> Tensor:
    fan_in = c_in * k**3
    bound = math.sqrt(6.0 / fan_in)
    return parameter(rng.uniform(-bound, bound, size=(c_out, c_in, k, k, k)))


def build(levels: int = 3, base_channels: int = 8, kernel: int = 3, seed: int = 0) -> SegNetParams:
    """Initialize a network whose bottleneck has exactly 32 channels."""
    if levels < 1 or base_channels < 1:
        raise ValueError("levels and base_channels must be positive")
    if base_channels * 2 ** (levels - 1) != BOTTLENECK_CHANNELS:
        raise ValueError(
            f"base_channels * 2**(levels-1) = {base_channels * 2 ** (levels - 1)}, "
            f"bottleneck must have {BOTTLENECK_CHANNELS} channels"
        )
    if kernel % 2 != 1:
        raise ValueError("kernel size must be odd")
    rng = generator(seed, "segnet-init")
    w: dict[str, Tensor] = {}
    c_in = 1
    for lvl in range(levels - 1):
        c = base_channels * 2**lvl
        w[f"enc{lvl}.conv1.w"] = _init_conv(rng, c, c_in, kernel)
        w[f"enc{lvl}.conv1.b"] = parameter(np.zeros(c))
        w[f"enc{lvl}.conv2.w"] = _init_conv(rng, c, c, kernel)
        w[f"enc{lvl}.conv2.b"] = parameter(np.zeros(c))
        c_in = c
    w["bottleneck.conv1.w"] = _init_conv(rng, BOTTLENECK_CHANNELS, c_in, kernel)
    w["bottleneck.conv1.b"] = parameter(np.zeros(BOTTLENECK_CHANNELS))
    w["bottleneck.conv2.w"] = _init_conv(rng, BOTTLENECK_CHANNELS, BOTTLENECK_CHANNELS, kernel)
    w["bottleneck.conv2.b"] = parameter(np.zeros(BOTTLENECK_CHANNELS))
    c_up = BOTTLENECK_CHANNELS
    for lvl in reversed(range(levels - 1)):
        c = base_channels * 2**lvl
        bound = math.sqrt(6.0 / (c_up * 8))
        w[f"dec{lvl}.up.w"] = parameter(rng.uniform(-bound, bound, size=(c_up, c, 2, 2, 2)))
        w[f"dec{lvl}.up.b"] = parameter(np.zeros(c))
        w[f"dec{lvl}.conv1.w"] = _init_conv(rng, c, 2 * c, kernel)
        w[f"dec{lvl}.conv1.b"] = parameter(np.zeros(c))
        w[f"dec{lvl}.conv2.w"] = _init_conv(rng, c, c, kernel)
        w[f"dec{lvl}.conv2.b"] = parameter(np.zeros(c))
        c_up = c
    w["head.w"] = _init_conv(rng, 1, c_up, 1)
    w["head.b"] = parameter(np.zeros(1))
    return SegNetParams(levels, base_channels, kernel, w)


def _block(x: Tensor, w: dict, name: str, pad: int) -> Tensor:
    return ops.relu(ops.conv3d(x, w[name + ".w"], w[name + ".b"], padding=pad))


def encode(params: SegNetParams, x: Tensor) -> tuple[Tensor, list[Tensor]]:
    """Encoder pass; returns the bottleneck activation and the skip tensors."""
    w, pad = params.weights, params.kernel // 2
    skips = []
    h = x
    for lvl in range(params.levels - 1):
        h = _block(h, w, f"enc{lvl}.conv1", pad)
        h = _block(h, w, f"enc{lvl}.conv2", pad)
        skips.append(h)
        h = ops.maxpool3d(h, 2)
    h = _block(h, w, "bottleneck.conv1", pad)
    h = _block(h, w, "bottleneck.conv2", pad)
    return h, skips


def decode(params: SegNetParams, bottleneck: Tensor, skips: list[Tensor]) -> Tensor:
    """Decoder pass; returns foreground logits of shape (B, 1, T, H, W)."""
    w, pad = params.weights, params.kernel // 2
    h = bottleneck
    for lvl in reversed(range(params.levels - 1)):
        h = ops.conv_transpose3d(h, w[f"dec{lvl}.up.w"], w[f"dec{lvl}.up.b"], stride=2)
        h = ops.concat([h, skips[lvl]], axis=1)
        h = _block(h, w, f"dec{lvl}.conv1", pad)
        h = _block(h, w, f"dec{lvl}.conv2", pad)
    return ops.conv3d(h, w["head.w"], w["head.b"])


def forward(params: SegNetParams, x: Tensor) -> Tensor:
    bottleneck, skips = encode(params, x)
    return decode(params, bottleneck, skips)


def check_input(params: SegNetParams, video: np.ndarray) -> None:
    video = np.asarray(video)
    if video.ndim != 3:
        raise ValueError(f"video must be (T, H, W), got shape {video.shape}")
    s = params.stride
    if any(d % s for d in video.shape):
        raise ValueError(f"video dims {video.shape} must be divisible by the encoder stride {s}")


def normalize(video: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance copy of one case."""
    video = np.asarray(video, dtype=np.float64)
    sd = video.std()
    if not sd > 0:
        raise ValueError("cannot normalize a constant video (zero variance)")
    out = (video - video.mean()) / sd
    # one refinement pass trims the rounding left by the first
    return (out - out.mean()) / out.std()


def _standardize(video: np.ndarray) -> np.ndarray:
    video = np.asarray(video, dtype=np.float64)
    return normalize(video) if video.std() > 0 else video - video.mean()


def augment(video: np.ndarray, amplitude: float, seed: int) -> np.ndarray:
    """Add i.i.d. uniform(-amplitude, amplitude) noise to every voxel."""
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    video = np.asarray(video, dtype=np.float64)
    if amplitude == 0:
        return video.copy()
    return video + generator(seed, "augment").uniform(-amplitude, amplitude, size=video.shape)


def soft_dice(prob: Tensor, target: np.ndarray, smooth: float = 1.0) -> Tensor:
    inter = ops.reduce_sum(ops.mul(prob, target))
    denom = ops.add(ops.reduce_sum(prob), float(target.sum()) + smooth)
    return ops.div(ops.add(ops.mul(inter, 2.0), smooth), denom)


def segmentation_loss(logits: Tensor, target: np.ndarray, dice_weight: float) -> Tensor:
    prob = ops.sigmoid(logits)
    dice_term = ops.sub(1.0, soft_dice(prob, target))
    bce = ops.bce_with_logits(logits, target)
    return ops.add(ops.mul(dice_term, dice_weight), ops.mul(bce, 1.0 - dice_weight))


def train(videos, masks, params: SegNetParams, cfg: TrainConfig) -> TrainResult:
    """Train a copy of ``params``; returns the trained copy and per-epoch mean loss."""
    videos = [np.asarray(v, dtype=np.float64) for v in videos]
    masks = [np.asarray(m, dtype=np.float64) for m in masks]
    if not videos or len(videos) != len(masks):
        raise ValueError("need the same nonzero number of videos and masks")
    shape = videos[0].shape
    for v, m in zip(videos, masks):
        if v.shape != shape or m.shape != shape:
            raise ValueError(f"all cases must share shape {shape}; got {v.shape} / {m.shape}")
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("masks must be binary")
    check_input(params, videos[0])

    params = params.copy()
    tensors = params.tensors()
    opt = Adam(tensors, lr=cfg.lr0)
    normed = [_standardize(v) for v in videos]
    n = len(videos)
    history = []
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.lr0, cfg.decay) if cfg.lr0 > 0 else 0.0
        order = generator(cfg.seed, "epoch", epoch).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = np.stack(
                [augment(normed[i], cfg.augment, _aug_seed(cfg.seed, epoch, i)) for i in idx]
            )[:, None]
            target = np.stack([masks[i] for i in idx])[:, None]
            loss = segmentation_loss(forward(params, Tensor(batch)), target, cfg.dice_weight)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, value)
            opt.zero_grad()
            backward(loss)
            if lr > 0:
                opt.step(lr)
            total += value * len(idx)
        history.append(total / n)
        log.debug("segnet epoch %d lr %.3g loss %.5f", epoch, lr, history[-1])
    return TrainResult(params, history)


def _aug_seed(seed: int, epoch: int, case: int) -> int:
    return derive_seed(seed, "augment", epoch, case)


def segment(params: SegNetParams, video: np.ndarray) -> np.ndarray:
    """Foreground probability per voxel, shape (T, H, W)."""
    check_input(params, video)
    logits = forward(params, Tensor(_standardize(video)[None, None]))
    return ops.sigmoid(logits).data[0, 0]


def extract_bottleneck(params: SegNetParams, video: np.ndarray) -> np.ndarray:
    """Bottleneck activations (32, T', H', W') for one video."""
    check_input(params, video)
    h, _ = encode(params, Tensor(_standardize(video)[None, None]))
    return h.data[0]


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """2|A n B| / (|A| + |B|), 1.0 when both are empty."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    a = pred.astype(bool)
    b = gt.astype(bool)
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return 2.0 * np.logical_and(a, b).sum() / total




def save_params(params: SegNetParams, out_dir, **info) -> None:
    """Checkpoint: one LTSR file per weight plus ``segnet.json``; ``info`` (seed, epoch) goes in the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = sorted(params.weights)
    for name in names:
        ltsr.save(out / f"{name}.ltsr", params.weights[name].data)
    meta = {"levels": params.levels, "base_channels": params.base_channels, "kernel": params.kernel,
            "weights": names, **info}
    (out / "segnet.json").write_text(json.dumps(meta, indent=2))


def load_params(model_dir) -> SegNetParams:
    d = Path(model_dir)
    meta = json.loads((d / "segnet.json").read_text())
    weights = {name: parameter(ltsr.load(d / f"{name}.ltsr")) for name in meta["weights"]}
    params = SegNetParams(meta["levels"], meta["base_channels"], meta["kernel"], weights)
    if params.bottleneck_channels != BOTTLENECK_CHANNELS:
        raise ValueError(f"{d}: bottleneck has {params.bottleneck_channels} channels")
    return params


__all__ = [
    "SegNetParams",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "augment",
    "build",
    "decode",
    "dice",
    "encode",
    "extract_bottleneck",
    "forward",
    "load_params",
    "lr_schedule",
    "normalize",
    "save_params",
    "segment",
    "train",
]
