"""Synthetic echo-like videos of a beating ventricle with exact cavity masks.

The cavity is an ellipse (apex at the top of the frame, base at the bottom)
whose boundary moves radially in the ellipse's own normalized coordinates.
Label 1 ("TTS-like") contracts at the base only, the apical half barely
moves.  Label 0 ("STEMI-like") contracts globally except for a frozen septal
sector on the left wall.  Frames are rendered as dark blood pool, bright
textured wall and mid-gray tissue, blurred, then degraded by multiplicative
speckle.  Optional static bright bands mimic rib shadows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .rng import derive_seed, generator

TTS_LIKE = 1
STEMI_LIKE = 0

# sector (radians, ellipse frame, y pointing down) that stays frozen in label-0 cases
SEPTAL_CENTER = math.pi - 0.35
SEPTAL_CORE = 0.3
SEPTAL_RAMP = 0.3


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomConfig:
    frames: int = 16
    height: int = 64
    width: int = 64
    class_a_fraction: float = 140 / 300
    speckle: float = 0.2
    artifact_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.frames < 4:
            raise PhantomError(f"need at least 4 frames, got {self.frames}")
        if self.height < 16 or self.width < 16:
            raise PhantomError(f"frame must be at least 16x16, got {self.height}x{self.width}")
        for name in ("class_a_fraction", "artifact_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise PhantomError(f"{name} must be in [0, 1], got {v}")
        if self.speckle < 0:
            raise PhantomError(f"speckle strength must be >= 0, got {self.speckle}")
        if self.seed < 0:
            raise PhantomError("seed must be nonnegative")


@dataclass
class LabeledEcho:
    video: np.ndarray  # (T, H, W) in [0, 1]
    mask: np.ndarray  # (T, H, W) in {0, 1}
    label: int
    case_id: str
    seed: int = 0
    geometry: dict = field(default_factory=dict, repr=False)


def add_speckle(video: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Multiplicative speckle ``clip(v * (1 + sigma * g), 0, 1)`` with g ~ N(0, 1)."""
    if sigma < 0:
        raise ValueError(f"speckle sigma must be >= 0, got {sigma}")
    video = np.asarray(video, dtype=np.float64)
    if sigma == 0:
        return video.copy()
    g = generator(seed, "speckle").standard_normal(video.shape)
    return np.clip(video * (1.0 + sigma * g), 0.0, 1.0)


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _contraction(theta: np.ndarray, label: int, p: dict) -> np.ndarray:
    """Fractional radial shortening at end-systole as a function of angle."""
    if label == TTS_LIKE:
        basal = _smoothstep(np.sin(theta) / 0.35)
        return p["c_apex"] + (p["c_base"] - p["c_apex"]) * basal
    d = np.abs(np.angle(np.exp(1j * (theta - SEPTAL_CENTER))))
    frozen = 1.0 - _smoothstep((d - SEPTAL_CORE) / SEPTAL_RAMP)
    return p["c_global"] * (1.0 - frozen)


def _draw_geometry(cfg: PhantomConfig, label: int, rng: np.random.Generator) -> dict:
    H, W = cfg.height, cfg.width
    p = {
        "cy": H * 0.5 + rng.uniform(-1.5, 1.5) * H / 64,
        "cx": W * 0.5 + rng.uniform(-1.5, 1.5) * W / 64,
        "a": H * rng.uniform(0.27, 0.32),
        "b": W * rng.uniform(0.15, 0.19),
        "phase": rng.uniform(0.0, 0.1),
        "wall": rng.uniform(3.5, 5.0) * min(H, W) / 64,
        "harm_amp": rng.uniform(0.0, 0.03, size=3),
        "harm_phase": rng.uniform(0, 2 * np.pi, size=3),
        "tex_k": int(rng.integers(3, 8)),
        "tex_phase": rng.uniform(0, 2 * np.pi),
        "tissue": rng.uniform(0.22, 0.32),
        "blood": rng.uniform(0.03, 0.08),
        "wall_level": rng.uniform(0.7, 0.85),
    }
    if label == TTS_LIKE:
        p["c_apex"] = rng.uniform(0.0, 0.03)
        p["c_base"] = rng.uniform(0.28, 0.4)
    else:
        p["c_global"] = rng.uniform(0.22, 0.34)
    return p


def _systole(t: np.ndarray, frames: int, phase: float) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2 * np.pi * (t / frames + phase)))


def generate_case(config: PhantomConfig, case_seed: int, label: int, case_id: str | None = None) -> LabeledEcho:
    """Render one labeled video; a pure function of (config, case_seed, label)."""
    if label not in (TTS_LIKE, STEMI_LIKE):
        raise PhantomError(f"label must be 0 or 1, got {label}")
    T, H, W = config.frames, config.height, config.width
    geo = _draw_geometry(config, label, generator(case_seed, "geometry"))

    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    u = (xx - geo["cx"]) / geo["b"]
    v = (yy - geo["cy"]) / geo["a"]
    rho = np.hypot(u, v)
    theta = np.arctan2(v, u)
    rest = 1.0 + sum(
        amp * np.cos((k + 2) * theta + ph)
        for k, (amp, ph) in enumerate(zip(geo["harm_amp"], geo["harm_phase"]))
    )
    contraction = _contraction(theta, label, geo)
    texture = 1.0 + 0.15 * np.cos(geo["tex_k"] * theta + geo["tex_phase"])
    wall_norm = geo["wall"] / (0.5 * (geo["a"] + geo["b"]))

    s = _systole(np.arange(T, dtype=np.float64), T, geo["phase"])
    video = np.empty((T, H, W))
    mask = np.empty((T, H, W), dtype=np.float64)
    for t in range(T):
        radius = rest * (1.0 - contraction * s[t])
        cavity = rho <= radius
        thick = wall_norm * (1.0 + 0.8 * contraction * s[t])
        wall = (rho > radius) & (rho <= radius + thick)
        frame = np.full((H, W), geo["tissue"])
        frame[wall] = geo["wall_level"] * texture[wall]
        frame[cavity] = geo["blood"]
        video[t] = frame
        mask[t] = cavity

    video = ndimage.gaussian_filter(video, sigma=(0.0, 0.8, 0.8))
    art_rng = generator(case_seed, "artifact")
    if art_rng.random() < config.artifact_prob:
        angle = art_rng.uniform(-np.pi / 6, np.pi / 6)
        offset = art_rng.uniform(0.15, 0.85) * H
        width = art_rng.uniform(2.0, 4.0) * H / 64
        dist = (yy - offset) * np.cos(angle) - (xx - W / 2) * np.sin(angle)
        band = np.exp(-0.5 * (dist / width) ** 2)
        video = video + art_rng.uniform(0.35, 0.55) * band[None]
        geo["artifact"] = True
    video = add_speckle(np.clip(video, 0.0, 1.0), config.speckle, derive_seed(case_seed, "noise"))

    area = mask.reshape(T, -1).mean(axis=1)
    if area.min() < 0.02 or area.max() > 0.60:
        raise PhantomError(
            f"cavity covers {area.min():.3f}..{area.max():.3f} of the frame; allowed 0.02..0.60"
        )
    return LabeledEcho(
        video=video,
        mask=mask,
        label=int(label),
        case_id=case_id or f"seed{case_seed}",
        seed=int(case_seed),
        geometry=geo,
    )


def case_seed(master_seed: int, index: int) -> int:
    """Seed of case ``index``: ``derive_seed(master_seed, "case", index)``."""
    return derive_seed(master_seed, "case", index)


def dataset_labels(config: PhantomConfig, n: int) -> np.ndarray:
    """Label vector with round(n * class_a_fraction) ones, in a seeded order."""
    n_pos = int(math.floor(n * config.class_a_fraction + 0.5))
    labels = np.zeros(n, dtype=int)
    labels[:n_pos] = TTS_LIKE
    return generator(config.seed, "labels").permutation(labels)


def generate_dataset(config: PhantomConfig, n: int = 80) -> list[LabeledEcho]:
    if n < 8:
        raise PhantomError(f"dataset needs at least 8 cases, got {n}")
    labels = dataset_labels(config, n)
    return [
        generate_case(config, case_seed(config.seed, i), int(labels[i]), case_id=f"case{i:04d}")
        for i in range(n)
    ]
