"""Dataset directories: ``cases/<id>/video.ltsr``, ``cases/<id>/mask.ltsr`` and ``manifest.csv``."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import ltsr
from .phantom import LabeledEcho

MANIFEST_FIELDS = ("id", "label", "seed", "frames", "height", "width")


def write_dataset(cases: list[LabeledEcho], out_dir) -> Path:
    out = Path(out_dir)
    for c in cases:
        case_dir = out / "cases" / c.case_id
        case_dir.mkdir(parents=True, exist_ok=True)
        ltsr.save(case_dir / "video.ltsr", c.video)
        ltsr.save(case_dir / "mask.ltsr", c.mask)
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for c in cases:
            T, H, W = c.video.shape
            writer.writerow([c.case_id, c.label, c.seed, T, H, W])
    return out


def read_manifest(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.csv"
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(MANIFEST_FIELDS) - set(rows[0]):
        raise ValueError(f"{path}: manifest needs columns {','.join(MANIFEST_FIELDS)}")
    for r in rows:
        for k in ("label", "seed", "frames", "height", "width"):
            r[k] = int(r[k])
        if r["label"] not in (0, 1):
            raise ValueError(f"{path}: case {r['id']} has label {r['label']}, expected 0 or 1")
    return rows


def resample_frames(video: np.ndarray, frames: int) -> np.ndarray:
    """Nearest-frame resampling of a (T, ...) array to ``frames`` frames."""
    T = video.shape[0]
    if T == frames:
        return video
    idx = np.minimum(((np.arange(frames) + 0.5) * T / frames).astype(int), T - 1)
    return video[idx]


def read_dataset(data_dir, frames: int | None = None) -> list[LabeledEcho]:
    """Load every case listed in the manifest, resampling to ``frames`` if given."""
    root = Path(data_dir)
    cases = []
    for row in read_manifest(root):
        case_dir = root / "cases" / row["id"]
        video = ltsr.load(case_dir / "video.ltsr")
        mask = ltsr.load(case_dir / "mask.ltsr")
        if video.shape != mask.shape:
            raise ValueError(f"case {row['id']}: video {video.shape} and mask {mask.shape} differ")
        if video.shape != (row["frames"], row["height"], row["width"]):
            raise ValueError(f"case {row['id']}: shape {video.shape} disagrees with the manifest")
        if frames is not None:
            video, mask = resample_frames(video, frames), resample_frames(mask, frames)
        cases.append(LabeledEcho(video, mask, row["label"], row["id"], row["seed"]))
    return cases
