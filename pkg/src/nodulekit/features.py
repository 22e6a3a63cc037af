"""Feature vectors: baseline appearance stats, external-CSV ingestion, fusion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .patches import RgbPatch

HIST_BINS = 32
BASELINE_DIM = 3 * (HIST_BINS + 4)  # histogram + mean/std + gradient mean/std


@dataclass
class FeatureVector:
    id: str
    values: np.ndarray
    source: str  # shape_sh | appearance_external | appearance_baseline | fused

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).ravel()
        if not np.isfinite(self.values).all():
            raise ValueError(f"feature vector {self.id!r} has non-finite values")


def baseline_appearance(rgb: RgbPatch, rec_id: str = "") -> FeatureVector:
    """Per channel: 32-bin normalized histogram, mean, std, and central-difference
    gradient-magnitude mean/std. Self-contained stand-in for deep features."""
    parts = []
    for ch in range(3):
        img = rgb.channels[ch].astype(float)
        hist, _ = np.histogram(img, bins=HIST_BINS, range=(0, 256))
        hist = hist / img.size
        gy, gx = np.gradient(img)
        grad = np.sqrt(gx**2 + gy**2)
        parts.append(np.concatenate([
            hist, [img.mean(), img.std(), grad.mean(), grad.std()]]))
    return FeatureVector(id=rec_id, values=np.concatenate(parts),
                         source="appearance_baseline")


def fuse(shape: FeatureVector, appearance: FeatureVector) -> FeatureVector:
    """Concatenate shape-then-appearance for one record."""
    if shape.id != appearance.id:
        raise ValueError(f"id mismatch: {shape.id!r} vs {appearance.id!r}")
    return FeatureVector(id=shape.id,
                         values=np.concatenate([shape.values, appearance.values]),
                         source="fused")


def load_external_features(path: str | Path) -> dict[str, FeatureVector]:
    """Header-free rows ``id,v0,...,v{D-1}``; one consistent dimension."""
    out: dict[str, FeatureVector] = {}
    dim = None
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < 2:
                raise FormatError(f"{path}:{line_no}: row needs an id and values")
            rec_id = row[0]
            if rec_id in out:
                raise FormatError(f"{path}:{line_no}: duplicate id {rec_id!r}")
            try:
                values = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{line_no}: non-numeric value: {exc}") from exc
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise FormatError(
                    f"{path}:{line_no}: dimension {len(values)} != {dim}")
            out[rec_id] = FeatureVector(id=rec_id, values=values,
                                        source="appearance_external")
    return out


def save_features_csv(features: dict[str, FeatureVector] | list[FeatureVector],
                      path: str | Path) -> None:
    """Write the features-CSV contract (9 significant digits, LF endings)."""
    if isinstance(features, dict):
        features = [features[k] for k in features]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for fv in features:
            writer.writerow([fv.id] + [f"{v:.9g}" for v in fv.values])
