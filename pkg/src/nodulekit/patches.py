"""Tri-planar appearance input: PCA axes from the mask, cubic ROI, orthogonal
intensity patches, HU windowing, 3-channel montage image."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyInputError
from .volume import Volume, trilinear_sample

DEFAULT_HU_WINDOW = (-1000.0, 400.0)
DEFAULT_OUTPUT_PX = 227
ROI_MARGIN = 1.1


@dataclass
class PatchSet:
    planes: np.ndarray       # (3, px, px): x'y', x'z', y'z'
    edge_mm: float
    px: int
    center: np.ndarray       # (3,) mm
    axes: np.ndarray         # 3x3 orthonormal, columns x', y', z'
    pca_fallback: bool = False


@dataclass
class RgbPatch:
    width: int
    height: int
    channels: np.ndarray     # (3, height, width) uint8

    def __post_init__(self) -> None:
        self.channels = np.asarray(self.channels, dtype=np.uint8)
        if self.channels.shape != (3, self.height, self.width):
            raise ValueError("channel dims must match width/height")


def mask_center_of_mass(mask: Volume) -> np.ndarray:
    """Foreground center of mass in physical mm."""
    idx = np.argwhere(mask.data > 0)
    if len(idx) == 0:
        raise EmptyInputError("mask has no foreground voxels")
    return np.asarray(mask.origin) + idx.mean(axis=0) * np.asarray(mask.spacing)


def pca_axes(mask: Volume) -> tuple[np.ndarray, bool]:
    """Principal axes of the foreground voxel cloud (physical coordinates).

    Columns sorted by descending eigenvalue; each column's largest-magnitude
    entry is made positive; right-handed. Returns (axes, used_fallback).
    """
    idx = np.argwhere(mask.data > 0)
    if len(idx) < 4:
        return np.eye(3), True
    pts = idx * np.asarray(mask.spacing) + np.asarray(mask.origin)
    cov = np.cov(pts.T)
    evals, evecs = np.linalg.eigh(cov)
    # stable descending order keeps the original axis order on exact ties
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    axes = evecs[:, order]
    if evals[1] <= 1e-12 * max(evals[0], 1e-300):
        return np.eye(3), True
    for col in range(3):
        pivot = np.argmax(np.abs(axes[:, col]))
        if axes[pivot, col] < 0:
            axes[:, col] = -axes[:, col]
    if np.linalg.det(axes) < 0:
        axes[:, 2] = -axes[:, 2]
    return axes, False


def compute_roi_edge(masks: list[Volume], margin: float = ROI_MARGIN) -> float:
    """Largest physical bounding-box edge over all masks, times the margin."""
    if not masks:
        raise ValueError("need at least one mask")
    best = 0.0
    any_fg = False
    for mask in masks:
        idx = np.argwhere(mask.data > 0)
        if len(idx) == 0:
            continue
        any_fg = True
        extent = (idx.max(axis=0) - idx.min(axis=0)) * np.asarray(mask.spacing)
        best = max(best, float(extent.max()))
    if not any_fg:
        raise ValueError("all masks are empty")
    return best * margin


def extract_triplanar(v: Volume, center: np.ndarray, axes: np.ndarray,
                      edge_mm: float, px: int) -> PatchSet:
    """Sample px-by-px patches on the x'y', x'z', y'z' planes through center.

    Pixel (i, j) of a plane spanned by unit axes (a, b) sits at
    center + u_i * a + u_j * b with u_k = ((k + 0.5) / px - 0.5) * edge.
    """
    if px < 8:
        raise ValueError(f"px must be >= 8, got {px}")
    if edge_mm <= 0:
        raise ValueError(f"edge_mm must be positive, got {edge_mm}")
    center = np.asarray(center, dtype=float)
    axes = np.asarray(axes, dtype=float)
    u = ((np.arange(px) + 0.5) / px - 0.5) * edge_mm
    planes = np.empty((3, px, px))
    pairs = ((0, 1), (0, 2), (1, 2))
    for k, (ai, bi) in enumerate(pairs):
        a, b = axes[:, ai], axes[:, bi]
        pts = (center[None, None, :]
               + u[:, None, None] * a[None, None, :]
               + u[None, :, None] * b[None, None, :])
        planes[k] = trilinear_sample(v, pts.reshape(-1, 3)).reshape(px, px)
    return PatchSet(planes=planes, edge_mm=float(edge_mm), px=px,
                    center=center, axes=axes)


def window_normalize(patch: np.ndarray, hu_lo: float, hu_hi: float) -> np.ndarray:
    """Clamp to [hu_lo, hu_hi], map to 0..255, round half away from zero."""
    if not hu_lo < hu_hi:
        raise ValueError(f"invalid window ({hu_lo}, {hu_hi})")
    clipped = np.clip(np.asarray(patch, dtype=float), hu_lo, hu_hi)
    scaled = (clipped - hu_lo) / (hu_hi - hu_lo) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def _bilinear_resize(img: np.ndarray, out_px: int) -> np.ndarray:
    """Pixel-center aligned bilinear resize of a square 2D array.

    Nested lerps keep constant images exactly constant.
    """
    n = img.shape[0]
    img = img.astype(float)
    if n == out_px:
        return img
    coords = (np.arange(out_px) + 0.5) * n / out_px - 0.5
    coords = np.clip(coords, 0, n - 1)
    i0 = np.minimum(np.floor(coords).astype(int), n - 2)
    f = coords - i0
    rows = img[i0, :] + f[:, None] * (img[i0 + 1, :] - img[i0, :])
    return rows[:, i0] + f[None, :] * (rows[:, i0 + 1] - rows[:, i0])


def montage_rgb(ps: PatchSet, hu_window: tuple[float, float] = DEFAULT_HU_WINDOW,
                out_px: int = DEFAULT_OUTPUT_PX) -> RgbPatch:
    """Window-normalize the three planes and stack them as an RGB image."""
    channels = np.empty((3, out_px, out_px), dtype=np.uint8)
    for k in range(3):
        resized = _bilinear_resize(ps.planes[k].astype(float), out_px)
        channels[k] = window_normalize(resized, *hu_window)
    return RgbPatch(width=out_px, height=out_px, channels=channels)


def write_rgb_png(rgb: RgbPatch, path: str | Path) -> None:
    arr = np.moveaxis(rgb.channels, 0, 2)  # (H, W, 3)
    Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")


def read_rgb_png(path: str | Path) -> RgbPatch:
    with Image.open(Path(path)) as img:
        arr = np.asarray(img.convert("RGB"))
    return RgbPatch(width=arr.shape[1], height=arr.shape[0],
                    channels=np.moveaxis(arr, 2, 0))


def write_sidecar(ps: PatchSet, hu_window: tuple[float, float], path: str | Path) -> None:
    meta = {
        "center_mm": [float(x) for x in ps.center],
        "axes_columns": [[float(ps.axes[r, c]) for r in range(3)] for c in range(3)],
        "edge_mm": ps.edge_mm,
        "px": ps.px,
        "hu_window": [float(hu_window[0]), float(hu_window[1])],
        "pca_fallback": ps.pca_fallback,
    }
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
