"""Synthetic benchmark corpus: star-shaped nodule blobs whose radial
spikiness and internal texture contrast both rise monotonically with the
malignancy rating, with two perturbed segmentations per nodule.

Stands in for a real CT corpus at desk scale; everything is deterministic
per seed, down to the file bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import harmonics as sh
from .evaluate import NoduleRecord, write_labels_csv
from .volume import Volume, write_volume

SPACING = (0.85, 0.85, 1.4)  # mm, anisotropic like thoracic CT
BACKGROUND_HU = -850.0
SPIKE_DEGREES = (4, 5, 6, 7)


def _unit_rms(values: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(values**2))
    return values / max(rms, 1e-12)


def _band_modes(rng: np.random.Generator, degrees) -> list[tuple[int, int, float]]:
    return [(l, int(rng.integers(-l, l + 1)), float(rng.normal())) for l in degrees]


def _field_from_modes(modes, directions: np.ndarray) -> np.ndarray:
    theta = np.arccos(np.clip(directions[:, 2], -1, 1))
    phi = np.arctan2(directions[:, 1], directions[:, 0])
    total = np.zeros(len(directions))
    for l, m, weight in modes:
        total += weight * sh.real_sh_basis(l, m, theta, phi)
    return _unit_rms(total)


def _random_band_field(rng: np.random.Generator, degrees, directions: np.ndarray
                       ) -> np.ndarray:
    """Random fixed combination of SH basis functions, unit RMS over samples."""
    return _field_from_modes(_band_modes(rng, degrees), directions)


def _spike_params(rating: int, rng: np.random.Generator
                  ) -> tuple[float, float, float, float]:
    """Radius, spike amplitude, texture contrast and density for one nodule.

    Every property rises with the rating, with enough per-nodule jitter that
    neither modality alone resolves the rating perfectly; fusing them should.
    """
    # floor keeps the smallest meshes above the vertex count an l_max=20
    # least-squares fit needs
    r0 = max(6.0 + 0.7 * rating + float(rng.normal(scale=1.0)), 5.6)
    amp = max(0.02 + 0.035 * rating + float(rng.normal(scale=0.024)), 0.005)
    contrast = max(15.0 + 22.0 * rating + float(rng.normal(scale=44.0)), 2.0)
    density = -150.0 + 25.0 * rating + float(rng.normal(scale=48.0))
    return r0, amp, contrast, density


def generate_corpus(n_per_class: int, seed: int, out_dir: str | Path
                    ) -> list[NoduleRecord]:
    """Write volumes, two mask segmentations per nodule and the labels CSV.

    Produces 5 * n_per_class nodules (balanced ratings 1..5) and twice as
    many segmentation records.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[NoduleRecord] = []
    n_nodules = 5 * n_per_class
    spacing = np.asarray(SPACING)
    # spiculation is a shared morphology: one corpus-wide spike pattern whose
    # amplitude rides the rating, blended with per-nodule variation
    corpus_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed,))))
    common_spike_modes = [(l, m, abs(w) + 0.3)
                          for l, m, w in _band_modes(corpus_rng, SPIKE_DEGREES)]
    for i in range(n_nodules):
        rating = i % 5 + 1
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, i))))
        r0, amp, contrast, density = _spike_params(rating, rng)

        # sample the radial fields once on the voxel grid directions
        rho_peak = r0 * (1.0 + 0.08 * 3.5 + amp * 3.5)
        half = rho_peak + 2.0
        dims = tuple(int(np.ceil(2 * half / s)) | 1 for s in spacing)  # odd dims
        center_idx = (np.asarray(dims) - 1) / 2.0
        origin = np.array([80.0 * i, 5.0 * (i % 9), 3.0 * (i % 7)])
        axes = [np.arange(d) * s for d, s in zip(dims, spacing)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        center_mm = center_idx * spacing
        rel = np.stack([gx - center_mm[0], gy - center_mm[1], gz - center_mm[2]],
                       axis=-1)
        dist = np.linalg.norm(rel, axis=-1)
        dist_safe = np.maximum(dist, 1e-9)
        dirs = (rel / dist_safe[..., None]).reshape(-1, 3)

        lumps = _random_band_field(rng, (2, 3), dirs)
        spikes = _unit_rms(0.9 * _field_from_modes(common_spike_modes, dirs)
                           + 0.35 * _random_band_field(rng, SPIKE_DEGREES, dirs))
        seg_noise = _random_band_field(rng, (2, 3, 4), dirs)

        rho_a = (r0 * (1.0 + 0.08 * lumps + amp * spikes)).reshape(dims)
        rho_b = (r0 * (1.0 + 0.08 * lumps + amp * spikes
                       + 0.02 * seg_noise)).reshape(dims)

        mask_a = (dist <= rho_a).astype(np.uint8)
        mask_b = (dist <= rho_b).astype(np.uint8)

        # texture rises with rating; background is noisy lung parenchyma
        u1 = rng.normal(size=3)
        u1 /= np.linalg.norm(u1)
        u2 = rng.normal(size=3)
        u2 /= np.linalg.norm(u2)
        lam1 = float(rng.uniform(2.0, 4.5))
        lam2 = float(rng.uniform(2.0, 4.5))
        pattern = (np.sin(2 * np.pi * (rel @ u1) / lam1)
                   * np.cos(2 * np.pi * (rel @ u2) / lam2))
        hu = BACKGROUND_HU + rng.normal(scale=40.0, size=dims)
        inside = dist <= rho_a
        hu[inside] = (density + contrast * pattern[inside]
                      + rng.normal(scale=8.0, size=int(inside.sum())))
        hu = np.clip(hu, -1024, 3071).astype(np.int16)

        vol_path = out_dir / f"vol_n{i:03d}.mhd"
        write_volume(Volume(dims=dims, spacing=SPACING, origin=tuple(origin),
                            data=hu, kind="intensity"), vol_path)
        for tag, mask in (("a", mask_a), ("b", mask_b)):
            mask_path = out_dir / f"mask_n{i:03d}_{tag}.mhd"
            write_volume(Volume(dims=dims, spacing=SPACING, origin=tuple(origin),
                                data=mask, kind="mask"), mask_path)
            com = origin + np.argwhere(mask > 0).mean(axis=0) * spacing
            records.append(NoduleRecord(
                id=f"n{i:03d}_{tag}", mask_path=mask_path.name,
                volume_path=vol_path.name, center=com, rating=rating,
                annotator="r1" if tag == "a" else "r2"))
    write_labels_csv(records, out_dir / "labels.csv")
    return records
