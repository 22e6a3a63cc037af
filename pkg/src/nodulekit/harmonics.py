"""Real spherical-harmonic analysis of parameterized surfaces.

Convention: real orthonormal basis without the Condon-Shortley phase,
canonical ordering l ascending, m from -l to +l (index l*l + l + m).
The theta part is evaluated with the fully normalized three-term recurrence,
stable well past degree 50.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, UnderdeterminedError
from .mesh import TriMesh
from .spheremap import SphericalParam, vertex_dual_areas

CHANNELS = ("x", "y", "z")


def sh_index(l: int, m: int) -> int:
    """Position of (l, m) in the canonical coefficient ordering."""
    return l * l + l + m


@dataclass
class ShCoeffs:
    """Real SH coefficients of the three coordinate channels."""

    l_max: int
    coeffs: np.ndarray  # (3, (l_max + 1)**2)

    def __post_init__(self) -> None:
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        expected = (self.l_max + 1) ** 2
        if self.coeffs.shape != (3, expected):
            raise ValueError(
                f"coeffs shape {self.coeffs.shape} != (3, {expected}) for l_max={self.l_max}")
        if not np.isfinite(self.coeffs).all():
            raise ValueError("coefficients must be finite")

    @property
    def per_channel_count(self) -> int:
        return (self.l_max + 1) ** 2


@dataclass
class ShapeDescriptor:
    mode: str  # "raw_coeffs" or "degree_energy"
    values: np.ndarray


def _normalized_legendre(l_max: int, cos_theta: np.ndarray, sin_theta: np.ndarray
                         ) -> np.ndarray:
    """Fully normalized associated Legendre table Q[l, m] at each sample.

    Q is the theta part of the orthonormal real SH: for m = 0 it *is* Y_l^0;
    for m > 0 it gets multiplied by sqrt(2) cos/sin(m phi).
    Shape (l_max+1, l_max+1, n); entries with m > l stay zero.
    """
    n = len(cos_theta)
    q = np.zeros((l_max + 1, l_max + 1, n))
    q[0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, l_max + 1):
        q[m, m] = q[m - 1, m - 1] * sin_theta * np.sqrt((2.0 * m + 1.0) / (2.0 * m))
    for m in range(l_max):
        q[m + 1, m] = np.sqrt(2.0 * m + 3.0) * cos_theta * q[m, m]
    for m in range(l_max + 1):
        for l in range(m + 2, l_max + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            q[l, m] = a * (cos_theta * q[l - 1, m] - b * q[l - 2, m])
    return q


def basis_matrix(l_max: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Design matrix of all (l, m) basis values at the samples: (n, (l_max+1)^2)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    q = _normalized_legendre(l_max, np.cos(theta), np.sin(theta))
    n = len(theta)
    out = np.zeros((n, (l_max + 1) ** 2))
    sqrt2 = np.sqrt(2.0)
    for l in range(l_max + 1):
        out[:, sh_index(l, 0)] = q[l, 0]
        for m in range(1, l + 1):
            out[:, sh_index(l, m)] = sqrt2 * q[l, m] * np.cos(m * phi)
            out[:, sh_index(l, -m)] = sqrt2 * q[l, m] * np.sin(m * phi)
    return out


def real_sh_basis(l: int, m: int, theta, phi):
    """Orthonormal real spherical harmonic Y_l^m (no Condon-Shortley phase)."""
    if l < 0:
        raise ValueError(f"degree must be >= 0, got {l}")
    if abs(m) > l:
        raise ValueError(f"|m| must be <= l, got l={l} m={m}")
    theta_arr = np.atleast_1d(np.asarray(theta, dtype=float))
    phi_arr = np.atleast_1d(np.asarray(phi, dtype=float))
    col = basis_matrix(l, theta_arr, phi_arr)[:, sh_index(l, m)]
    if np.isscalar(theta) or np.asarray(theta).ndim == 0:
        return float(col[0])
    return col


def fit_values(values: np.ndarray, theta: np.ndarray, phi: np.ndarray,
               weights: np.ndarray | None, l_max: int,
               damping: float = 1e-9) -> np.ndarray:
    """Weighted damped least-squares SH fit of per-sample values.

    ``values`` is (n,) or (n, c); returns (c, (l_max+1)^2).
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    b = basis_matrix(l_max, theta, phi)
    if weights is None:
        weights = np.ones(len(b))
    w = np.asarray(weights, dtype=float)
    bw = b * w[:, None]
    gram = b.T @ bw
    gram[np.diag_indices_from(gram)] += damping
    rhs = bw.T @ values
    return np.linalg.solve(gram, rhs).T


def fit_coefficients(m: TriMesh, p: SphericalParam, l_max: int) -> ShCoeffs:
    """Fit the mesh coordinate functions against the basis at the mapped
    directions, weighted by the samples' dual cell areas on the sphere."""
    if len(p.positions) != m.n_vertices:
        raise ValueError("param does not match mesh")
    needed = 2 * (l_max + 1) ** 2
    if m.n_vertices < needed:
        raise UnderdeterminedError(
            f"need at least {needed} vertices for l_max={l_max}, have {m.n_vertices}")
    theta, phi = p.theta_phi()
    weights = vertex_dual_areas(p.positions, m.triangles)
    coeffs = fit_values(m.vertices, theta, phi, weights, l_max)
    return ShCoeffs(l_max=l_max, coeffs=coeffs)


def reconstruct(c: ShCoeffs, p: SphericalParam, mesh: TriMesh | None = None
                ) -> tuple[np.ndarray, float | None]:
    """Synthesize surface points at the param directions; RMS error vs mesh."""
    theta, phi = p.theta_phi()
    b = basis_matrix(c.l_max, theta, phi)
    points = b @ c.coeffs.T
    rms = None
    if mesh is not None:
        if mesh.n_vertices != len(points):
            raise ValueError("mesh does not match param")
        rms = float(np.sqrt(np.mean(np.sum((points - mesh.vertices) ** 2, axis=1))))
    return points, rms


def truncate(c: ShCoeffs, n_per_channel: int) -> np.ndarray:
    """First n coefficients per channel, concatenated x, y, z."""
    if not 1 <= n_per_channel <= c.per_channel_count:
        raise ValueError(
            f"n_per_channel must be in [1, {c.per_channel_count}], got {n_per_channel}")
    return np.concatenate([c.coeffs[ch, :n_per_channel] for ch in range(3)])


def raw_descriptor(c: ShCoeffs, n_per_channel: int) -> ShapeDescriptor:
    """Truncated raw coefficients as a descriptor (the default RF input)."""
    return ShapeDescriptor(mode="raw_coeffs", values=truncate(c, n_per_channel))


def degree_energy(c: ShCoeffs) -> ShapeDescriptor:
    """Per-channel, per-degree energy sqrt(sum_m coeff^2); rotation invariant
    per degree when combined across channels."""
    energies = np.empty((3, c.l_max + 1))
    for l in range(c.l_max + 1):
        block = c.coeffs[:, l * l:(l + 1) ** 2]
        energies[:, l] = np.sqrt(np.sum(block ** 2, axis=1))
    return ShapeDescriptor(mode="degree_energy", values=energies.ravel())


def cross_channel_degree_energy(c: ShCoeffs) -> np.ndarray:
    """Total per-degree energy across channels: sqrt(sum_c E_c(l)^2)."""
    e = degree_energy(c).values.reshape(3, c.l_max + 1)
    return np.sqrt(np.sum(e ** 2, axis=0))


def coeff_difference(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Elementwise difference and its Euclidean norm."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return diff, float(np.linalg.norm(diff))


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def write_coeffs_csv(path: str | Path, coeffs_by_id: dict[str, ShCoeffs]) -> None:
    """Rows ``id,channel,l,m,value`` in canonical order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for rec_id in coeffs_by_id:
            c = coeffs_by_id[rec_id]
            for ch in range(3):
                for l in range(c.l_max + 1):
                    for m in range(-l, l + 1):
                        writer.writerow([
                            rec_id, CHANNELS[ch], l, m,
                            f"{c.coeffs[ch, sh_index(l, m)]:.9g}"])


def write_descriptors_csv(path: str | Path,
                          descriptors: dict[str, ShapeDescriptor]) -> None:
    """Rows ``id,f0,f1,...`` (one descriptor per record)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for rec_id in descriptors:
            writer.writerow([rec_id] + [f"{v:.9g}" for v in descriptors[rec_id].values])


def read_coeffs_csv(path: str | Path) -> dict[str, ShCoeffs]:
    table: dict[str, dict[tuple[int, int, int], float]] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if len(row) != 5:
                raise FormatError(f"{path}: expected 5 columns, got {len(row)}")
            rec_id, ch, l, m, value = row
            if ch not in CHANNELS:
                raise FormatError(f"{path}: unknown channel {ch!r}")
            try:
                table.setdefault(rec_id, {})[
                    (CHANNELS.index(ch), int(l), int(m))] = float(value)
            except ValueError as exc:
                raise FormatError(f"{path}: bad row {row}: {exc}") from exc
    out: dict[str, ShCoeffs] = {}
    for rec_id, entries in table.items():
        l_max = max(l for (_, l, _) in entries)
        coeffs = np.zeros((3, (l_max + 1) ** 2))
        for (ch, l, m), value in entries.items():
            coeffs[ch, sh_index(l, m)] = value
        out[rec_id] = ShCoeffs(l_max=l_max, coeffs=coeffs)
    return out
