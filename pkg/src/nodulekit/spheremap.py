"""Conformal parameterization of genus-zero meshes onto the unit sphere.

Tangential-gradient descent of the cotangent-weighted harmonic energy from a
Gauss-map initialization, with Mobius renormalization driving the
area-weighted mass center to the origin (fixing the conformal group's
degrees of freedom up to rotation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, TopologyError
from .mesh import TriMesh, check_genus_zero

_WEIGHT_FLOOR = 1e-8  # keeps the energy positive definite on obtuse MC meshes


@dataclass
class SphericalParam:
    """Per-vertex unit-sphere positions for one mesh."""

    positions: np.ndarray  # (n, 3), unit rows
    source_vertex_count: int = 0

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if self.source_vertex_count == 0:
            self.source_vertex_count = len(self.positions)

    def theta_phi(self) -> tuple[np.ndarray, np.ndarray]:
        """Colatitude and longitude of every position."""
        p = self.positions
        theta = np.arccos(np.clip(p[:, 2], -1.0, 1.0))
        phi = np.arctan2(p[:, 1], p[:, 0])
        return theta, phi


@dataclass
class MapOptions:
    step_size: float = 0.05
    max_iterations: int = 10000
    energy_rel_tol: float = 1e-7
    normalize_every: int = 10

    def __post_init__(self) -> None:
        if not 0 < self.step_size <= 1:
            raise ValueError("step_size must be in (0, 1]")
        if self.energy_rel_tol <= 0:
            raise ValueError("energy_rel_tol must be positive")
        if self.max_iterations < 1 or self.normalize_every < 1:
            raise ValueError("iteration counts must be >= 1")


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def cotangent_laplacian(m: TriMesh) -> sp.csr_matrix:
    """Graph Laplacian L = D - W with half-cotangent edge weights, clamped."""
    v = m.vertices
    t = m.triangles
    n = m.n_vertices
    rows, cols, vals = [], [], []
    for corner in range(3):
        i = t[:, corner]
        j = t[:, (corner + 1) % 3]
        k = t[:, (corner + 2) % 3]
        e1 = v[j] - v[i]
        e2 = v[k] - v[i]
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        cross = np.maximum(cross, 1e-300)
        cot = np.einsum("ij,ij->i", e1, e2) / cross
        rows.append(j)
        cols.append(k)
        vals.append(cot / 2.0)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    w = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    w = (w + w.T).tocsr()
    w.data = np.maximum(w.data, _WEIGHT_FLOOR)
    deg = np.asarray(w.sum(axis=1)).ravel()
    return (sp.diags(deg) - w).tocsr()


def harmonic_energy(m: TriMesh, p: SphericalParam) -> float:
    """Dirichlet energy sum_edges w_uv |p(u) - p(v)|^2 (original-mesh weights)."""
    if len(p.positions) != m.n_vertices:
        raise ValueError(
            f"param has {len(p.positions)} positions for {m.n_vertices} vertices")
    lap = cotangent_laplacian(m)
    return _energy(lap, p.positions)


def _energy(lap: sp.csr_matrix, pos: np.ndarray) -> float:
    # clamped weights make the form positive semidefinite; trim roundoff
    return max(float(np.sum(pos * (lap @ pos))), 0.0)


def gauss_map_init(m: TriMesh) -> SphericalParam:
    """Area-weighted vertex normals, normalized onto the sphere."""
    if not check_genus_zero(m):
        raise TopologyError("conformal mapping requires a closed genus-zero mesh")
    v = m.vertices
    t = m.triangles
    face_normals = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    normals = np.zeros_like(v)
    for corner in range(3):
        np.add.at(normals, t[:, corner], face_normals)
    norms = np.linalg.norm(normals, axis=1)
    bad = norms < 1e-12 * max(norms.max(), 1e-300)
    if bad.any():
        idx = np.flatnonzero(bad).astype(float)
        normals[bad] = np.stack(
            [np.cos(0.7 + idx), np.sin(1.3 + 2.0 * idx), np.cos(2.1 + 3.0 * idx)], axis=1)
    return SphericalParam(_normalize_rows(normals), m.n_vertices)


# ---------------------------------------------------------------------------
# spherical areas and Mobius normalization
# ---------------------------------------------------------------------------

def spherical_triangle_areas(pos: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Unsigned spherical triangle areas (solid angles) for unit positions."""
    a, b, c = pos[tris[:, 0]], pos[tris[:, 1]], pos[tris[:, 2]]
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) \
        + np.einsum("ij,ij->i", a, c)
    return np.abs(2.0 * np.arctan2(num, den))


def vertex_dual_areas(pos: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Barycentric-dual cell area per vertex on the sphere (1/3 rule)."""
    areas = spherical_triangle_areas(pos, tris)
    out = np.zeros(len(pos))
    for corner in range(3):
        np.add.at(out, tris[:, corner], areas / 3.0)
    return out


def triangle_areas(vertices: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Euclidean triangle areas."""
    a, b, c = vertices[tris[:, 0]], vertices[tris[:, 1]], vertices[tris[:, 2]]
    return np.linalg.norm(np.cross(b - a, c - a), axis=1) / 2.0


def area_mass_center(pos: np.ndarray, tris: np.ndarray,
                     weights: np.ndarray | None = None) -> np.ndarray:
    """Mass center of the spherical image, weighted per triangle.

    ``weights`` are the domain (original mesh) triangle areas: where the
    surface's area lands on the sphere. A map that crowds the surface into
    one hemisphere has a large mass center; the Mobius family can always
    drive it to zero, fixing the non-rotational conformal freedom. Without
    weights the triangles count equally (same gauge, cruder measure).
    """
    if weights is None:
        weights = np.ones(len(tris))
    mid = (pos[tris[:, 0]] + pos[tris[:, 1]] + pos[tris[:, 2]]) / 3.0
    norms = np.linalg.norm(mid, axis=1)
    good = norms > 1e-12
    centroids = np.zeros_like(mid)
    centroids[good] = mid[good] / norms[good, None]
    total = weights.sum()
    if total <= 0:
        return np.zeros(3)
    return (weights[:, None] * centroids).sum(axis=0) / total


def _mobius_shift(pos: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Sphere Mobius transform phi_a; pushes mass from +a toward -a (|a| < 1)."""
    diff = pos - a
    d2 = np.einsum("ij,ij->i", diff, diff)
    out = (1.0 - float(a @ a)) * diff / d2[:, None] - a
    return _normalize_rows(out)


def _mobius_positions(pos: np.ndarray, tris: np.ndarray, weights: np.ndarray,
                      target: float, max_iterations: int,
                      bisections: int = 40) -> np.ndarray:
    best = pos
    best_norm = float(np.linalg.norm(area_mass_center(pos, tris, weights)))
    for _ in range(max_iterations):
        c = area_mass_center(pos, tris, weights)
        cn = float(np.linalg.norm(c))
        if cn < best_norm:
            best, best_norm = pos, cn
        if cn <= target:
            break
        d = c / cn

        def overshoot(s: float) -> float:
            moved = _mobius_shift(pos, s * d)
            return float(area_mass_center(moved, tris, weights) @ d)

        # bracket the zero of the along-direction component, then bisect
        hi = min(0.9, max(cn, 1e-3))
        for _ in range(12):
            if overshoot(hi) <= 0 or hi >= 0.999:
                break
            hi = hi + (1.0 - hi) * 0.5
        lo = 0.0
        for _ in range(bisections):
            mid = (lo + hi) / 2.0
            if overshoot(mid) > 0:
                lo = mid
            else:
                hi = mid
        pos = _mobius_shift(pos, ((lo + hi) / 2.0) * d)
    c = area_mass_center(pos, tris, weights)
    if float(np.linalg.norm(c)) < best_norm:
        best = pos
    return best


def mobius_normalize(p: SphericalParam, m: TriMesh, target: float = 1e-6,
                     max_iterations: int = 100) -> SphericalParam:
    """Drive the area-weighted mass center to the origin with sphere inversions."""
    weights = triangle_areas(m.vertices, m.triangles)
    pos = _mobius_positions(_normalize_rows(p.positions), m.triangles, weights,
                            target, max_iterations)
    return SphericalParam(pos, p.source_vertex_count)


# ---------------------------------------------------------------------------
# conformal flow
# ---------------------------------------------------------------------------

def conformal_map_traced(m: TriMesh, opts: MapOptions | None = None
                         ) -> tuple[SphericalParam, np.ndarray]:
    """Harmonic-energy minimizing sphere map plus its (iteration, energy,
    mass_center_norm) trace. The recorded energies are non-increasing: a step
    is accepted only if it beats the last recorded energy, with step halving
    (20 tries) before an iteration counts as failed."""
    opts = opts or MapOptions()
    lap = cotangent_laplacian(m)
    tris = m.triangles
    dom_areas = triangle_areas(m.vertices, tris)
    p = gauss_map_init(m).positions
    energy = _energy(lap, p)
    trace = [(0, energy, float(np.linalg.norm(area_mass_center(p, tris, dom_areas))))]
    step = opts.step_size
    consecutive_fails = 0
    accepted = 0

    for it in range(1, opts.max_iterations + 1):
        grad = -(lap @ p)
        grad_t = grad - np.einsum("ij,ij->i", grad, p)[:, None] * p
        bar = trace[-1][1]
        s = step
        cand = None
        cand_energy = None
        best_try = np.inf
        for _ in range(21):
            trial = _normalize_rows(p + s * grad_t)
            e = _energy(lap, trial)
            if e <= bar:
                cand, cand_energy = trial, e
                break
            best_try = min(best_try, e)
            s /= 2.0
        if cand is None:
            if best_try - bar <= opts.energy_rel_tol * max(bar, 1e-300):
                break  # no meaningful descent left: converged
            consecutive_fails += 1
            if consecutive_fails >= 50:
                raise ConvergenceError(
                    f"energy failed to decrease for {consecutive_fails} iterations")
            continue
        consecutive_fails = 0
        p = cand
        accepted += 1
        step = min(1.0, s * 2.0)  # line search guards growth past the initial step
        trace.append((it, cand_energy,
                      float(np.linalg.norm(area_mass_center(p, tris, dom_areas)))))
        if accepted % opts.normalize_every == 0:
            # keep the trace bar honest: apply the renormalization only when it
            # does not push the energy back above the last accepted value; the
            # final normalization below still pins the mass center
            moved = _mobius_positions(p, tris, dom_areas, target=1e-3,
                                      max_iterations=2, bisections=12)
            if moved is not p and _energy(lap, moved) <= cand_energy:
                p = moved
        prev = trace[-2][1]
        if prev > 0 and (prev - cand_energy) < opts.energy_rel_tol * prev:
            break

    p = _mobius_positions(p, tris, dom_areas, target=1e-6, max_iterations=100)
    return SphericalParam(p, m.n_vertices), np.asarray(trace)


def conformal_map(m: TriMesh, opts: MapOptions | None = None) -> SphericalParam:
    param, _ = conformal_map_traced(m, opts)
    return param


def tangential_laplacian_norm(m: TriMesh, p: SphericalParam) -> float:
    """RMS per-vertex tangential Laplacian residual (harmonicity measure)."""
    lap = cotangent_laplacian(m)
    pos = p.positions
    grad = -(lap @ pos)
    grad_t = grad - np.einsum("ij,ij->i", grad, pos)[:, None] * pos
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", grad_t, grad_t))))
