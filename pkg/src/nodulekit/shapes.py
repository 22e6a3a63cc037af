"""Parametric test meshes: icospheres, tori, radial blobs, ellipsoids."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh

_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array([
    (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
    (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
    (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
], dtype=float)
_ICO_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.int64)


def icosphere(subdivisions: int = 2, radius: float = 1.0,
              center: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> TriMesh:
    """Geodesic sphere from a subdivided icosahedron (outward oriented)."""
    verts = _ICO_VERTS / np.linalg.norm(_ICO_VERTS, axis=1, keepdims=True)
    faces = _ICO_FACES.copy()
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}
        vlist = list(verts)
        new_faces = []

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            idx = midpoint.get(key)
            if idx is None:
                p = vlist[a] + vlist[b]
                p = p / np.linalg.norm(p)
                idx = len(vlist)
                vlist.append(p)
                midpoint[key] = idx
            return idx

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        verts = np.asarray(vlist)
        faces = np.asarray(new_faces, dtype=np.int64)
    return TriMesh(verts * radius + np.asarray(center, dtype=float), faces)


def torus(major: float = 2.0, minor: float = 0.7, n_major: int = 24, n_minor: int = 12) -> TriMesh:
    """Closed torus mesh (genus 1)."""
    verts = np.empty((n_major * n_minor, 3))
    for i in range(n_major):
        u = 2 * np.pi * i / n_major
        for j in range(n_minor):
            v = 2 * np.pi * j / n_minor
            r = major + minor * np.cos(v)
            verts[i * n_minor + j] = (r * np.cos(u), r * np.sin(u), minor * np.sin(v))
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(verts, np.asarray(faces, dtype=np.int64))


def ellipsoid(axes: tuple[float, float, float], subdivisions: int = 3) -> TriMesh:
    """Axis-aligned ellipsoid from a scaled icosphere."""
    s = icosphere(subdivisions)
    return TriMesh(s.vertices * np.asarray(axes, dtype=float), s.triangles)


def radial_blob(seed: int = 0, subdivisions: int = 3, base_radius: float = 1.0,
                bumpiness: float = 0.25, frequency: float = 4.0) -> TriMesh:
    """Star-shaped blob: icosphere with a smooth random radial perturbation."""
    rng = np.random.default_rng(seed)
    s = icosphere(subdivisions)
    d = s.vertices / np.linalg.norm(s.vertices, axis=1, keepdims=True)
    u = rng.normal(size=(3, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    phases = rng.uniform(0, 2 * np.pi, size=3)
    pert = sum(np.cos(frequency * (d @ u[i]) * (i + 1) + phases[i]) for i in range(3)) / 3.0
    r = base_radius * (1.0 + bumpiness * pert)
    return TriMesh(d * r[:, None], s.triangles)
