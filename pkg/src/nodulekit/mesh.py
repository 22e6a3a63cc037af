"""Binary masks to clean closed triangle meshes: marching cubes at iso 0.5,
island removal, hole filling, uniform Laplacian smoothing, genus checks.

The marching-cubes case table is generated once at import: per cell
configuration, face cut segments are chained into closed loops and fan
triangulated. Face ambiguities (diagonal foreground corners) are resolved by
keeping the foreground connected, which makes adjacent cells agree on their
shared face and the output watertight by construction. Cut vertices sit at
edge midpoints (binary data at iso 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import EmptyInputError, FormatError, TopologyError
from .volume import Volume


@dataclass
class TriMesh:
    """Indexed triangle surface; vertices in physical mm."""

    vertices: np.ndarray  # (n, 3) float
    triangles: np.ndarray  # (m, 3) int, consistent outward orientation

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


# ---------------------------------------------------------------------------
# marching-cubes table
# ---------------------------------------------------------------------------
# Corner c of a cell has offset (c & 1, c >> 1 & 1, c >> 2 & 1).

_CORNER_OFFSETS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])

# 12 cell edges as (corner, corner) pairs, corners differing in one bit.
_EDGES: list[tuple[int, int]] = [
    (a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1
]
_EDGE_ID = {e: i for i, e in enumerate(_EDGES)}


def _face_cycles() -> list[list[int]]:
    """Corner cycles of the 6 cell faces, CCW as seen from outside the cell."""
    cycles = []
    for axis in range(3):
        for side in range(2):
            u, v = [a for a in range(3) if a != axis]
            quad = []
            for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                c = (side << axis) | (du << u) | (dv << v)
                quad.append(c)
            pts = _CORNER_OFFSETS[quad].astype(float)
            normal = np.cross(pts[1] - pts[0], pts[2] - pts[0])
            outward = np.zeros(3)
            outward[axis] = 1.0 if side else -1.0
            if np.dot(normal, outward) < 0:
                quad.reverse()
            cycles.append(quad)
    return cycles


_FACES = _face_cycles()


def _config_loops(config: int) -> list[list[int]]:
    """Directed loops of cut-edge ids for one corner configuration."""
    fg = [(config >> c) & 1 for c in range(8)]
    # Each face contributes directed segments from an FG->BG cut to the next
    # BG->FG cut along the face cycle; this pairing keeps foreground corners
    # connected across ambiguous (diagonal) faces.
    nxt: dict[int, int] = {}
    for cycle in _FACES:
        states = [fg[c] for c in cycle]
        trans = []
        for i in range(4):
            a, b = states[i], states[(i + 1) % 4]
            if a != b:
                edge = tuple(sorted((cycle[i], cycle[(i + 1) % 4])))
                trans.append(("out" if a else "in", _EDGE_ID[edge]))
        for i, (kind, edge) in enumerate(trans):
            if kind != "out":
                continue
            # next "in" transition, cyclically
            for j in range(1, len(trans) + 1):
                kind2, edge2 = trans[(i + j) % len(trans)]
                if kind2 == "in":
                    nxt[edge] = edge2
                    break
    loops = []
    seen: set[int] = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        e = nxt[start]
        while e != start:
            loop.append(e)
            seen.add(e)
            e = nxt[e]
        # Traversal keeps foreground on the left; reversing yields outward winding.
        loops.append(loop[::-1])
    return loops


_MC_LOOPS: list[list[list[int]]] = [_config_loops(c) for c in range(256)]


def extract_isosurface(mask: Volume) -> TriMesh:
    """Marching-cubes surface of a binary mask at iso level 0.5.

    The mask is padded by one zero voxel on all sides so the surface closes.
    Vertices are in physical mm.
    """
    if mask.kind != "mask":
        raise ValueError("extract_isosurface requires a mask volume")
    if not mask.data.any():
        raise EmptyInputError("mask has no foreground voxels")
    padded = np.zeros((mask.dims[0] + 2, mask.dims[1] + 2, mask.dims[2] + 2), dtype=np.uint8)
    padded[1:-1, 1:-1, 1:-1] = mask.data

    # Cell configuration bitfield, vectorized over the padded grid.
    nx, ny, nz = padded.shape
    config = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint16)
    for c in range(8):
        dx, dy, dz = _CORNER_OFFSETS[c]
        config |= (padded[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz].astype(np.uint16) << c)
    active = np.argwhere((config > 0) & (config < 255))

    origin = np.asarray(mask.origin, dtype=float)
    spacing = np.asarray(mask.spacing, dtype=float)

    vertices: list[np.ndarray] = []
    vertex_of_edge: dict[tuple[int, int, int, int], int] = {}
    triangles: list[tuple[int, int, int]] = []

    def cut_vertex(cell: np.ndarray, edge_id: int) -> int:
        a, b = _EDGES[edge_id]
        ga = cell + _CORNER_OFFSETS[a]
        gb = cell + _CORNER_OFFSETS[b]
        axis = int(np.argmax(ga != gb))
        key = (int(ga[0]), int(ga[1]), int(ga[2]), axis) if (ga <= gb).all() else (
            int(gb[0]), int(gb[1]), int(gb[2]), axis)
        idx = vertex_of_edge.get(key)
        if idx is None:
            mid = (ga + gb) / 2.0
            idx = len(vertices)
            vertices.append(origin + (mid - 1.0) * spacing)
            vertex_of_edge[key] = idx
        return idx

    for cell in active:
        for loop in _MC_LOOPS[config[tuple(cell)]]:
            vids = [cut_vertex(cell, e) for e in loop]
            if len(vids) == 3:
                triangles.append((vids[0], vids[1], vids[2]))
            else:
                center = np.mean([vertices[i] for i in vids], axis=0)
                cid = len(vertices)
                vertices.append(center)
                for i in range(len(vids)):
                    triangles.append((cid, vids[i], vids[(i + 1) % len(vids)]))

    return TriMesh(np.asarray(vertices), np.asarray(triangles, dtype=np.int64))


# ---------------------------------------------------------------------------
# topology utilities
# ---------------------------------------------------------------------------

def _edge_counts(triangles: np.ndarray) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for t in triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (int(a), int(b)) if a < b else (int(b), int(a))
            counts[key] = counts.get(key, 0) + 1
    return counts


def weld_vertices(m: TriMesh, rel_tol: float = 1e-9) -> TriMesh:
    """Merge duplicate vertices within rel_tol * bounding-box diagonal."""
    if m.n_vertices == 0:
        return m
    diag = float(np.linalg.norm(m.vertices.max(axis=0) - m.vertices.min(axis=0)))
    tol = max(rel_tol * diag, 1e-300)
    keys = np.round(m.vertices / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    new_vertices = m.vertices[first]
    new_triangles = inverse[m.triangles]
    keep = (
        (new_triangles[:, 0] != new_triangles[:, 1])
        & (new_triangles[:, 1] != new_triangles[:, 2])
        & (new_triangles[:, 2] != new_triangles[:, 0])
    )
    return TriMesh(new_vertices, new_triangles[keep])


def signed_volume(m: TriMesh) -> float:
    """Enclosed signed volume by the divergence theorem (outward = positive)."""
    v = m.vertices
    t = m.triangles
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def surface_centroid(m: TriMesh) -> np.ndarray:
    """Area-weighted centroid of the surface."""
    v = m.vertices
    t = m.triangles
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    areas = np.linalg.norm(np.cross(b - a, c - a), axis=1) / 2.0
    mids = (a + b + c) / 3.0
    total = areas.sum()
    if total <= 0:
        return v.mean(axis=0)
    return (areas[:, None] * mids).sum(axis=0) / total


def euler_characteristic(m: TriMesh) -> int:
    used = np.unique(m.triangles)
    e = len(_edge_counts(m.triangles))
    return int(len(used) - e + m.n_triangles)


def is_closed_manifold(m: TriMesh) -> bool:
    if m.n_triangles == 0:
        return False
    return all(c == 2 for c in _edge_counts(m.triangles).values())


def check_genus_zero(m: TriMesh) -> bool:
    """True iff the welded mesh is a closed manifold with V - E + F = 2."""
    w = weld_vertices(m)
    return is_closed_manifold(w) and euler_characteristic(w) == 2


def remove_islands(m: TriMesh) -> TriMesh:
    """Keep the connected component with the most triangles.

    Ties go to the component with the largest enclosed volume.
    """
    if m.n_triangles == 0:
        return m
    parent = np.arange(m.n_vertices)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for t in m.triangles:
        ra, rb, rc = find(t[0]), find(t[1]), find(t[2])
        parent[rb] = ra
        parent[find(rc)] = ra

    tri_comp = np.array([find(t[0]) for t in m.triangles])
    comps = np.unique(tri_comp)
    best = None
    for comp in comps:
        sel = tri_comp == comp
        count = int(sel.sum())
        vol = abs(signed_volume(TriMesh(m.vertices, m.triangles[sel])))
        key = (count, vol)
        if best is None or key > best[0]:
            best = (key, comp)
    sel = tri_comp == best[1]
    tris = m.triangles[sel]
    used = np.unique(tris)
    remap = np.full(m.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(m.vertices[used], remap[tris])


def fill_holes(m: TriMesh) -> TriMesh:
    """Triangulate every boundary loop by a fan around its centroid."""
    counts = _edge_counts(m.triangles)
    boundary = {e for e, c in counts.items() if c == 1}
    if not boundary:
        return m
    # Recover the boundary edges with the direction they have in their triangle;
    # the hole fan runs opposite so shared edges oppose.
    directed: dict[int, int] = {}
    for t in m.triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (int(a), int(b)) if a < b else (int(b), int(a))
            if key in boundary:
                if int(b) in directed:
                    raise TopologyError("non-simple boundary loop (branching vertex)")
                directed[int(b)] = int(a)  # reversed direction b -> a
    vertices = [m.vertices]
    triangles = [m.triangles]
    visited: set[int] = set()
    next_vid = m.n_vertices
    for start in sorted(directed):
        if start in visited:
            continue
        loop = [start]
        visited.add(start)
        cur = directed[start]
        while cur != start:
            if cur in visited:
                raise TopologyError("non-simple boundary loop (repeated vertex)")
            loop.append(cur)
            visited.add(cur)
            cur = directed[cur]
        centroid = m.vertices[loop].mean(axis=0)
        vertices.append(centroid[None, :])
        fan = [(loop[i], loop[(i + 1) % len(loop)], next_vid) for i in range(len(loop))]
        triangles.append(np.asarray(fan, dtype=np.int64))
        next_vid += 1
    return TriMesh(np.vstack(vertices), np.vstack(triangles))


def laplacian_smooth(m: TriMesh, steps: int = 1) -> TriMesh:
    """Move each vertex to the uniform average of its 1-ring, synchronously."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0 or m.n_triangles == 0:
        return TriMesh(m.vertices.copy(), m.triangles.copy())
    edges = np.vstack([m.triangles[:, [0, 1]], m.triangles[:, [1, 2]], m.triangles[:, [2, 0]]])
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    uniq = np.unique(np.stack([lo, hi], axis=1), axis=0)
    n = m.n_vertices
    data = np.ones(len(uniq))
    adj = sp.coo_matrix((data, (uniq[:, 0], uniq[:, 1])), shape=(n, n))
    adj = (adj + adj.T).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    deg[deg == 0] = 1.0
    pos = m.vertices.copy()
    for _ in range(steps):
        pos = adj.dot(pos) / deg[:, None]
    return TriMesh(pos, m.triangles.copy())


# ---------------------------------------------------------------------------
# OFF file format
# ---------------------------------------------------------------------------

def write_off(m: TriMesh, path: str | Path) -> None:
    lines = ["OFF", f"{m.n_vertices} {m.n_triangles} 0"]
    for v in m.vertices:
        lines.append(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for t in m.triangles:
        lines.append(f"3 {t[0]} {t[1]} {t[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_off(path: str | Path) -> TriMesh:
    tokens = Path(path).read_text().split()
    if not tokens or tokens[0] != "OFF":
        raise FormatError(f"{path}: not an OFF file")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4  # skip the edge count
        vertices = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
        pos += 3 * nv
        tris = []
        for _ in range(nf):
            k = int(tokens[pos])
            if k != 3:
                raise FormatError(f"{path}: only triangles supported, got {k}-gon")
            tris.append([int(tokens[pos + 1]), int(tokens[pos + 2]), int(tokens[pos + 3])])
            pos += 4
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: truncated or malformed OFF: {exc}") from exc
    return TriMesh(vertices, np.asarray(tris, dtype=np.int64))
