import numpy as np
import pytest

from helpers import best_rotation_residual, triangle_distortions
from nodulekit import shapes
from nodulekit import spheremap as S
from nodulekit.errors import TopologyError
from nodulekit.mesh import TriMesh


def unit_directions(mesh):
    return mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)


class TestGaussMapInit:
    def test_icosahedron_radial(self):
        m = shapes.icosphere(0)
        p = S.gauss_map_init(m)
        assert np.abs(p.positions - unit_directions(m)).max() < 1e-6

    def test_icosphere_radial(self):
        # subdiv-1 vertices all sit on icosahedral symmetry axes, so the
        # area-weighted normals are exactly radial
        m = shapes.icosphere(1)
        p = S.gauss_map_init(m)
        assert np.abs(p.positions - unit_directions(m)).max() < 1e-6

    def test_translation_invariant(self):
        m0 = shapes.icosphere(1)
        m1 = shapes.icosphere(1, center=(5.0, -3.0, 2.0))
        p0 = S.gauss_map_init(m0)
        p1 = S.gauss_map_init(m1)
        assert np.abs(p0.positions - p1.positions).max() < 1e-6

    def test_torus_rejected(self):
        with pytest.raises(TopologyError):
            S.gauss_map_init(shapes.torus())

    def test_unit_norms(self):
        m = shapes.radial_blob(seed=3, subdivisions=2)
        p = S.gauss_map_init(m)
        assert np.abs(np.linalg.norm(p.positions, axis=1) - 1).max() < 1e-9


class TestHarmonicEnergy:
    def test_constant_map_zero(self):
        m = shapes.icosphere(1)
        const = S.SphericalParam(np.tile([0.0, 0.0, 1.0], (m.n_vertices, 1)))
        assert S.harmonic_energy(m, const) == 0.0

    def test_matches_per_edge_oracle(self):
        # independent re-summation with separately computed cotangent weights
        m = shapes.icosphere(2)
        p = S.SphericalParam(unit_directions(m))
        e = S.harmonic_energy(m, p)

        weights = {}
        v = m.vertices
        for tri in m.triangles:
            for c in range(3):
                i, j, k = tri[c], tri[(c + 1) % 3], tri[(c + 2) % 3]
                e1, e2 = v[j] - v[i], v[k] - v[i]
                cot = float(e1 @ e2) / np.linalg.norm(np.cross(e1, e2))
                key = (min(j, k), max(j, k))
                weights[key] = weights.get(key, 0.0) + cot / 2.0
        oracle = sum(
            max(w, 1e-8) * float(np.sum((p.positions[a] - p.positions[b]) ** 2))
            for (a, b), w in weights.items())
        assert e == pytest.approx(oracle, abs=1e-9)
        assert e > 0

    def test_quadratic_scaling(self):
        m = shapes.radial_blob(seed=1, subdivisions=2)
        p = S.SphericalParam(unit_directions(m))
        scaled = S.SphericalParam(3.0 * p.positions)
        assert S.harmonic_energy(m, scaled) == pytest.approx(
            9.0 * S.harmonic_energy(m, p), rel=1e-12)

    def test_size_mismatch(self):
        m = shapes.icosphere(1)
        with pytest.raises(ValueError):
            S.harmonic_energy(m, S.SphericalParam(np.zeros((4, 3)) + [0, 0, 1]))


class TestMobiusNormalize:
    def test_fixed_point(self):
        m = shapes.icosphere(2)
        p = S.SphericalParam(unit_directions(m))
        out = S.mobius_normalize(p, m)
        assert np.abs(out.positions - p.positions).max() < 1e-9

    def test_hemisphere_concentration_reduced(self):
        m = shapes.icosphere(2)
        w = S.triangle_areas(m.vertices, m.triangles)
        pos = S._mobius_shift(unit_directions(m), np.array([0.0, 0.0, -0.6]))
        before = np.linalg.norm(S.area_mass_center(pos, m.triangles, w))
        out = S.mobius_normalize(S.SphericalParam(pos), m)
        after = np.linalg.norm(S.area_mass_center(out.positions, m.triangles, w))
        assert before > 0.1
        assert after < before
        assert after <= 1e-6

    def test_idempotent_at_fixed_point(self):
        m = shapes.radial_blob(seed=2, subdivisions=2)
        pos = S._mobius_shift(unit_directions(m), np.array([0.3, 0.1, -0.2]))
        once = S.mobius_normalize(S.SphericalParam(pos), m)
        twice = S.mobius_normalize(once, m)
        assert np.abs(twice.positions - once.positions).max() < 1e-6


class TestConformalMap:
    def test_icosphere_identity_up_to_mobius(self):
        m = shapes.icosphere(3)
        opts = S.MapOptions(energy_rel_tol=1e-14, max_iterations=4000)
        p, trace = S.conformal_map_traced(m, opts)
        assert np.abs(np.linalg.norm(p.positions, axis=1) - 1).max() <= 1e-9
        assert S.tangential_laplacian_norm(m, p) <= 1e-5
        # already mass centered, so "up to Mobius" reduces to a rotation
        assert best_rotation_residual(p.positions, unit_directions(m)) < 1e-3
        energies = trace[:, 1]
        assert (np.diff(energies) <= 1e-12).all()

    def test_blob_energy_monotone_and_centered(self):
        m = shapes.radial_blob(seed=4, subdivisions=3)
        p, trace = S.conformal_map_traced(m)
        assert (np.diff(trace[:, 1]) <= 1e-12).all()
        w = S.triangle_areas(m.vertices, m.triangles)
        mc = np.linalg.norm(S.area_mass_center(p.positions, m.triangles, w))
        assert mc <= 1e-3
        assert np.abs(np.linalg.norm(p.positions, axis=1) - 1).max() <= 1e-9

    def test_prolate_ellipsoid_distortion(self):
        m = shapes.ellipsoid((2.0, 1.0, 1.0), subdivisions=3)
        p = S.conformal_map(m)
        assert np.median(triangle_distortions(m, p)) <= 1.15

    def test_no_flipped_spherical_triangles(self):
        m = shapes.radial_blob(seed=6, subdivisions=3)
        p = S.conformal_map(m)
        areas = S.spherical_triangle_areas(p.positions, m.triangles)
        assert areas.min() > 0
        assert areas.sum() == pytest.approx(4 * np.pi, rel=1e-6)

    def test_deterministic(self):
        m = shapes.radial_blob(seed=7, subdivisions=2)
        p1, t1 = S.conformal_map_traced(m)
        p2, t2 = S.conformal_map_traced(m)
        assert np.array_equal(p1.positions, p2.positions)
        assert np.array_equal(t1, t2)

    def test_torus_rejected(self):
        with pytest.raises(TopologyError):
            S.conformal_map(shapes.torus())
