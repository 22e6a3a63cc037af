import numpy as np
import pytest

from helpers import random_rotation
from nodulekit import patches as P
from nodulekit.volume import Volume


def mask_volume(data, spacing=(1, 1, 1), origin=(0, 0, 0)):
    data = np.asarray(data, dtype=np.uint8)
    return Volume(dims=data.shape, spacing=spacing, origin=origin, data=data, kind="mask")


def intensity_volume(data, spacing=(1, 1, 1), origin=(0, 0, 0)):
    return Volume(dims=np.asarray(data).shape, spacing=spacing, origin=origin,
                  data=np.asarray(data, dtype=float), kind="intensity")


def ellipsoid_mask(semi_axes, n=32, spacing=(1, 1, 1), rot=None):
    idx = [np.arange(n) - (n - 1) / 2 for _ in range(3)]
    x, y, z = np.meshgrid(*idx, indexing="ij")
    pts = np.stack([x * spacing[0], y * spacing[1], z * spacing[2]], axis=-1)
    if rot is not None:
        pts = pts @ rot
    a, b, c = semi_axes
    inside = (pts[..., 0] / a) ** 2 + (pts[..., 1] / b) ** 2 + (pts[..., 2] / c) ** 2 <= 1
    return mask_volume(inside, spacing=spacing)


class TestPcaAxes:
    def test_axis_aligned_ellipsoid(self):
        m = ellipsoid_mask((8, 5, 3))
        axes, fallback = P.pca_axes(m)
        assert not fallback
        assert np.abs(np.abs(axes) - np.eye(3)).max() < 1e-3
        assert np.allclose(axes.T @ axes, np.eye(3), atol=1e-9)
        assert np.linalg.det(axes) == pytest.approx(1.0, abs=1e-9)

    def test_ball_yields_identity(self):
        m = ellipsoid_mask((6, 6, 6))
        axes, fallback = P.pca_axes(m)
        assert not fallback
        assert np.allclose(axes, np.eye(3), atol=1e-9)

    def test_rotated_ellipsoid(self):
        rot = np.array([
            [np.cos(np.pi / 4), -np.sin(np.pi / 4), 0],
            [np.sin(np.pi / 4), np.cos(np.pi / 4), 0],
            [0, 0, 1.0]])
        m = ellipsoid_mask((10, 4, 3), n=36, rot=rot)
        axes, fallback = P.pca_axes(m)
        assert not fallback
        first = axes[:, 0]
        assert abs(first[0]) == pytest.approx(1 / np.sqrt(2), abs=1e-2)
        assert abs(first[1]) == pytest.approx(1 / np.sqrt(2), abs=1e-2)
        assert first[0] > 0 and first[1] > 0  # sign rule
        assert abs(first[2]) < 1e-2

    def test_degenerate_falls_back(self):
        data = np.zeros((5, 5, 5))
        data[2, 2, 2] = 1
        axes, fallback = P.pca_axes(mask_volume(data))
        assert fallback
        assert np.array_equal(axes, np.eye(3))

    def test_collinear_falls_back(self):
        data = np.zeros((9, 3, 3))
        data[:, 1, 1] = 1
        axes, fallback = P.pca_axes(mask_volume(data))
        assert fallback


class TestRoiEdge:
    def test_single_mask(self):
        data = np.zeros((20, 20, 20))
        data[2:12, 3:15, 4:12] = 1  # spans 9 x 11 x 7 voxel gaps
        edge = P.compute_roi_edge([mask_volume(data)])
        assert edge == pytest.approx(11 * 1.1)

    def test_max_over_masks(self):
        a = np.zeros((16, 16, 16)); a[2:14, 2:6, 2:6] = 1
        b = np.zeros((16, 16, 16)); b[2:8, 2:8, 2:8] = 1
        edge = P.compute_roi_edge([mask_volume(a), mask_volume(b)])
        assert edge == pytest.approx(11 * 1.1)

    def test_monotone_in_input_set(self):
        a = np.zeros((16, 16, 16)); a[4:10, 4:10, 4:10] = 1
        b = np.zeros((16, 16, 16)); b[2:14, 4:8, 4:8] = 1
        edge_one = P.compute_roi_edge([mask_volume(a)])
        edge_two = P.compute_roi_edge([mask_volume(a), mask_volume(b)])
        assert edge_two >= edge_one

    def test_empty_list(self):
        with pytest.raises(ValueError):
            P.compute_roi_edge([])

    def test_all_empty_masks(self):
        with pytest.raises(ValueError):
            P.compute_roi_edge([mask_volume(np.zeros((4, 4, 4)))])


class TestExtractTriplanar:
    def test_constant_volume(self):
        v = intensity_volume(np.full((12, 12, 12), 100.0))
        ps = P.extract_triplanar(v, np.array([5.5, 5.5, 5.5]), np.eye(3), 8.0, 16)
        assert np.allclose(ps.planes, 100.0)

    def test_center_outside_gives_fill(self):
        v = intensity_volume(np.full((8, 8, 8), 100.0))
        ps = P.extract_triplanar(v, np.array([1000.0, 0, 0]), np.eye(3), 5.0, 16)
        assert np.allclose(ps.planes, -1000.0)

    def test_linear_field_varies_along_first_axis(self):
        # f(x, y, z) = x in HU
        n = 24
        data = np.tile(np.arange(n, dtype=float)[:, None, None], (1, n, n))
        v = intensity_volume(data)
        center = np.full(3, (n - 1) / 2)
        ps = P.extract_triplanar(v, center, np.eye(3), 10.0, 16)
        xy = ps.planes[0]
        u = ((np.arange(16) + 0.5) / 16 - 0.5) * 10.0
        expected = center[0] + u
        assert np.abs(xy - expected[:, None]).max() < 1e-9
        # y'z' plane holds x fixed
        assert np.abs(ps.planes[2] - center[0]).max() < 1e-9

    def test_rotation_equivariance(self):
        # band-limited field sampled directly and in a rotated frame
        n = 40
        idx = np.arange(n) - (n - 1) / 2
        grid = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), axis=-1)

        def field(pts):
            return (100 * np.sin(0.25 * pts[..., 0]) * np.cos(0.2 * pts[..., 1])
                    + 50 * np.sin(0.15 * pts[..., 2]))

        rng = np.random.default_rng(0)
        rot = random_rotation(rng)
        v0 = intensity_volume(field(grid), origin=(-(n - 1) / 2,) * 3)
        v1 = intensity_volume(field(grid @ rot), origin=(-(n - 1) / 2,) * 3)
        axes0 = np.eye(3)
        axes1 = rot @ axes0
        ps0 = P.extract_triplanar(v0, np.zeros(3), axes0, 12.0, 32)
        ps1 = P.extract_triplanar(v1, np.zeros(3), axes1, 12.0, 32)
        w0 = np.stack([P.window_normalize(p, -200, 200) for p in ps0.planes])
        w1 = np.stack([P.window_normalize(p, -200, 200) for p in ps1.planes])
        assert np.abs(w0.astype(int) - w1.astype(int)).max() <= 1


class TestWindowNormalize:
    def test_endpoints(self):
        out = P.window_normalize(np.array([[-1000.0, 400.0]]), -1000, 400)
        assert out[0, 0] == 0 and out[0, 1] == 255

    def test_midpoint_rounds_half_up(self):
        out = P.window_normalize(np.array([[-300.0]]), -1000, 400)
        assert out[0, 0] == 128

    def test_clamps_below(self):
        out = P.window_normalize(np.array([[-2000.0, 9999.0]]), -1000, 400)
        assert out[0, 0] == 0 and out[0, 1] == 255

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            P.window_normalize(np.zeros((2, 2)), 400, -1000)


class TestMontage:
    def make_patchset(self, values, px=64):
        planes = np.stack([np.full((px, px), v, dtype=float) for v in values])
        return P.PatchSet(planes=planes, edge_mm=10.0, px=px,
                          center=np.zeros(3), axes=np.eye(3))

    def test_constant_channels(self):
        # HU values chosen to window-normalize to 0, 128, 255
        ps = self.make_patchset([-1000.0, -300.0, 400.0])
        rgb = P.montage_rgb(ps)
        assert rgb.width == rgb.height == 227
        assert (rgb.channels[0] == 0).all()
        assert (rgb.channels[1] == 128).all()
        assert (rgb.channels[2] == 255).all()

    def test_output_size_contract(self):
        ps = self.make_patchset([0.0, 0.0, 0.0], px=64)
        assert P.montage_rgb(ps).channels.shape == (3, 227, 227)

    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        planes = rng.uniform(-1000, 400, size=(3, 32, 32))
        ps = P.PatchSet(planes=planes, edge_mm=5.0, px=32,
                        center=np.zeros(3), axes=np.eye(3))
        rgb = P.montage_rgb(ps, out_px=32)
        P.write_rgb_png(rgb, tmp_path / "x.png")
        back = P.read_rgb_png(tmp_path / "x.png")
        assert np.array_equal(back.channels, rgb.channels)

    def test_deterministic_bytes(self, tmp_path):
        rng = np.random.default_rng(2)
        planes = rng.uniform(-1000, 400, size=(3, 48, 48))
        ps = P.PatchSet(planes=planes, edge_mm=5.0, px=48,
                        center=np.zeros(3), axes=np.eye(3))
        P.write_rgb_png(P.montage_rgb(ps), tmp_path / "a.png")
        P.write_rgb_png(P.montage_rgb(ps), tmp_path / "b.png")
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
