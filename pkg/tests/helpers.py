"""Shared independent oracles for the test suite."""

import numpy as np


def triangle_distortions(mesh, param):
    """Per-triangle quasi-conformal distortion (sigma_max / sigma_min) of the
    linear map from each original triangle to its spherical image, computed
    from the singular values of the 2x2 Jacobian in local frames."""
    v, q, t = mesh.vertices, param.positions, mesh.triangles

    def frames(p0, p1, p2):
        e1 = p1 - p0
        length = np.linalg.norm(e1, axis=1)
        e1 = e1 / length[:, None]
        w = p2 - p0
        x2 = np.einsum("ij,ij->i", w, e1)
        y2 = np.linalg.norm(w - x2[:, None] * e1, axis=1)
        return length, x2, y2

    ld, xd, yd = frames(v[t[:, 0]], v[t[:, 1]], v[t[:, 2]])
    li, xi, yi = frames(q[t[:, 0]], q[t[:, 1]], q[t[:, 2]])
    out = np.empty(len(t))
    for i in range(len(t)):
        m_dom = np.array([[ld[i], xd[i]], [0.0, yd[i]]])
        m_img = np.array([[li[i], xi[i]], [0.0, yi[i]]])
        jac = m_img @ np.linalg.inv(m_dom)
        sv = np.linalg.svd(jac, compute_uv=False)
        out[i] = sv[0] / max(sv[1], 1e-300)
    return out


def best_rotation_residual(p, q):
    """Max per-point residual after optimally rotating point set p onto q."""
    h = p.T @ q
    u, _, vt = np.linalg.svd(h)
    if np.linalg.det(u @ vt) < 0:
        u[:, -1] *= -1
    r = u @ vt
    return float(np.linalg.norm(p @ r - q, axis=1).max())


def random_rotation(rng):
    """Uniform random rotation matrix (QR of a Gaussian, det +1)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q
