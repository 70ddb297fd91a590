import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from helivort.domain_solver import DiskDomain
from helivort.kernel import HelixParams
from helivort.reconstruct3d import (VorticityKde, helical_map, helix_curve,
                                    vorticity3d, xi_field)
from helivort.sim import BlobSpec, init_blobs

P1 = HelixParams(1.0)
DOM = DiskDomain(2.0)


@pytest.fixture(scope="module")
def blob_system():
    spec = BlobSpec(center=(1.0, 0.0), radius=0.05, circulation=1.0,
                    particles=500)
    return init_blobs([spec], P1, DOM, delta=8e-3)


@pytest.fixture(scope="module")
def kde(blob_system):
    return VorticityKde(blob_system)


def tube_samples(rng, count=150):
    th = rng.uniform(0.0, 2.0 * math.pi, count)
    heights = rng.uniform(0.0, 2.0 * math.pi, count)
    base = np.stack((np.cos(th), np.sin(th)), axis=-1)
    base += rng.normal(scale=0.03, size=(count, 2))
    c, s = np.cos(heights), np.sin(heights)
    return np.stack((c * base[:, 0] - s * base[:, 1],
                     s * base[:, 0] + c * base[:, 1], heights), axis=-1)


class TestXiField:
    def test_origin(self):
        assert_allclose(xi_field([0.0, 0.0, 0.0], P1), [0.0, 0.0, 1.0], atol=0.0)

    def test_value(self):
        assert_allclose(xi_field([1.0, 0.0, 5.0], HelixParams(2.0)),
                        [0.0, 1.0, 2.0], atol=0.0)

    def test_norm_is_lifted_norm(self):
        xi = xi_field([3.0, 4.0, 7.7], P1)
        assert xi @ xi == pytest.approx(26.0, rel=1e-15)


class TestHelicalMap:
    def test_identity(self):
        pts = np.array([1.3, -0.2, 0.9])
        assert_allclose(helical_map(0.0, pts, P1), pts, atol=0.0)

    def test_full_turn_advances_one_pitch(self):
        out = helical_map(2.0 * math.pi, np.array([1.0, 0.0, 0.0]), P1)
        assert_allclose(out, [1.0, 0.0, 2.0 * math.pi], atol=1e-14)

    def test_group_law(self):
        pts = np.array([0.4, 0.7, -1.2])
        lhs = helical_map(0.4, helical_map(1.1, pts, P1), P1)
        rhs = helical_map(1.5, pts, P1)
        assert_allclose(lhs, rhs, atol=1e-12)


class TestVorticity3d:
    def test_zero_height_no_back_rotation(self, kde):
        sample = np.array([[1.01, 0.02, 0.0]])
        out = vorticity3d(sample, kde, P1)[0]
        expected = kde(sample[0, :2]) / P1.h * xi_field(sample[0], P1)
        assert_allclose(out, expected, rtol=1e-14)

    def test_parallel_to_xi(self, kde):
        rng = np.random.default_rng(1)
        pts = tube_samples(rng)
        w = vorticity3d(pts, kde, P1)
        xi = xi_field(pts, P1)
        cross = np.cross(w, xi)
        scale = np.linalg.norm(w, axis=-1) * np.linalg.norm(xi, axis=-1)
        assert np.abs(cross).max() <= 1e-14 * max(scale.max(), 1.0)

    def test_helical_invariance(self, kde):
        rng = np.random.default_rng(2)
        pts = tube_samples(rng, count=60)
        theta = 0.81
        lhs = vorticity3d(helical_map(theta, pts, P1), kde, P1)
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        rhs = vorticity3d(pts, kde, P1) @ rot.T
        scale = np.abs(rhs).max()
        assert np.abs(lhs - rhs).max() < 1e-12 * scale

    def test_discrete_divergence_free(self, kde):
        rng = np.random.default_rng(3)
        pts = tube_samples(rng, count=100)
        w_scale = np.linalg.norm(vorticity3d(pts, kde, P1), axis=-1).max()
        bw = kde.bandwidth
        divs = {}
        for step in (1e-3, 5e-4):
            total = np.zeros(pts.shape[0])
            for k in range(3):
                e = np.zeros(3)
                e[k] = step
                wp = vorticity3d(pts + e, kde, P1)
                wm = vorticity3d(pts - e, kde, P1)
                total += (wp[:, k] - wm[:, k]) / (2.0 * step)
            divs[step] = np.abs(total).max()
            # truncation-only residual: O(step^2 * max third derivative),
            # with the kde bandwidth setting the derivative scale
            assert divs[step] <= 0.05 * w_scale * step**2 / bw**3
        assert 3.0 < divs[1e-3] / divs[5e-4] < 5.0


class TestVorticityKde:
    def test_mass_quadrature(self, blob_system, kde):
        h = 4e-3
        axis = np.arange(-0.2, 0.2, h)
        gx, gy = np.meshgrid(axis + 1.0, axis, indexing="ij")
        vals = kde(np.stack((gx, gy), axis=-1))
        assert h * h * vals.sum() == pytest.approx(1.0, rel=1e-3)


class TestHelixCurve:
    def test_time_zero_start(self):
        spec = BlobSpec(center=(0.7, 0.2), radius=0.05, circulation=1.0)
        pts = helix_curve(spec, P1, 0.0, [0.0])
        assert_allclose(pts[0], [0.7, 0.2, 0.0], atol=0.0)

    def test_period_advances_pitch(self):
        spec = BlobSpec(center=(0.7, 0.2), radius=0.05, circulation=1.0)
        pts = helix_curve(spec, P1, 0.3, [0.0, 2.0 * math.pi])
        assert_allclose(pts[1][:2], pts[0][:2], atol=1e-13)
        assert pts[1][2] - pts[0][2] == pytest.approx(2.0 * math.pi * P1.h)

    def test_constant_radius(self):
        spec = BlobSpec(center=(0.6, 0.8), radius=0.05, circulation=-2.0)
        sigma = np.linspace(0.0, 4.0 * math.pi, 50)
        for t in (0.0, 0.9, 5.0):
            pts = helix_curve(spec, P1, t, sigma)
            radii = np.hypot(pts[:, 0], pts[:, 1])
            assert_allclose(radii, 1.0, rtol=1e-12)
