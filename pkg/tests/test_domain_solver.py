import numpy as np
import pytest
from numpy.testing import assert_allclose

from helivort import domain_solver as ds
from helivort.cli import manufactured_convergence
from helivort.kernel import HelixParams, green_free

P1 = HelixParams(1.0)
DOM = ds.DiskDomain(2.0)


def manufactured_psi(pts):
    pts = np.asarray(pts, dtype=float)
    q = DOM.r_u**2 - (pts[..., 0] ** 2 + pts[..., 1] ** 2)
    return q * q


@pytest.fixture(scope="module")
def grid97():
    return ds.make_grid(97, DOM)


@pytest.fixture(scope="module")
def system97(grid97):
    return ds.assemble_operator(grid97, P1, DOM)


class TestGrid:
    def test_geometry(self):
        grid = ds.make_grid(65, DOM)
        assert grid.spacing == pytest.approx(2 * DOM.r_u / 64)
        gx, gy = grid.node_xy()
        inside = gx**2 + gy**2 < DOM.r_u**2
        assert np.array_equal(grid.mask == ds.MASK_INTERIOR, inside)
        # boundary ring is disjoint from the interior and hugs it
        assert not np.any((grid.mask == ds.MASK_BOUNDARY) & inside)

    def test_too_small(self):
        with pytest.raises(ValueError):
            ds.make_grid(2, DOM)


class TestDeposit:
    def test_particle_on_node(self, grid97):
        pos = np.array([[grid97.xs[40], grid97.ys[50]]])
        out = ds.deposit(pos, np.array([1.0]), grid97)
        peak = 1.0 / grid97.spacing**2
        assert out[40, 50] == pytest.approx(peak)
        rest = out.copy()
        rest[40, 50] = 0.0
        assert np.abs(rest).max() < 1e-12 * peak

    def test_particle_at_cell_center(self, grid97):
        h = grid97.spacing
        pos = np.array([[grid97.xs[40] + 0.5 * h, grid97.ys[50] + 0.5 * h]])
        out = ds.deposit(pos, np.array([1.0]), grid97)
        corners = out[[40, 41, 40, 41], [50, 50, 51, 51]]
        assert_allclose(corners, 0.25 / h**2, rtol=1e-12)

    def test_total_circulation_preserved(self, grid97):
        rng = np.random.default_rng(0)
        pos = rng.uniform(-1.2, 1.2, size=(1000, 2))
        w = rng.normal(size=1000)
        out = ds.deposit(pos, w, grid97)
        assert_allclose(grid97.spacing**2 * out.sum(), w.sum(), rtol=1e-12)

    def test_outside_box_rejected(self, grid97):
        with pytest.raises(ValueError):
            ds.deposit(np.array([[5.0, 0.0]]), np.array([1.0]), grid97)


class TestOperator:
    def test_isotropic_limit_is_five_point(self):
        # huge pitch makes K the identity; the stencil must collapse to the
        # standard 5-point Laplacian
        grid = ds.make_grid(33, DOM)
        system = ds.assemble_operator(grid, HelixParams(1e9), DOM)
        n = grid.n
        h2 = grid.spacing**2
        center_flat = (n // 2) * n + n // 2
        row_pos = np.searchsorted(system.interior, center_flat)
        row = system.a_ii.getrow(row_pos).toarray().ravel()
        dense = np.zeros(n * n)
        dense[system.interior] = row
        stencil = dense.reshape(n, n)[n // 2 - 1:n // 2 + 2, n // 2 - 1:n // 2 + 2]
        expected = np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]]) / h2
        assert_allclose(stencil, expected, atol=1e-9 / h2)

    def test_symmetry(self, system97):
        diff = system97.a_ii - system97.a_ii.T
        assert abs(diff).max() < 1e-14
        rng = np.random.default_rng(1)
        m = system97.a_ii.shape[0]
        for _ in range(10):
            u = rng.normal(size=m)
            v = rng.normal(size=m)
            lhs = (system97.a_ii @ u) @ v
            rhs = u @ (system97.a_ii @ v)
            assert_allclose(lhs, rhs, rtol=1e-12)

    def test_positive_definite(self, system97):
        rng = np.random.default_rng(2)
        m = system97.a_ii.shape[0]
        for _ in range(100):
            u = rng.normal(size=m)
            assert u @ (system97.a_ii @ u) > 0.0


class TestSolve:
    def test_zero_source(self, system97):
        psi = ds.solve_stream(np.zeros((97, 97)), system97)
        assert np.all(psi == 0.0)

    def test_manufactured_convergence(self):
        errors = manufactured_convergence([33, 65, 129], P1, DOM)
        orders = [np.log2(errors[i] / errors[i + 1]) for i in range(2)]
        assert errors[0] > errors[1] > errors[2]
        assert orders[-1] >= 1.9

    def test_mirror_symmetry(self, grid97, system97):
        gx, gy = grid97.node_xy()
        interior = grid97.mask == ds.MASK_INTERIOR
        blob = np.exp(-((gx - 0.8) ** 2 + (gy - 0.5) ** 2) / 0.02)
        omega = np.where(interior, blob + blob[:, ::-1], 0.0)
        psi = ds.solve_stream(omega, system97)
        assert_allclose(psi, psi[:, ::-1], atol=1e-9)

    def test_linearity(self, grid97, system97):
        gx, gy = grid97.node_xy()
        interior = grid97.mask == ds.MASK_INTERIOR
        w1 = np.where(interior, np.exp(-((gx - 0.5) ** 2 + gy**2) / 0.05), 0.0)
        w2 = np.where(interior, np.exp(-(gx**2 + (gy + 0.7) ** 2) / 0.03), 0.0)
        combined = ds.solve_stream(2.0 * w1 - 3.0 * w2, system97)
        split = 2.0 * ds.solve_stream(w1, system97) - 3.0 * ds.solve_stream(
            w2, system97)
        assert_allclose(combined, split, atol=1e-8)

    def test_rotation_covariance(self, grid97, system97):
        gx, gy = grid97.node_xy()
        interior = grid97.mask == ds.MASK_INTERIOR
        theta = 0.3
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        a = np.array([0.9, 0.3])
        a_rot = rot @ a

        def gauss(center):
            return np.where(
                interior,
                np.exp(-((gx - center[0]) ** 2 + (gy - center[1]) ** 2) / 0.045),
                0.0)

        psi1 = ds.solve_stream(gauss(a), system97)
        psi2 = ds.solve_stream(gauss(a_rot), system97)
        pts = np.random.default_rng(3).uniform(-1.2, 1.2, size=(200, 2))
        v1 = ds.interp_bilinear(psi1, grid97, pts)
        v2 = ds.interp_bilinear(psi2, grid97, pts @ rot.T)
        # grid breaks exact covariance; agreement is O(spacing^2)
        assert np.abs(v1 - v2).max() < 5e-4

    def test_nonconvergence_raises_with_history(self, grid97, system97):
        gx, gy = grid97.node_xy()
        omega = np.where(grid97.mask == ds.MASK_INTERIOR,
                         np.exp(-(gx**2 + gy**2)), 0.0)
        with pytest.raises(ds.SolverError) as err:
            ds.solve_stream(omega, system97, maxiter=3)
        assert len(err.value.residual_history) == 3


class TestCurlInterp:
    def test_linear_stream(self, grid97):
        gx, _ = grid97.node_xy()
        psi = 3.0 * gx
        pts = np.random.default_rng(4).uniform(-1.5, 1.5, size=(50, 2))
        v = ds.curl_interp(psi, grid97, pts)
        assert_allclose(v[:, 0], 0.0, atol=1e-12)
        assert_allclose(v[:, 1], 3.0, rtol=1e-12)

    def test_radial_stream_is_tangential(self, grid97):
        gx, gy = grid97.node_xy()
        psi = np.exp(-(gx**2 + gy**2))
        pts = np.random.default_rng(5).uniform(-1.0, 1.0, size=(100, 2))
        v = ds.curl_interp(psi, grid97, pts)
        assert np.abs(np.einsum("ij,ij->i", v, pts)).max() < 2e-3

    def test_manufactured_gradient(self, grid97):
        gx, gy = grid97.node_xy()
        psi = manufactured_psi(np.stack((gx, gy), axis=-1))
        pts = np.random.default_rng(6).uniform(-1.0, 1.0, size=(100, 2))
        v = ds.curl_interp(psi, grid97, pts)
        q = DOM.r_u**2 - (pts**2).sum(axis=1)
        v_exact = np.stack((4.0 * pts[:, 1] * q, -4.0 * pts[:, 0] * q), axis=-1)
        assert np.abs(v - v_exact).max() < 0.05

    def test_outside_grid_rejected(self, grid97):
        with pytest.raises(ValueError):
            ds.curl_interp(np.zeros((97, 97)), grid97, np.array([[9.0, 0.0]]))


class TestDivKGrad:
    def test_radial_weight_against_analytic(self):
        # div(K grad sqrt(|X|/h)) has the closed radial form
        # h^{3/2} (h^2 - 3 r^2/4) / (r^2 + h^2)^{11/4}
        h = 1.0
        rng = np.random.default_rng(7)
        pts = rng.uniform(-1.5, 1.5, size=(50, 2))
        r2 = (pts**2).sum(axis=1)
        expected = h**1.5 * (h * h - 0.75 * r2) / (r2 + h * h) ** 2.75
        a_fn = ds._weight_fn(P1)
        got = ds.div_k_grad(a_fn, pts, P1)
        assert_allclose(got, expected, atol=1e-5)


class TestRegularPartProbe:
    @pytest.fixture(scope="class")
    def probe_setup(self):
        grid = ds.make_grid(129, DOM)
        system = ds.assemble_operator(grid, P1, DOM)
        return grid, system

    def test_green_decomposition_consistency(self, probe_setup):
        # the grid solution for a narrow Gaussian minus mass * G must match
        # the directly probed regular part away from the source
        grid, system = probe_setup
        y0 = np.array([1.0, 0.0])
        sigma = 0.05
        gx, gy = grid.node_xy()
        interior = grid.mask == ds.MASK_INTERIOR
        d2 = (gx - y0[0]) ** 2 + (gy - y0[1]) ** 2
        omega = np.where(interior, np.exp(-d2 / (2 * sigma**2))
                         / (2 * np.pi * sigma**2), 0.0)
        mass = grid.spacing**2 * omega.sum()
        psi = ds.solve_stream(omega, system)

        flat = np.stack((gx, gy), axis=-1).reshape(-1, 2)
        r = np.hypot(flat[:, 0], flat[:, 1])
        dist = np.hypot(flat[:, 0] - y0[0], flat[:, 1] - y0[1])
        annulus = (np.abs(r - 1.0) < 0.4) & (dist > 0.3) & \
            (grid.mask.ravel() == ds.MASK_INTERIOR)
        decomposed = psi.ravel()[annulus] - mass * green_free(flat[annulus], y0, P1)

        probed = ds.regular_part_probe(y0, system)
        assert np.abs(decomposed - probed.ravel()[annulus]).max() < 0.02
        assert np.abs(decomposed).max() < 1.0

    def test_bounded_gradient(self, probe_setup):
        grid, system = probe_setup
        y0 = np.array([1.0, 0.0])
        probed = ds.regular_part_probe(y0, system)
        d1 = np.gradient(probed, grid.spacing, axis=0)
        d2 = np.gradient(probed, grid.spacing, axis=1)
        gx, gy = grid.node_xy()
        r = np.hypot(gx, gy)
        annulus = (np.abs(r - 1.0) < 0.4) & (grid.mask == ds.MASK_INTERIOR)
        assert np.hypot(d1, d2)[annulus].max() < 1.0

    def test_symmetry_spot_check(self, probe_setup):
        grid, system = probe_setup
        y0 = np.array([1.0, 0.0])
        x0 = np.array([-0.5, 0.5])
        s_y = ds.regular_part_probe(y0, system)
        s_x = ds.regular_part_probe(x0, system)
        v1 = ds.interp_bilinear(s_y, grid, x0[None])[0]
        v2 = ds.interp_bilinear(s_x, grid, y0[None])[0]
        assert abs(v1 - v2) < 1e-4

    def test_probe_outside_disk_rejected(self, probe_setup):
        _, system = probe_setup
        with pytest.raises(ValueError):
            ds.regular_part_probe(np.array([2.5, 0.0]), system)


def test_field_to_csv(tmp_path, grid97):
    path = tmp_path / "field.csv"
    ds.field_to_csv(path, np.zeros((97, 97)), grid97)
    lines = path.read_text().splitlines()
    assert lines[0] == "index,x1,x2,value"
    assert len(lines) == 1 + 97 * 97
