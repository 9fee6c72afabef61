import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brlab.ensembles import EnsembleSpec, ModelSpec
from brlab.errors import InvalidExponent, InvalidExponents, UsageError, ZeroVector
from brlab.free import free_gamma_scalar
from brlab.lyapunov import estimate_L
from brlab.moments import (
    decoupling_ratio,
    estimate_phi,
    factorization_moment_ratios,
    goe_quadform_lower_bound,
    heavy_tail_flags,
    mobius,
    sigma_statistic,
    sigma_values,
)
from brlab.pool import PoolConfig, pool_backed_greens, prepare_pool
from brlab.rng import TAG_TEST, RngStream
from brlab.tree import TreeGeometry, block, dense_resolvent_oracle

S = RngStream(5, (TAG_TEST,))
TINY = PoolConfig(10, 1)


def goe(K=2, W=1, lam=0.5, A=None):
    return ModelSpec(K, W, A, EnsembleSpec("goe", W), lam)


class TestPhiFree:
    def test_band_centre(self):
        scan = estimate_phi(ModelSpec(2, 1), 1e-7j, 0.5, range(1, 25), 50, S, pool_config=TINY)
        assert scan.phi == pytest.approx(-0.5 * math.log(math.sqrt(2)), abs=1e-5)
        assert scan.phi_stderr == pytest.approx(0.0, abs=1e-12)

    def test_l1_edge(self):
        scan = estimate_phi(ModelSpec(2, 1), 3 + 1e-7j, 0.5, range(1, 25), 50, S, pool_config=TINY)
        assert scan.phi == pytest.approx(-0.5 * math.log(2), abs=1e-5)
        assert scan.max_residual <= 1e-9

    def test_log_moments_closed_form(self):
        z = 1.5 + 1e-3j
        scan = estimate_phi(ModelSpec(3, 1), z, 0.7, (0, 2, 5, 9), 10, S, pool_config=TINY)
        g = abs(free_gamma_scalar(1.5, 3, 1e-3))
        assert np.allclose(scan.log_moments, 0.7 * (np.array([0, 2, 5, 9]) + 1) * math.log(g), atol=1e-10)


@pytest.fixture(scope="module")
def setup():
    model = goe(W=2, lam=0.3, A=np.diag([0.0, 4.0]))
    z = 2.9 + 1e-3j
    cfg = PoolConfig(2000, 200)
    pool = prepare_pool(model, z, cfg, S)
    L = estimate_L(model, z, 1000, S.child(1), 16, pool, cfg)
    scans = [estimate_phi(model, z, s, range(1, 17), 1000, S.child(2), pool, cfg) for s in (0.25, 0.5, 0.75)]
    return L, scans


class TestPhiDisordered:
    def test_bounds(self, setup):
        L, scans = setup
        for sc in scans:
            sig = math.hypot(sc.phi_stderr, sc.s * L.stderr)
            assert -sc.s * L.mean - 3 * sig <= sc.phi <= -sc.s * math.log(math.sqrt(2)) + 3 * sc.phi_stderr

    def test_non_increasing(self, setup):
        _, scans = setup
        for a, b in zip(scans, scans[1:]):
            assert b.phi <= a.phi + 3 * math.hypot(a.phi_stderr, b.phi_stderr)

    def test_metadata(self, setup):
        _, scans = setup
        sc = scans[0]
        assert sc.fit_from == 4 and len(sc.residuals) == 13
        lo, hi = sc.ci
        assert lo < sc.phi < hi
        assert not sc.heavy_tail_any


class TestPhiValidation:
    @pytest.mark.parametrize("s", [0.0, -0.5, 2.5])
    def test_exponent(self, s):
        with pytest.raises(InvalidExponent):
            estimate_phi(ModelSpec(2, 1), 1j, s, pool_config=TINY)

    def test_s_two_allowed(self):
        estimate_phi(ModelSpec(2, 1), 1j, 2.0, range(1, 8), 4, S, pool_config=TINY)

    def test_distances(self):
        with pytest.raises(UsageError):
            estimate_phi(ModelSpec(2, 1), 1j, 0.5, (1, 3, 2), 4, S, pool_config=TINY)
        with pytest.raises(UsageError):
            estimate_phi(ModelSpec(2, 1), 1j, 0.5, (1, 2, 4), 4, S, pool_config=TINY)

    def test_heavy_tail_rule(self):
        v = np.ones((1000, 2))
        v[0, 1] = 5000.0
        assert list(heavy_tail_flags(v)) == [False, True]


class TestFactorization:
    def test_free_identity_against_dense(self):
        """At lambda = 0 every off-path message is the free fixed point g; a
        finite tree with boundary K g on its leaves reproduces that exactly."""
        K, m, j, s = 2, 6, 3, 0.5
        model = ModelSpec(K, 1)
        for eta in (1e-1, 1e-2):
            z = complex(2.9, eta)
            rep = factorization_moment_ratios(model, 2.9, s, m, 20, S, (eta,), TINY, u_depth=j)
            g = free_gamma_scalar(2.9, K, eta)
            geo = TreeGeometry(K, m)
            U = np.zeros((geo.n_vertices, 1, 1))
            bnd = np.full((K**m, 1, 1), K * g)
            x = geo.index((0,) * m)
            u = geo.index((0,) * j)
            xm = geo.parent(x)
            up = geo.index((0,) * (j + 1))
            um = geo.parent(u)
            Gx = dense_resolvent_oracle(geo, U, z, bnd, deleted=[x])
            Gux = dense_resolvent_oracle(geo, U, z, bnd, deleted=[x, u])
            a = abs(Gx[0, xm]) ** s
            b = abs(Gux[0, um]) ** s
            c = abs(Gux[up, xm]) ** s
            r = rep.rungs[0]
            assert r.ratio_a == pytest.approx(a / (b * c), rel=1e-10)
            assert r.ratio_a == pytest.approx(abs(Gx[u, u]) ** s, rel=1e-10)
            Gxm = dense_resolvent_oracle(geo, U, z, bnd, deleted=[xm])
            G = dense_resolvent_oracle(geo, U, z, bnd)
            assert r.ratio_b1 == pytest.approx(a / abs(Gxm[0, geo.parent(xm)]) ** s, rel=1e-10)
            assert r.ratio_b2 == pytest.approx(abs(G[0, xm]) ** s / a, rel=1e-10)
            assert r.ratio_a_stderr == pytest.approx(0.0, abs=1e-12)

    def test_bounded_across_rungs(self):
        rep = factorization_moment_ratios(goe(lam=0.5), 2.9, 0.5, 6, 4000, S, pool_config=PoolConfig(2000, 200))
        assert len(rep.rungs) == 3
        for name in ("ratio_a", "ratio_b1", "ratio_b2"):
            assert rep.envelope(name) < 3
            assert np.all(rep.column(name) > 0)

    def test_matrix_case(self):
        model = goe(W=2, lam=0.3, A=np.diag([0.0, 4.0]))
        rep = factorization_moment_ratios(model, 2.9, 0.5, 6, 2000, S, pool_config=PoolConfig(1000, 100))
        a = rep.column("ratio_a")
        assert np.all((a > 1 / 50) & (a < 50))

    @pytest.mark.parametrize("s", [0.0, 1.0, 1.5])
    def test_exponent(self, s):
        with pytest.raises(InvalidExponent):
            factorization_moment_ratios(ModelSpec(2, 1), 0.0, s, pool_config=TINY)

    def test_path_length(self):
        with pytest.raises(UsageError):
            factorization_moment_ratios(ModelSpec(2, 1), 0.0, 0.5, depth=2, pool_config=TINY)
        with pytest.raises(UsageError):
            factorization_moment_ratios(ModelSpec(2, 1), 0.0, 0.5, depth=6, u_depth=5, pool_config=TINY)


class TestQuadform:
    def test_positive_and_stable_across_seeds(self):
        a = goe_quadform_lower_bound(2, 0.5, samples=100_000, rng=1)
        b = goe_quadform_lower_bound(2, 0.5, samples=100_000, rng=2)
        for est in (a, b):
            assert est.mean > 0 and est.stable
        assert abs(a.mean - b.mean) <= 3 * math.hypot(a.stderr, b.stderr)

    def test_orthogonal_vectors_positive(self):
        est = goe_quadform_lower_bound(2, 0.5, phi=[1, 0], psi=[0, 1], samples=100_000, rng=3)
        assert est.mean > 0 and est.stable

    def test_homogeneity(self):
        one = goe_quadform_lower_bound(3, 0.5, phi=[1, 0, 0], samples=50_000, rng=4)
        two = goe_quadform_lower_bound(3, 0.5, phi=[2, 0, 0], samples=50_000, rng=4)
        assert two.raw_mean == pytest.approx(2**0.5 * one.raw_mean, rel=1e-12)
        assert two.mean == pytest.approx(one.mean, rel=1e-12)

    def test_with_sigma(self):
        sigma = np.array([[1 + 0.5j, 0.2], [0.2, -1 + 0.1j]])
        est = goe_quadform_lower_bound(2, 0.5, sigma=sigma, samples=20_000, rng=5)
        assert est.stable

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            goe_quadform_lower_bound(2, 0.5, phi=[0, 0])

    def test_exponent(self):
        with pytest.raises(InvalidExponent):
            goe_quadform_lower_bound(2, 1.0)


class TestDecoupling:
    def test_constant(self):
        est = decoupling_ratio(lambda x: np.ones_like(x), 0.25, 0.5, samples=1000)
        assert est.ratio == 1.0

    def test_family_bounded(self):
        ratios = [decoupling_ratio(mobius(0, 1, 1, -c), 0.25, 0.5, 100_000, rng=i).ratio
                  for i, c in enumerate((-10, -3, 0, 3, 10))]
        assert all(np.isfinite(ratios)) and max(ratios) / min(ratios) < 10

    def test_two_variables(self):
        est = decoupling_ratio(lambda x, y: 1 / ((x - 1) * (y + 2) - 1), 0.25, 0.5, 100_000, n_vars=2)
        assert np.isfinite(est.ratio) and np.isfinite(est.moment_alpha) and np.isfinite(est.moment_beta)

    @pytest.mark.parametrize("alpha, beta", [(0.5, 0.25), (0.0, 0.5), (0.5, 1.0), (0.3, 0.3)])
    def test_invalid(self, alpha, beta):
        with pytest.raises(InvalidExponents):
            decoupling_ratio(lambda x: x, alpha, beta)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 0.45), st.floats(0.5, 0.95))
    def test_jensen(self, alpha, beta):
        # L^p norms increase with p, so the ratio is at least 1
        est = decoupling_ratio(mobius(1, 0, 1, 2), alpha, beta, 2000)
        assert est.ratio >= 1 - 1e-12

    def test_mobius(self):
        f = mobius(1, 2, 3, 4)
        assert f(1.0) == pytest.approx(3 / 7)


class TestSigma:
    def test_matches_dense(self):
        model = goe(W=2, lam=0.5, A=np.diag([0.0, 1.0]))
        z = 0.8 + 0.05j
        pool = prepare_pool(model, z, PoolConfig(200, 20), S)
        g = pool_backed_greens(pool, 3, S.child(9))
        G = dense_resolvent_oracle(g.geometry, g.potentials, z, boundary=g.boundary)
        for x in g.geometry.level(3)[:3]:
            sig = sigma_values(g, x)
            _, v = g.punctured_path_green(x)
            gx = np.conj(v) @ (g.potentials[x] - model.A) @ v
            pair = np.conj(v) @ block(G, x, x, 2) @ v
            assert pair == pytest.approx(1 / (gx - sig), rel=1e-9)

    def test_stable_across_eta(self):
        model = goe(W=2, lam=0.3, A=np.diag([0.0, 4.0]))
        res = [sigma_statistic(model, complex(2.9, eta), 3, 300, S.child(i), pool_config=PoolConfig(500, 50))
               for i, eta in enumerate((1e-1, 1e-2, 1e-3))]
        for r in res:
            assert np.isfinite(r.moment) and r.stderr < 0.2 * r.moment
        for a, b in zip(res, res[1:]):
            assert abs(a.moment - b.moment) <= 3 * math.hypot(a.stderr, b.stderr)
