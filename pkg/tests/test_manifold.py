"""Geometry kernels and the checked public API.

Expected constants were evaluated independently with mpmath closed forms.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ghy import manifold as M
from ghy.manifold import ManifoldError

SQRT3 = math.sqrt(3.0)


def ball_points(rng, n, d, K=1.0, max_dist=4.0):
    """Random Poincaré points within hyperbolic distance ``max_dist`` of the origin."""
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = rng.uniform(0, max_dist, (n, 1))
    return math.sqrt(K) * np.tanh(r / 2) * u


def vec2(max_norm=0.9):
    return arrays(np.float64, 2, elements=st.floats(-max_norm / 1.5, max_norm / 1.5))


class TestWorkedExamples:
    def test_minkowski_inner(self):
        y = np.array([2.0, SQRT3])
        assert M.minkowski_inner([1.0, 0.0], y) == pytest.approx(-2.0, abs=1e-15)
        assert M.minkowski_inner(y, y) == pytest.approx(-1.0, abs=1e-14)

    def test_lorentz_distance(self):
        d = M.lorentz_distance([1.0, 0.0], [2.0, SQRT3])
        assert d == pytest.approx(1.3169578969248167, abs=1e-12)

    def test_poincare_distance_from_origin(self):
        assert M.poincare_distance([0.0, 0.0], [0.5, 0.0]) == pytest.approx(1.0986122886681097, abs=1e-12)

    def test_poincare_distance_other_curvature(self):
        # K=2: 2 sqrt(K) artanh(|x| / sqrt(K))
        assert M.poincare_distance([0.0, 0.0], [0.5, 0.0], K=2.0) == pytest.approx(1.0451009147609598, abs=1e-12)

    def test_conformal_factor(self):
        assert M.conformal_factor([0.5, 0.0]) == pytest.approx(2.6666666666666667, abs=1e-14)

    def test_mobius_add(self):
        np.testing.assert_allclose(M.mobius_add([0.5, 0.0], [0.5, 0.0]), [0.8, 0.0], atol=1e-15)

    def test_exp_and_log_at_origin(self):
        out = M.exp_map([0.0, 0.0], [0.5, 0.0])
        np.testing.assert_allclose(out, [0.46211715726000976, 0.0], atol=1e-15)
        np.testing.assert_allclose(M.log_map([0.0, 0.0], out), [0.5, 0.0], atol=1e-12)

    def test_convert_to_lorentz(self):
        x = M.convert([0.5, 0.0], M.LORENTZ, source=M.POINCARE)
        np.testing.assert_allclose(x, [5 / 3, 4 / 3, 0.0], atol=1e-14)
        assert M.minkowski_inner(x, x) == pytest.approx(-1.0, abs=1e-12)

    def test_einstein_midpoint(self):
        mid = M.einstein_midpoint([[0.5, 0.0], [0.0, 0.0]], [1.0, 1.0])
        np.testing.assert_allclose(mid, [0.26794919243112271, 0.0], atol=1e-12)

    def test_project_poincare(self):
        np.testing.assert_allclose(M.project_to_manifold([2.0, 0.0], M.POINCARE), [0.99999, 0.0], atol=1e-15)

    def test_project_lorentz(self):
        np.testing.assert_allclose(M.project_to_manifold([0.0, 3.0, 4.0], M.LORENTZ),
                                   [5.0990195135927848, 3.0, 4.0], atol=1e-14)


class TestErrors:
    def test_outside_ball(self):
        with pytest.raises(ManifoldError):
            M.poincare_distance([0.0, 0.0], [1.5, 0.0])

    def test_off_hyperboloid(self):
        with pytest.raises(ManifoldError):
            M.lorentz_distance([1.0, 0.0], [1.0, 1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ManifoldError):
            M.poincare_distance([0.0, 0.0], [0.1, 0.0, 0.0])

    def test_bad_curvature(self):
        with pytest.raises(ValueError):
            M.poincare_distance([0.0, 0.0], [0.1, 0.0], K=-1.0)

    def test_project_rejects_nan(self):
        with pytest.raises(ManifoldError):
            M.project_to_manifold([np.nan, 0.0])

    def test_convert_needs_source(self):
        with pytest.raises(ValueError):
            M.convert([0.1, 0.0], M.LORENTZ)

    def test_midpoint_weights(self):
        with pytest.raises(ManifoldError):
            M.einstein_midpoint([[0.1, 0.0]], [1.0, 2.0])
        with pytest.raises(ManifoldError):
            M.einstein_midpoint([[0.1, 0.0]], [-1.0])


class TestRandomIdentities:
    @pytest.mark.parametrize("K", [0.5, 1.0, 3.0])
    def test_conversion_isometry(self, K):
        rng = np.random.default_rng(1)
        x, y = ball_points(rng, 500, 4, K), ball_points(rng, 500, 4, K)
        d_b = M.PoincareBall.dist(x, y, K)
        xl, yl = M.poincare_to_lorentz(x, K), M.poincare_to_lorentz(y, K)
        xk, yk = M.poincare_to_klein(x, K), M.poincare_to_klein(y, K)
        np.testing.assert_allclose(M.Lorentz.dist(xl, yl, K), d_b, atol=1e-9)
        np.testing.assert_allclose(M.Klein.dist(xk, yk, K), d_b, atol=1e-9)

    @pytest.mark.parametrize("model", [M.POINCARE, M.LORENTZ])
    def test_exp_log_roundtrip(self, model):
        rng = np.random.default_rng(2)
        k = M.get(model)
        base = ball_points(rng, 200, 3, max_dist=2.0)
        if model == M.LORENTZ:
            base = M.poincare_to_lorentz(base, 1.0)
        v = 0.5 * rng.standard_normal(base.shape)
        if model == M.LORENTZ:
            v = k.proj_tan(base, v, 1.0)
        back = k.logmap(base, k.expmap(base, v, 1.0), 1.0)
        np.testing.assert_allclose(back, v, atol=1e-8)

    def test_log_norm_is_distance(self):
        rng = np.random.default_rng(3)
        y = ball_points(rng, 300, 5)
        t = 2.0 * M.PoincareBall.logmap0(y, 1.0)  # metric at the origin is 4 I
        np.testing.assert_allclose(np.linalg.norm(t, axis=1),
                                   M.PoincareBall.dist(np.zeros_like(y), y, 1.0)[:, 0], atol=1e-9)

    def test_lorentz_log_is_tangent(self):
        rng = np.random.default_rng(4)
        x = M.poincare_to_lorentz(ball_points(rng, 100, 3), 1.0)
        y = M.poincare_to_lorentz(ball_points(rng, 100, 3), 1.0)
        v = M.Lorentz.logmap(x, y, 1.0)
        assert np.max(np.abs(M.Lorentz.minkowski(x, v))) < M.TOL_HYP

    def test_triangle_inequality(self):
        rng = np.random.default_rng(5)
        a, b, c = (ball_points(rng, 1000, 3) for _ in range(3))
        d = M.PoincareBall.dist
        assert np.all(d(a, c, 1.0) <= d(a, b, 1.0) + d(b, c, 1.0) + 1e-9)

    def test_parallel_transport_preserves_norm(self):
        rng = np.random.default_rng(6)
        x, y = ball_points(rng, 1, 3, max_dist=2)[0], ball_points(rng, 1, 3, max_dist=2)[0]
        v = rng.standard_normal(3)
        w = M.parallel_transport(x, y, v)
        assert M.tangent_norm(y, w) == pytest.approx(M.tangent_norm(x, v), rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(vec2(), vec2())
def test_mobius_left_cancellation(x, y):
    # (-x) + (x + y) = y
    z = M.PoincareBall.mobius_add(-x, M.PoincareBall.mobius_add(x, y, 1.0), 1.0)
    np.testing.assert_allclose(z, y, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(vec2(), vec2())
def test_distance_symmetric_and_nonnegative(x, y):
    d1, d2 = M.poincare_distance(x, y), M.poincare_distance(y, x)
    assert d1 >= 0
    assert d1 == pytest.approx(d2, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(vec2(), vec2())
def test_midpoint_symmetric(x, y):
    kx, ky = M.poincare_to_klein(x, 1.0), M.poincare_to_klein(y, 1.0)
    m1 = M.einstein_midpoint([kx, ky], [1.0, 1.0])
    m2 = M.einstein_midpoint([ky, kx], [1.0, 1.0])
    np.testing.assert_allclose(m1, m2, atol=1e-12)
    # equidistant from both endpoints
    assert M.klein_distance(m1, kx) == pytest.approx(M.klein_distance(m1, ky), abs=1e-8)
