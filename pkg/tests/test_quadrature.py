import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracperim import geometry as G
from fracperim import oracles
from fracperim.fields import radial_bump
from fracperim.kernel import make_context
from fracperim.oracles import golden
from fracperim.quadrature import (BatchEstimate, MeasureEstimate, QuadratureConfig, RayTerms, adaptive_cubature,
                                  cube_rule, gauss_kronrod_1d, mc_singular_integral_set, ray_integral,
                                  singular_integral_field, singular_integral_set, singular_integral_set_batch,
                                  volume_integral)

CTX2 = make_context(2, 0.5)


def test_gauss_kronrod_exact_on_polynomials():
    x, wk, wg = gauss_kronrod_1d(15)
    for p in range(0, 22):
        exact = (1 - (-1) ** (p + 1)) / (p + 1)
        assert wk @ x**p == pytest.approx(exact, abs=1e-13)
        if p < 14:
            assert wg @ x**p == pytest.approx(exact, abs=1e-13)
    with pytest.raises(ValueError):
        gauss_kronrod_1d(9)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_cube_rule_weights_sum_to_one(d):
    r = cube_rule(d)
    assert r.wk.sum() == pytest.approx(1.0)
    assert r.wg.sum() == pytest.approx(1.0)
    assert np.all((r.nodes > 0) & (r.nodes < 1))


def test_adaptive_cubature_handles_endpoint_singularity_and_batches():
    # int_0^1 x^(-1/2) dx = 2 and int_0^1 x^2 dx = 1/3 as two tasks
    def f(task, pts):
        x = pts[:, 0]
        return np.where(task == 0, x**-0.5, x**2)[:, None]

    exact = np.array([2.0, 1.0 / 3.0])
    res = adaptive_cubature(f, [0, 1], np.zeros((2, 1)), np.ones((2, 1)), 2, 1, rel_tol=1e-5)
    assert np.all(res.converged)
    assert np.all(np.abs(res.value[:, 0] - exact) <= res.error + 1e-15)
    # bisection alone cannot reach 1e-10 on the singular task within the depth limit
    deep = adaptive_cubature(f, [0, 1], np.zeros((2, 1)), np.ones((2, 1)), 2, 1, rel_tol=1e-10, max_depth=30)
    assert deep.converged.tolist() == [False, True]
    assert np.all(np.abs(deep.value[:, 0] - exact) <= deep.error + 1e-15)


def test_adaptive_cubature_two_dimensional_and_reproducible():
    def f(task, pts):
        return np.exp(pts[:, 0] + 2 * pts[:, 1])[:, None]

    args = (f, [0], np.zeros((1, 2)), np.ones((1, 2)), 1, 1)
    a = adaptive_cubature(*args, rel_tol=1e-12)
    b = adaptive_cubature(*args, rel_tol=1e-12)
    assert a.value[0, 0] == pytest.approx((math.e - 1) * (math.e**2 - 1) / 2, rel=1e-12)
    assert a.value.tobytes() == b.value.tobytes()


@pytest.mark.parametrize("kwargs", [dict(tol=0), dict(tail_radius=-1), dict(base_cell=0), dict(max_depth=0),
                                    dict(mc_samples=1), dict(seed=-1)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        QuadratureConfig(**kwargs)


def test_measure_estimate_arithmetic():
    a = MeasureEstimate(np.array([1.0, 2.0]), 0.1, 10)
    b = MeasureEstimate(np.array([0.5, 0.5]), 0.2, 5, converged=False)
    c = a - b
    assert np.allclose(c.value, [0.5, 1.5])
    assert c.abs_error_estimate == pytest.approx(0.3)
    assert c.evaluations == 15 and not c.converged
    assert a.scaled(-2.0).abs_error_estimate == pytest.approx(0.2)
    assert a.magnitude == pytest.approx(math.sqrt(5))
    with pytest.raises(ValueError):
        MeasureEstimate(1.0, float("nan"), 1)
    be = BatchEstimate(np.array([[3.0]]), np.array([0.1]), 7, np.array([True]))
    assert be.item(0, squeeze=True).value == 3.0


def test_evaluation_on_the_boundary_is_refused():
    with pytest.raises(ValueError, match="boundary"):
        singular_integral_set(G.Ball([0, 0], 1.0), [1.0, 0.0], CTX2, QuadratureConfig())


@pytest.mark.parametrize("n", [1, 2, 3])
def test_halfspace_matches_closed_form(n):
    ctx = make_context(n, 0.5)
    nu = np.eye(n)[-1]
    x = np.full(n, 0.3)
    x[-1] = -0.7
    est = singular_integral_set(G.HalfSpace(np.zeros(n), nu), x, ctx, QuadratureConfig(tol=1e-7))
    ref = oracles.halfspace_gradient(np.zeros(n), nu, x, ctx) / ctx.mu
    assert np.allclose(est.value, ref, rtol=1e-6)
    assert np.linalg.norm(est.value - ref) <= est.abs_error_estimate + 1e-12


def test_ball_in_three_dimensions_matches_profile():
    ctx = make_context(3, 0.5)
    x = np.array([0.4, -0.9, 0.8])
    est = singular_integral_set(G.Ball(np.zeros(3), 1.0), x, ctx, QuadratureConfig(tol=1e-5))
    ref = oracles.ball_gradient(np.zeros(3), 1.0, x, ctx) / ctx.mu
    assert np.linalg.norm(est.value - ref) <= 1e-4 * np.linalg.norm(ref)


def test_engine_agrees_with_pooled_monte_carlo_reference():
    ref = np.array(golden("ball_mc_n2_a0.5").value)
    se = np.array(golden("ball_mc_se_n2_a0.5").value)
    est = singular_integral_set(G.Ball([0, 0], 1.0), [1.5, 0.7], CTX2, QuadratureConfig(tol=1e-6))
    assert np.all(np.abs(est.value - ref) <= 4 * se + est.abs_error_estimate)


def test_monte_carlo_engine_within_its_standard_error():
    cfg = QuadratureConfig(mc_samples=400_000, seed=7)
    mc = mc_singular_integral_set(G.Ball([0, 0], 1.0), [1.5, 0.7], CTX2, cfg)
    ref = np.array(golden("ball_mc_n2_a0.5").value)
    se = np.array(golden("ball_mc_se_n2_a0.5").value)
    assert np.all(np.abs(mc.value - ref) <= 4 * np.hypot(mc.std_error, se))
    again = mc_singular_integral_set(G.Ball([0, 0], 1.0), [1.5, 0.7], CTX2, cfg)
    assert again.value.tobytes() == mc.value.tobytes()


def test_field_integral_of_tent_matches_monte_carlo():
    from fracperim.fields import tent
    from fracperim.quadrature import mc_ray_integral

    ctx = make_context(1, 0.5)
    f = tent(0.0, 1.0)
    est = singular_integral_field(f, [2.0], ctx, QuadratureConfig(tol=1e-8))
    mc = mc_ray_integral(RayTerms(fields=(f,)), [2.0], 0.5, QuadratureConfig(mc_samples=400_000, seed=3))
    assert abs(float(np.ravel(est.value)[0]) - mc.value[0]) <= 4 * mc.std_error[0] + est.abs_error_estimate


def test_finite_tail_radius_adds_to_error_bar():
    E = G.Ball([0, 0], 1.0)
    full = singular_integral_set(E, [1.5, 0.7], CTX2, QuadratureConfig(tol=1e-6))
    cut = singular_integral_set(E, [1.5, 0.7], CTX2, QuadratureConfig(tol=1e-6, tail_radius=50.0))
    assert cut.abs_error_estimate >= 2 * math.pi * 50.0**-0.5 / 0.5
    assert np.allclose(cut.value, full.value, atol=1e-9)


def test_batch_matches_single_point_evaluation():
    E = G.square()
    X = np.array([[0.3, -0.4], [1.7, 0.2], [0.5, 0.5]])
    cfg = QuadratureConfig(tol=1e-6)
    batch = singular_integral_set_batch(E, X, CTX2, cfg)
    for i, x in enumerate(X):
        single = singular_integral_set(E, x, CTX2, cfg)
        assert np.linalg.norm(batch.value[i] - single.value) <= batch.error[i] + single.abs_error_estimate


@settings(max_examples=8, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.3, 3.0))
def test_translation_complement_and_scaling(vx, vy, lam):
    E = G.Union(G.Ball([0, 0], 1.0), G.square([0.5, -1.5], 1.0))
    x = np.array([1.8, 0.9])
    v = np.array([vx, vy])
    cfg = QuadratureConfig(tol=1e-6)
    base = singular_integral_set(E, x, CTX2, cfg)
    bar = base.abs_error_estimate
    moved = singular_integral_set(E.translated(v), x + v, CTX2, cfg)
    assert np.linalg.norm(moved.value - base.value) <= bar + moved.abs_error_estimate
    comp = singular_integral_set(G.Complement(E), x, CTX2, cfg)
    assert np.linalg.norm(comp.value + base.value) <= 2 * (bar + comp.abs_error_estimate)
    scaled = singular_integral_set(E.affine(np.zeros(2), lam), lam * x, CTX2, cfg)
    assert np.linalg.norm(scaled.value - lam**-0.5 * base.value) <= scaled.abs_error_estimate + lam**-0.5 * bar


def test_field_outside_support_reduces_to_constant_pieces():
    f = radial_bump([0.0, 0.0], 0.5)
    est = singular_integral_field(f, [3.0, 0.0], CTX2, QuadratureConfig(tol=1e-8))
    # far from the support the integral points towards the bump
    assert est.value[0] < 0 and abs(est.value[1]) < 1e-10


def test_volume_integral_with_boundary_blowup():
    cfg = QuadratureConfig(tol=1e-8)
    H = G.HalfSpace([0.0, 0.0], [0.0, 1.0])

    def g(p):
        return np.abs(p[:, 1]) ** -0.5

    est = volume_integral(g, G.Ball([0.0, 0.0], 1.0), cfg, singular=H, alpha=0.5, ncomp=1)
    assert float(np.ravel(est.value)[0]) == pytest.approx(golden("halfspace_ball_integral_n2_a0.5").scalar,
                                                            rel=1e-6)
    area = volume_integral(lambda p: np.ones(len(p)), G.Ball([1.0, 2.0], 2.0), cfg, ncomp=1)
    assert float(np.ravel(area.value)[0]) == pytest.approx(4 * math.pi, rel=1e-9)


def test_ray_terms_validation():
    f = radial_bump([0.0, 0.0], 1.0)
    with pytest.raises(ValueError, match="mode"):
        RayTerms(fields=(f,), mode="curl")
    with pytest.raises(ValueError, match="div"):
        RayTerms(fields=(f,), mode="div")
    with pytest.raises(ValueError, match="dimension"):
        RayTerms(sets=(G.Ball([0.0], 1.0),), fields=(f,))
    assert ray_integral(RayTerms(sets=(G.Ball([0, 0], 1.0),)), [[3.0, 0.0]], 0.5,
                        QuadratureConfig()).value.shape == (1, 2)
