import math

import numpy as np
import pytest

from fracperim import fracops
from fracperim import geometry as G
from fracperim.fields import radial_bump, tent, vector_field
from fracperim.kernel import make_context
from fracperim.oracles import golden
from fracperim.quadrature import QuadratureConfig

CTX2 = make_context(2, 0.5)


def _interval_perimeter(alpha):
    # 2 int_{-1}^{1} int_{|y| > 1} |x - y|^(-1-alpha) dy dx in closed form
    return 2.0 ** (3.0 - alpha) / (alpha * (1.0 - alpha))


def _halfline_local(alpha):
    # int_0^1 int_{-1}^0 |x - y|^(-1-alpha) dy dx in closed form
    return (2.0 - 2.0 ** (1.0 - alpha)) / (alpha * (1.0 - alpha))


def test_closed_form_agrees_with_symbolic_golden():
    assert _interval_perimeter(0.5) == pytest.approx(golden("perimeter_interval_m1_1").scalar, rel=1e-15)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_interval_perimeter(alpha):
    ctx = make_context(1, alpha)
    est = fracops.frac_perimeter(G.IntervalUnion(((-1.0, 1.0),)), None, ctx, QuadratureConfig(tol=1e-7))
    assert est.value == pytest.approx(_interval_perimeter(alpha), rel=1e-6)
    assert abs(est.value - _interval_perimeter(alpha)) <= est.abs_error_estimate


@pytest.mark.parametrize("alpha", [0.25, 0.5])
def test_local_perimeter_of_half_line(alpha):
    ctx = make_context(1, alpha)
    E = G.IntervalUnion(((0.0, math.inf),))
    A = G.IntervalUnion(((-1.0, 1.0),))
    est = fracops.frac_perimeter_local(E, A, ctx, QuadratureConfig(tol=1e-7))
    assert est.value == pytest.approx(_halfline_local(alpha), rel=1e-6)


def test_perimeter_monte_carlo_agrees_for_small_alpha():
    ctx = make_context(1, 0.25)
    E = G.IntervalUnion(((-1.0, 1.0),))
    mc = fracops.frac_perimeter(E, None, ctx, QuadratureConfig(mc_samples=400_000, seed=5), method="mc")
    assert abs(mc.value - _interval_perimeter(0.25)) <= 4 * mc.abs_error_estimate


def test_perimeter_relative_to_a_window_is_smaller():
    ctx = make_context(1, 0.5)
    E = G.IntervalUnion(((-1.0, 1.0),))
    cfg = QuadratureConfig(tol=1e-6)
    full = fracops.frac_perimeter(E, None, ctx, cfg)
    part = fracops.frac_perimeter(E, G.IntervalUnion(((0.0, 3.0),)), ctx, cfg)
    assert 0 < part.value < full.value


def test_perimeter_argument_checks():
    with pytest.raises(ValueError, match="bounded"):
        fracops.frac_perimeter(G.HalfSpace([0.0, 0.0], [0.0, 1.0]), None, CTX2, QuadratureConfig())
    with pytest.raises(ValueError, match="method"):
        fracops.frac_perimeter(G.Ball([0, 0], 1.0), None, CTX2, QuadratureConfig(), method="exact")
    with pytest.raises(ValueError, match="dimension|expected"):
        fracops.frac_gradient_set(G.Ball([0, 0, 0], 1.0), [2.0, 0.0, 0.0], CTX2, QuadratureConfig())


def test_interval_gradient_includes_mu():
    ctx = make_context(1, 0.5)
    est = fracops.frac_gradient_set(G.IntervalUnion(((0.0, 1.0),)), [-1.0], ctx, QuadratureConfig(tol=1e-9))
    ref = ctx.mu * golden("interval_0_1_tm1_raw").scalar
    assert float(np.ravel(est.value)[0]) == pytest.approx(ref, rel=1e-8)


def test_divergence_of_a_directed_field_is_a_directional_gradient():
    f = radial_bump([0.2, 0.1], 0.9)
    e = np.array([0.6, 0.8])
    x = [0.5, -0.3]
    cfg = QuadratureConfig(tol=1e-7)
    div = fracops.frac_divergence(vector_field(f, e), x, CTX2, cfg)
    grad = fracops.frac_gradient(f, x, CTX2, cfg)
    assert div.value == pytest.approx(float(e @ grad.value), abs=div.abs_error_estimate + grad.abs_error_estimate)
    with pytest.raises(ValueError, match="vector"):
        fracops.frac_divergence(f, x, CTX2, cfg)


def test_nl_divergence_matches_nl_gradient_contraction():
    E = G.Ball([0.0, 0.0], 1.0)
    f = radial_bump([0.5, 0.0], 0.8)
    e = np.array([0.0, 1.0])
    x = [0.4, 0.3]
    cfg = QuadratureConfig(tol=1e-6)
    nd = fracops.frac_nl_divergence(E, vector_field(f, e), x, CTX2, cfg)
    ng = fracops.frac_nl_gradient(E, f, x, CTX2, cfg)
    assert nd.value == pytest.approx(float(e @ ng.value), abs=nd.abs_error_estimate + ng.abs_error_estimate)


def test_nl_gradient_monte_carlo_agrees_with_quadrature():
    E = G.Ball([0.0, 0.0], 1.0)
    F = G.HalfSpace([0.0, 0.2], [0.0, 1.0])
    x = [1.4, 0.9]
    q = fracops.frac_nl_gradient(E, F, x, CTX2, QuadratureConfig(tol=1e-6))
    mc = fracops.frac_nl_gradient(E, F, x, CTX2, QuadratureConfig(), method="mc", samples=400_000, seed=11)
    assert np.all(np.abs(q.value - mc.value) <= 4 * mc.std_error + q.abs_error_estimate)


def test_field_gradient_far_from_support_decays():
    ctx = make_context(1, 0.5)
    f = tent(0.0, 1.0)
    cfg = QuadratureConfig(tol=1e-8)
    near = fracops.frac_gradient(f, [2.0], ctx, cfg)
    far = fracops.frac_gradient(f, [8.0], ctx, cfg)
    # far away the value tends to -mu (int f) x^(-1 - alpha), and the tent has unit mass
    assert abs(float(np.ravel(far.value)[0])) < abs(float(np.ravel(near.value)[0]))
    assert float(np.ravel(far.value)[0]) * 8.0**1.5 == pytest.approx(-ctx.mu * 1.0, rel=0.05)


def test_product_representation():
    B = G.Ball([0, 0], 1.0)
    H = G.HalfSpace([0, 0], [0, 1])
    assert isinstance(fracops.gradient_of_product(B, H), G.Intersection)
    f = radial_bump([0, 0], 1.0)
    masked = fracops.gradient_of_product(B, f)
    assert masked([0.5, 0.0]) == pytest.approx(f([0.5, 0.0]))
    assert masked([0.0, 1.5]) == 0.0
    assert fracops.value_at(B, np.array([[0.0, 0.0], [2.0, 0.0]])).tolist() == [1.0, 0.0]
