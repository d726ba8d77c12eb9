import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracperim import geometry as G

coords = st.floats(-3, 3, allow_nan=False)


def _sets():
    return [
        G.HalfSpace([0.0, 0.0], [0.0, 1.0]),
        G.Ball([0.2, -0.1], 0.9),
        G.square(),
        G.Complement(G.Ball([0.0, 0.0], 1.0)),
        G.Union(G.Ball([0.0, 0.0], 1.0), G.Ball([1.5, 0.0], 0.7)),
        G.Intersection(G.Ball([0.0, 0.0], 1.0), G.HalfSpace([0.0, 0.2], [1.0, 0.0])),
        G.koch_prefractal(2),
    ]


def test_halfspace_requires_unit_normal():
    with pytest.raises(ValueError, match="unit"):
        G.HalfSpace([0.0, 0.0], [0.0, 2.0])


def test_ball_and_intervals_validate_input():
    with pytest.raises(ValueError):
        G.Ball([0.0, 0.0], 0.0)
    with pytest.raises(ValueError, match="increasing"):
        G.IntervalUnion(((0.0, 1.0), (0.5, 2.0)))
    with pytest.raises(ValueError):
        G.IntervalUnion(())
    with pytest.raises(ValueError, match="convex"):
        G.ConvexPolygon([[0, 0], [2, 0], [1, 0.2], [1, 2]])


def test_membership_three_way():
    B = G.Ball([0.0, 0.0], 1.0)
    assert G.membership(B, [0.5, 0.0]) is G.Membership.INSIDE
    assert G.membership(B, [1.0, 0.0]) is G.Membership.ON_BOUNDARY
    assert G.membership(B, [2.0, 0.0]) is G.Membership.OUTSIDE
    S = G.square()
    assert G.membership(S, [0.0, 0.0]) is G.Membership.ON_BOUNDARY
    assert G.membership(S, [0.5, 1.0]) is G.Membership.ON_BOUNDARY


def test_polygon_orientation_is_normalized():
    cw = G.Polygon([[0, 0], [0, 1], [1, 1], [1, 0]])
    v = cw.vertices
    area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
    assert area == pytest.approx(1.0)


def test_interval_union_membership_and_distance():
    E = G.IntervalUnion(((0.0, 1.0), (2.0, math.inf)))
    assert E.contains(np.array([[0.5], [1.5], [10.0]])).tolist() == [True, False, True]
    assert G.boundary_distance(E, [1.4]) == pytest.approx(0.4)


@settings(max_examples=40, deadline=None)
@given(st.lists(coords, min_size=2, max_size=2), st.floats(0, 2 * math.pi))
def test_ray_profile_agrees_with_pointwise_membership(x, angle):
    x = np.array(x)
    d = np.array([math.cos(angle), math.sin(angle)])
    t = np.linspace(0.013, 7.0, 61)
    for E in _sets():
        prof = E.ray_profile(x[None, :], d[None, :])
        idx = (prof.breaks[0][None, :] <= t[:, None]).sum(axis=1)
        along = prof.values[0][idx]
        pts = x[None, :] + t[:, None] * d[None, :]
        exact = E.contains(pts).astype(float)
        # points within rounding of a crossing may legitimately differ
        near = np.min(np.abs(t[:, None] - prof.breaks[0][None, :]), axis=1, initial=np.inf) < 1e-9
        assert np.all((along == exact) | near), type(E).__name__


@settings(max_examples=40, deadline=None)
@given(st.lists(coords, min_size=2, max_size=2))
def test_distance_is_a_lower_bound(x):
    x = np.array(x)
    rng = np.random.default_rng(0)
    for E in _sets():
        d = G.boundary_distance(E, x)
        if not math.isfinite(d) or d < 1e-12:
            continue
        # every point strictly inside the certified ball has the same membership
        u = rng.standard_normal((200, 2))
        u *= (0.999 * d * rng.random(200) ** 0.5 / np.linalg.norm(u, axis=1))[:, None]
        inside = E.contains(x[None, :] + u)
        assert np.all(inside == E.contains(x[None, :])[0]), type(E).__name__


def test_affine_maps_commute_with_membership():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-2, 2, (300, 2))
    shift, scale = np.array([0.3, -0.7]), 2.5
    for E in _sets():
        F = E.affine(shift, scale)
        assert np.array_equal(F.contains(shift + scale * pts), E.contains(pts)), type(E).__name__


def test_rescaled_blowup_of_ball_approaches_halfspace():
    B = G.Ball([0.0, 0.0], 1.0)
    x = np.array([1.0, 0.0])
    Br = B.rescaled(x, 1e-4)
    pts = np.array([[-0.5, 0.3], [0.5, -0.3]])
    assert Br.contains(pts).tolist() == [True, False]


def test_vertex_cone_of_square_is_quarter_plane():
    cone = G.vertex_cone(G.square(), 0)
    q = G.quarter_plane()
    pts = np.random.default_rng(2).uniform(-1, 1, (500, 2))
    assert np.array_equal(cone.contains(pts), q.contains(pts))


def test_koch_prefractal_structure():
    K = G.koch_prefractal(3)
    assert len(K.vertices) == 3 * 4**3
    with pytest.raises(ValueError, match="level"):
        G.koch_prefractal(7)
    # the snowflake contains its seed triangle's centroid
    assert G.membership(K, [0.5, math.sqrt(3) / 6]) is G.Membership.INSIDE


def test_angular_breaks_of_circle_are_tangents():
    B = G.Ball([0.0, 0.0], 1.0)
    ang = np.sort(G.angular_breaks(B, [[2.0, 0.0]])[0])
    half = math.asin(0.5)
    assert ang == pytest.approx(np.sort(np.mod([math.pi + half, math.pi - half], 2 * math.pi)))


def test_density_profile_classifies_points():
    S = G.square()
    radii = [0.1, 0.01, 0.001]
    assert G.density_profile(S, [0.5, 0.5], radii).classification == "density1"
    assert G.density_profile(S, [2.0, 0.5], radii).classification == "density0"
    rep = G.density_profile(S, [0.0, 0.0], radii, seed=3)
    assert rep.classification == "essential_boundary"
    assert rep.fractions[-1] == pytest.approx(0.25, abs=0.02)
    with pytest.raises(ValueError):
        G.density_profile(S, [0.0, 0.0], [0.1, 0.2])


@pytest.mark.parametrize("E", _sets()[:3] + [G.IntervalUnion(((0.0, 1.0), (1.3, 2.0)))], ids=type)
def test_tube_covers_the_boundary_neighbourhood(E):
    eps = 0.05
    T = G.tube(E, eps)
    rng = np.random.default_rng(4)
    pts = rng.uniform(-2, 3, (4000, E.n))
    near = E.distance(pts) < 0.99 * eps
    # points near the boundary lie in the tube (distance is a lower bound, so this is conservative)
    exact_near = np.array([G.boundary_distance(E, p) for p in pts[near]])
    assert np.all(T.contains(pts[near][exact_near < 0.99 * eps]))
