"""Exactly decidable sets: membership, boundary distance, ray casting.

Sets are small immutable trees.  Primitives are open half-spaces, open
balls, finite unions of open intervals (n = 1) and simple polygons (n = 2);
``Complement``, ``Intersection`` and ``Union`` combine them.

The workhorse for the integration engines is :meth:`SetSpec.ray_profile`,
which returns, for a batch of rays ``x + t*theta`` (``t > 0``), the exact
step function ``t -> chi_E(x + t*theta)`` as sorted breakpoints plus the
value on every piece.  Radial integrals of indicator functions then reduce
to sums over breakpoints.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

_RAY_EPS = 1e-14


class Membership(enum.Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    ON_BOUNDARY = "on_boundary"


# ---------------------------------------------------------------------------
# step functions along rays


@dataclass
class RayProfile:
    """Piecewise-constant function along a batch of rays.

    ``breaks`` has shape ``(m, k)``, ascending along each row and padded with
    ``+inf``; ``values`` has shape ``(m, k + 1)`` and ``values[:, j]`` is the
    value on ``[breaks[:, j-1], breaks[:, j])`` (with ``breaks[:, -1] = 0``).
    Pieces after padding carry the value of the last finite piece.
    """

    breaks: np.ndarray
    values: np.ndarray

    @property
    def start(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def size(self) -> int:
        return self.breaks.shape[0]


def _toggle_profile(cross: np.ndarray, start: np.ndarray) -> RayProfile:
    """Profile of a 0/1 function that flips at every finite crossing."""
    cross = np.sort(cross, axis=1)
    flips = np.cumsum(np.isfinite(cross), axis=1) % 2
    start = start.astype(float)
    values = np.concatenate([start[:, None], np.abs(start[:, None] - flips)], axis=1)
    return RayProfile(cross, values)


def _piece_midpoints(breaks: np.ndarray) -> np.ndarray:
    m, k = breaks.shape
    left = np.concatenate([np.zeros((m, 1)), breaks], axis=1)
    right = np.concatenate([breaks, np.full((m, 1), np.inf)], axis=1)
    mid = 0.5 * (left + right)
    first = np.isinf(right[:, 0])
    mid[:, 0] = np.where(first, 1.0, mid[:, 0])
    # unbounded last pieces: step one unit (or doubling) past the last break
    unbounded = np.isinf(right) & np.isfinite(left)
    mid = np.where(unbounded, 2.0 * left + 1.0, mid)
    # pieces entirely in the padding: reuse the last finite midpoint
    pad = np.isinf(left)
    if pad.any():
        mid = np.where(pad, np.nan, mid)
        mid = _ffill(mid)
    return mid


def _ffill(a: np.ndarray) -> np.ndarray:
    idx = np.where(np.isnan(a), 0, np.arange(a.shape[1]))
    np.maximum.accumulate(idx, axis=1, out=idx)
    return a[np.arange(a.shape[0])[:, None], idx]


def _profile_at(p: RayProfile, t: np.ndarray) -> np.ndarray:
    """Values of ``p`` at parameters ``t`` of shape ``(m, j)``."""
    if p.breaks.shape[1] == 0:
        return np.repeat(p.values[:, :1], t.shape[1], axis=1)
    idx = (p.breaks[:, None, :] <= t[:, :, None]).sum(axis=2)
    return np.take_along_axis(p.values, idx, axis=1)


def compact_profile(p: RayProfile) -> RayProfile:
    """Drop breakpoints where the value does not change and trim padding."""
    if p.breaks.shape[1] == 0:
        return p
    change = (p.values[:, 1:] != p.values[:, :-1]) & np.isfinite(p.breaks)
    key = np.where(change, p.breaks, np.inf)
    order = np.argsort(key, axis=1, kind="stable")
    breaks = np.take_along_axis(key, order, axis=1)
    nxt = np.take_along_axis(p.values[:, 1:], order, axis=1)
    last = p.values[:, -1:]
    values = np.concatenate([p.values[:, :1], np.where(np.isfinite(breaks), nxt, last)], axis=1)
    keep = np.isfinite(breaks).any(axis=0)
    ncol = int(keep.sum()) if keep.any() else 0
    return RayProfile(breaks[:, :ncol], values[:, : ncol + 1])


def merge_profiles(profiles: Sequence[RayProfile], op) -> RayProfile:
    """Combine step functions pointwise with ``op(list_of_value_arrays)``."""
    breaks = np.sort(np.concatenate([p.breaks for p in profiles], axis=1), axis=1)
    mid = _piece_midpoints(breaks)
    vals = [_profile_at(p, mid) for p in profiles]
    return RayProfile(breaks, np.asarray(op(vals), dtype=float))


def union_breaks(profiles: Sequence[RayProfile]) -> np.ndarray:
    return np.sort(np.concatenate([p.breaks for p in profiles], axis=1), axis=1)


def clip_profile(p: RayProfile, radius: float) -> RayProfile:
    """Restrict to ``t < radius`` (value 0 beyond, relative to the start value)."""
    breaks = np.where(p.breaks < radius, p.breaks, np.inf)
    breaks = np.concatenate([breaks, np.full((p.size, 1), radius)], axis=1)
    order = np.argsort(breaks, axis=1, kind="stable")
    breaks = np.take_along_axis(breaks, order, axis=1)
    mid = _piece_midpoints(breaks)
    values = _profile_at(p, mid)
    values = np.where(mid > radius, p.start[:, None], values)
    return RayProfile(breaks, values)


# ---------------------------------------------------------------------------
# set specifications


class SetSpec:
    """Base class; concrete sets are frozen dataclasses."""

    n: int

    # vectorized primitives -------------------------------------------------
    def contains(self, points) -> np.ndarray:
        raise NotImplementedError

    def on_boundary(self, points) -> np.ndarray:
        raise NotImplementedError

    def distance(self, points) -> np.ndarray:
        """Certified lower bound on the distance to the topological boundary."""
        raise NotImplementedError

    def ray_profile(self, origins, dirs) -> RayProfile:
        raise NotImplementedError

    def affine(self, shift, scale: float) -> "SetSpec":
        """Image under ``y -> scale * y + shift``."""
        raise NotImplementedError

    def bounding_ball(self):
        """``(center, radius)`` of a ball containing the set, or ``None``."""
        return None

    def complexity(self) -> int:
        """Rough cost of one ray cast, used to size evaluation chunks."""
        return 1

    def primitives(self) -> list:
        return [self]

    # structure used for angular breakpoints (n = 2)
    def curves(self) -> list:
        return []

    def corners(self) -> np.ndarray:
        return np.zeros((0, self.n))

    # conveniences -------------------------------------------------------------
    def rescaled(self, x, r: float) -> "SetSpec":
        """The blow-up ``(E - x) / r``."""
        x = np.asarray(x, dtype=float)
        return self.affine(-x / r, 1.0 / r)

    def translated(self, v) -> "SetSpec":
        return self.affine(np.asarray(v, dtype=float), 1.0)

    def __invert__(self):
        return Complement(self)

    def __and__(self, other):
        return Intersection(self, other)

    def __or__(self, other):
        return Union(self, other)


def _pts(points, n) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p.reshape(1, n) if n > 1 or p.size == 1 else p.reshape(-1, 1)
    if p.shape[-1] != n:
        raise ValueError(f"expected points of dimension {n}, got shape {p.shape}")
    return p


def _vec(v, n=None) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if n is not None and a.shape != (n,):
        raise ValueError(f"expected a {n}-vector, got {v!r}")
    return a


@dataclass(frozen=True, eq=False)
class HalfSpace(SetSpec):
    """Open half-space ``{y : (y - x0) . nu > 0}`` with unit normal ``nu``."""

    x0: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        x0 = _vec(self.x0)
        nu = _vec(self.nu, x0.size)
        norm = float(np.linalg.norm(nu))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"HalfSpace normal must be a unit vector, |nu| = {norm}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "nu", nu / norm)

    @property
    def n(self):
        return self.x0.size

    def signed(self, points):
        return (_pts(points, self.n) - self.x0) @ self.nu

    def contains(self, points):
        return self.signed(points) > 0

    def on_boundary(self, points):
        return self.signed(points) == 0

    def distance(self, points):
        return np.abs(self.signed(points))

    def ray_profile(self, origins, dirs):
        s0 = (origins - self.x0) @ self.nu
        dn = dirs @ self.nu
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -s0 / dn
        tol = _RAY_EPS * np.maximum(1.0, np.abs(s0))
        t = np.where((t > tol) & np.isfinite(t), t, np.inf)
        # crossings closer than tol are absorbed into the origin
        start = s0 + tol * dn > 0
        return _toggle_profile(t[:, None], start)

    def affine(self, shift, scale):
        return HalfSpace(scale * self.x0 + _vec(shift, self.n), self.nu)

    def curves(self):
        if self.n != 2:
            return []
        d = np.array([-self.nu[1], self.nu[0]])
        return [("line", self.x0.copy(), d)]


@dataclass(frozen=True, eq=False)
class Ball(SetSpec):
    """Open ball ``B_r(x0)``."""

    x0: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, "x0", _vec(self.x0))
        if not self.r > 0:
            raise ValueError(f"Ball radius must be positive, got {self.r}")
        object.__setattr__(self, "r", float(self.r))

    @property
    def n(self):
        return self.x0.size

    def _rho(self, points):
        d = _pts(points, self.n) - self.x0
        return np.sqrt(np.einsum("ij,ij->i", d, d))

    def contains(self, points):
        return self._rho(points) < self.r

    def on_boundary(self, points):
        return self._rho(points) == self.r

    def distance(self, points):
        return np.abs(self._rho(points) - self.r)

    def ray_profile(self, origins, dirs):
        w = origins - self.x0
        b = np.einsum("ij,ij->i", dirs, w)
        rho = np.sqrt(np.einsum("ij,ij->i", w, w))
        q = (rho - self.r) * (rho + self.r)
        disc = b * b - q
        real = disc > 0
        sq = np.sqrt(np.where(real, disc, 0.0))
        qq = -(b + np.copysign(sq, b))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = qq
            r2 = np.where(qq != 0, q / qq, 0.0)
        lo = np.minimum(r1, r2)
        hi = np.maximum(r1, r2)
        tol = _RAY_EPS * np.maximum(1.0, rho)
        # the ray is inside on (lo, hi); crossings closer than tol are absorbed into the origin
        start = real & (lo <= tol) & (hi > tol)
        lo = np.where(real & (lo > tol), lo, np.inf)
        hi = np.where(real & (hi > tol), hi, np.inf)
        return _toggle_profile(np.stack([lo, hi], axis=1), start)

    def affine(self, shift, scale):
        return Ball(scale * self.x0 + _vec(shift, self.n), abs(scale) * self.r)

    def bounding_ball(self):
        return self.x0.copy(), self.r

    def curves(self):
        return [("circle", self.x0.copy(), self.r)] if self.n == 2 else []


@dataclass(frozen=True, eq=False)
class IntervalUnion(SetSpec):
    """Union of disjoint open intervals on the line (n = 1).

    ``endpoints`` is a sequence of pairs ``(a_k, b_k)`` with
    ``a_1 < b_1 < a_2 < ...``; the first ``a`` may be ``-inf`` and the last
    ``b`` may be ``+inf``.
    """

    endpoints: tuple

    def __post_init__(self):
        pairs = tuple((float(a), float(b)) for a, b in self.endpoints)
        flat = [v for ab in pairs for v in ab]
        if not pairs:
            raise ValueError("IntervalUnion needs at least one interval")
        if any(not flat[i] < flat[i + 1] for i in range(len(flat) - 1)):
            raise ValueError(f"IntervalUnion endpoints must be strictly increasing: {flat}")
        if any(math.isinf(v) for v in flat[1:-1]):
            raise ValueError("only the outermost endpoints may be infinite")
        object.__setattr__(self, "endpoints", pairs)

    n = 1

    @property
    def _finite(self):
        return np.array([v for ab in self.endpoints for v in ab if math.isfinite(v)])

    def contains(self, points):
        t = _pts(points, 1)[:, 0]
        out = np.zeros(t.shape, dtype=bool)
        for a, b in self.endpoints:
            out |= (t > a) & (t < b)
        return out

    def on_boundary(self, points):
        t = _pts(points, 1)[:, 0]
        return np.isin(t, self._finite)

    def distance(self, points):
        t = _pts(points, 1)[:, 0]
        e = self._finite
        if e.size == 0:
            return np.full(t.shape, np.inf)
        return np.abs(t[:, None] - e[None, :]).min(axis=1)

    def ray_profile(self, origins, dirs):
        t = (self._finite[None, :] - origins[:, :1]) * dirs[:, :1]
        t = np.where(t > _RAY_EPS * np.maximum(1.0, np.abs(origins[:, :1])), t, np.inf)
        t = np.sort(t, axis=1)
        mid = _piece_midpoints(t)
        vals = self.contains((origins[:, None, :1] + mid[:, :, None] * dirs[:, None, :1]).reshape(-1, 1))
        return compact_profile(RayProfile(t, vals.reshape(mid.shape).astype(float)))

    def affine(self, shift, scale):
        s = float(_vec(shift, 1)[0])
        pairs = [(scale * a + s, scale * b + s) for a, b in self.endpoints]
        if scale < 0:
            pairs = [(b, a) for a, b in reversed(pairs)]
        return IntervalUnion(tuple(pairs))

    def bounding_ball(self):
        lo, hi = self.endpoints[0][0], self.endpoints[-1][1]
        if math.isinf(lo) or math.isinf(hi):
            return None
        return np.array([(lo + hi) / 2]), (hi - lo) / 2


def _as_vertices(vertices) -> np.ndarray:
    v = np.asarray([[float(Fraction(c)) if isinstance(c, str) else float(c) for c in p] for p in vertices])
    if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
        raise ValueError("a polygon needs at least 3 planar vertices")
    if np.allclose(v[0], v[-1]):
        v = v[:-1]
    return v


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True, eq=False)
class Polygon(SetSpec):
    """Interior of a simple closed polyline (n = 2); stored counter-clockwise."""

    vertices: np.ndarray

    def __post_init__(self):
        v = _as_vertices(self.vertices)
        if _signed_area(v) < 0:
            v = v[::-1].copy()
        object.__setattr__(self, "vertices", v)

    n = 2

    @property
    def edges(self):
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def contains(self, points):
        p = _pts(points, 2)
        return (_winding(p, *self.edges) != 0) & ~self.on_boundary(p)

    def on_boundary(self, points):
        p = _pts(points, 2)
        a, b = self.edges
        out = np.zeros(len(p), dtype=bool)
        for i in range(len(a)):
            e = b[i] - a[i]
            w = p - a[i]
            cross = e[0] * w[:, 1] - e[1] * w[:, 0]
            dot = w @ e
            out |= (cross == 0) & (dot >= 0) & (dot <= e @ e)
        return out

    def distance(self, points):
        p = _pts(points, 2)
        a, b = self.edges
        return _segment_distance(p, a, b)

    def ray_profile(self, origins, dirs):
        a, b = self.edges
        e = b - a  # (E, 2)
        w = a[None, :, :] - origins[:, None, :]  # (m, E, 2)
        den = dirs[:, None, 0] * e[None, :, 1] - dirs[:, None, 1] * e[None, :, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (w[..., 0] * e[None, :, 1] - w[..., 1] * e[None, :, 0]) / den
            s = (w[..., 0] * dirs[:, None, 1] - w[..., 1] * dirs[:, None, 0]) / den
        scale = np.maximum(1.0, np.abs(origins).max(axis=1))[:, None]
        ok = (den != 0) & (s >= 0) & (s <= 1) & (t > _RAY_EPS * scale)
        t = np.sort(np.where(ok, t, np.inf), axis=1)
        keep = np.isfinite(t).any(axis=0)
        t = t[:, : int(keep.sum())] if keep.any() else t[:, :0]
        # parity toggling is exact unless the ray touches a vertex, runs
        # along an edge or starts on the boundary
        edge_s = np.where(ok, s, 0.5)
        touch = ((edge_s == 0) | (edge_s == 1)).any(axis=1) | ((den == 0) & (np.abs(
            w[..., 0] * dirs[:, None, 1] - w[..., 1] * dirs[:, None, 0]) == 0)).any(axis=1)
        if t.shape[1] > 1:
            with np.errstate(invalid="ignore"):
                gaps = np.diff(t, axis=1)
            touch |= (gaps <= 1e-12 * np.maximum(1.0, t[:, :-1])).any(axis=1)
        on_b = self.on_boundary(origins)
        # value just past the absorption radius of near-origin crossings
        start = self.contains(origins + _RAY_EPS * scale * dirs)
        prof = _toggle_profile(t, start)
        slow = touch | on_b
        if slow.any():
            mid = _piece_midpoints(t[slow])
            q = origins[slow][:, None, :] + mid[:, :, None] * dirs[slow][:, None, :]
            prof.values[slow] = self.contains(q.reshape(-1, 2)).reshape(mid.shape).astype(float)
        return compact_profile(prof)

    def complexity(self):
        return len(self.vertices)

    def affine(self, shift, scale):
        return Polygon(scale * self.vertices + _vec(shift, 2))

    def bounding_ball(self):
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        c = 0.5 * (lo + hi)
        return c, float(np.sqrt(((self.vertices - c) ** 2).sum(axis=1)).max())

    def curves(self):
        a, b = self.edges
        return [("segment", a[i].copy(), b[i].copy()) for i in range(len(a))]

    def corners(self):
        return self.vertices.copy()


class ConvexPolygon(Polygon):
    """Convex polygon; validated on construction."""

    def __post_init__(self):
        super().__post_init__()
        v = self.vertices
        d1 = np.roll(v, -1, axis=0) - v
        d2 = np.roll(d1, -1, axis=0)
        if np.any(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0):
            raise ValueError("vertices do not describe a convex polygon")


def _winding(p, a, b) -> np.ndarray:
    wn = np.zeros(len(p), dtype=int)
    for i in range(len(a)):
        ax, ay = a[i]
        bx, by = b[i]
        left = (bx - ax) * (p[:, 1] - ay) - (p[:, 0] - ax) * (by - ay)
        up = (ay <= p[:, 1]) & (by > p[:, 1]) & (left > 0)
        down = (ay > p[:, 1]) & (by <= p[:, 1]) & (left < 0)
        wn += up.astype(int) - down.astype(int)
    return wn


def _segment_distance(p, a, b) -> np.ndarray:
    out = np.full(len(p), np.inf)
    for i in range(len(a)):
        e = b[i] - a[i]
        ee = float(e @ e)
        w = p - a[i]
        t = np.clip((w @ e) / ee, 0.0, 1.0)
        d = w - t[:, None] * e
        out = np.minimum(out, np.sqrt(np.einsum("ij,ij->i", d, d)))
    return out


@dataclass(frozen=True, eq=False)
class Complement(SetSpec):
    inner: SetSpec

    @property
    def n(self):
        return self.inner.n

    def contains(self, points):
        p = _pts(points, self.n)
        return ~self.inner.contains(p) & ~self.inner.on_boundary(p)

    def on_boundary(self, points):
        return self.inner.on_boundary(points)

    def distance(self, points):
        return self.inner.distance(points)

    def ray_profile(self, origins, dirs):
        p = self.inner.ray_profile(origins, dirs)
        return RayProfile(p.breaks, 1.0 - p.values)

    def affine(self, shift, scale):
        return Complement(self.inner.affine(shift, scale))

    def curves(self):
        return self.inner.curves()

    def complexity(self):
        return self.inner.complexity()

    def primitives(self):
        return self.inner.primitives()

    def corners(self):
        return self.inner.corners()


@dataclass(frozen=True, eq=False)
class _Binary(SetSpec):
    a: SetSpec
    b: SetSpec

    def __post_init__(self):
        if self.a.n != self.b.n:
            raise ValueError("cannot combine sets of different dimension")

    @property
    def n(self):
        return self.a.n

    def on_boundary(self, points):
        return self.a.on_boundary(points) | self.b.on_boundary(points)

    def distance(self, points):
        return np.minimum(self.a.distance(points), self.b.distance(points))

    def curves(self):
        return self.a.curves() + self.b.curves()

    def complexity(self):
        return self.a.complexity() + self.b.complexity() + 1

    def primitives(self):
        return self.a.primitives() + self.b.primitives()

    def corners(self):
        pts = [self.a.corners(), self.b.corners()]
        if self.n == 2:
            for ca in self.a.curves():
                for cb in self.b.curves():
                    x = _intersect_curves(ca, cb)
                    if len(x):
                        pts.append(np.asarray(x))
        return np.concatenate(pts, axis=0) if pts else np.zeros((0, self.n))


class Intersection(_Binary):
    def contains(self, points):
        return self.a.contains(points) & self.b.contains(points)

    def ray_profile(self, origins, dirs):
        pa = self.a.ray_profile(origins, dirs)
        pb = self.b.ray_profile(origins, dirs)
        return compact_profile(merge_profiles([pa, pb], lambda v: np.minimum(v[0], v[1])))

    def affine(self, shift, scale):
        return Intersection(self.a.affine(shift, scale), self.b.affine(shift, scale))

    def bounding_ball(self):
        balls = [bb for bb in (self.a.bounding_ball(), self.b.bounding_ball()) if bb is not None]
        return min(balls, key=lambda bb: bb[1]) if balls else None


class Union(_Binary):
    def contains(self, points):
        return self.a.contains(points) | self.b.contains(points)

    def ray_profile(self, origins, dirs):
        pa = self.a.ray_profile(origins, dirs)
        pb = self.b.ray_profile(origins, dirs)
        return compact_profile(merge_profiles([pa, pb], lambda v: np.maximum(v[0], v[1])))

    def affine(self, shift, scale):
        return Union(self.a.affine(shift, scale), self.b.affine(shift, scale))

    def bounding_ball(self):
        ba, bb = self.a.bounding_ball(), self.b.bounding_ball()
        if ba is None or bb is None:
            return None
        c = 0.5 * (ba[0] + bb[0])
        return c, max(np.linalg.norm(ba[0] - c) + ba[1], np.linalg.norm(bb[0] - c) + bb[1])


@dataclass(frozen=True, eq=False)
class WholeSpace(SetSpec):
    """All of R^n (the complement of the empty set)."""

    n: int

    def contains(self, points):
        return np.ones(len(_pts(points, self.n)), dtype=bool)

    def on_boundary(self, points):
        return np.zeros(len(_pts(points, self.n)), dtype=bool)

    def distance(self, points):
        return np.full(len(_pts(points, self.n)), np.inf)

    def ray_profile(self, origins, dirs):
        return RayProfile(np.zeros((len(origins), 0)), np.ones((len(origins), 1)))

    def affine(self, shift, scale):
        return self


@dataclass(frozen=True, eq=False)
class EmptySet(SetSpec):
    n: int

    def contains(self, points):
        return np.zeros(len(_pts(points, self.n)), dtype=bool)

    def on_boundary(self, points):
        return np.zeros(len(_pts(points, self.n)), dtype=bool)

    def distance(self, points):
        return np.full(len(_pts(points, self.n)), np.inf)

    def ray_profile(self, origins, dirs):
        return RayProfile(np.zeros((len(origins), 0)), np.zeros((len(origins), 1)))

    def affine(self, shift, scale):
        return self

    def bounding_ball(self):
        return np.zeros(self.n), 0.0


# ---------------------------------------------------------------------------
# curve intersections (n = 2), used for angular breakpoints


def _intersect_curves(c1, c2) -> list:
    k1, k2 = c1[0], c2[0]
    if k1 == "circle" and k2 != "circle":
        return _intersect_curves(c2, c1)
    if k1 == "circle" and k2 == "circle":
        return _circle_circle(c1[1], c1[2], c2[1], c2[2])
    if k2 == "circle":
        p, d, lo, hi = _as_param_line(c1)
        return [q for q, t in _line_circle(p, d, c2[1], c2[2]) if lo <= t <= hi]
    p1, d1, lo1, hi1 = _as_param_line(c1)
    p2, d2, lo2, hi2 = _as_param_line(c2)
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if den == 0:
        return []
    w = p2 - p1
    t = (w[0] * d2[1] - w[1] * d2[0]) / den
    s = (w[0] * d1[1] - w[1] * d1[0]) / den
    if lo1 <= t <= hi1 and lo2 <= s <= hi2:
        return [p1 + t * d1]
    return []


def _as_param_line(c):
    if c[0] == "line":
        return c[1], c[2], -np.inf, np.inf
    return c[1], c[2] - c[1], 0.0, 1.0


def _line_circle(p, d, c, r):
    w = p - c
    a = d @ d
    b = w @ d
    q = w @ w - r * r
    disc = b * b - a * q
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    return [(p + t * d, t) for t in ((-b - sq) / a, (-b + sq) / a)]


def _circle_circle(c1, r1, c2, r2):
    d = float(np.linalg.norm(c2 - c1))
    if d == 0 or d > r1 + r2 or d < abs(r1 - r2):
        return []
    a = (r1 * r1 - r2 * r2 + d * d) / (2 * d)
    h = math.sqrt(max(r1 * r1 - a * a, 0.0))
    u = (c2 - c1) / d
    m = c1 + a * u
    perp = np.array([-u[1], u[0]])
    return [m + h * perp, m - h * perp]


def angular_breaks(E: SetSpec, points) -> np.ndarray:
    """Angles (n = 2) of directions in which the ray profile from each point
    changes structure: tangents to circles, directions parallel to lines and
    directions towards corners.  Returns shape ``(m, k)`` padded with NaN."""
    p = _pts(points, 2)
    cols = []
    for c in E.curves():
        if c[0] == "circle":
            w = c[1][None, :] - p
            dist = np.sqrt(np.einsum("ij,ij->i", w, w))
            base = np.arctan2(w[:, 1], w[:, 0])
            with np.errstate(invalid="ignore", divide="ignore"):
                half = np.arcsin(np.where(dist > c[2], c[2] / dist, np.nan))
            cols += [base + half, base - half]
        elif c[0] == "line":
            ang = math.atan2(c[2][1], c[2][0])
            cols += [np.full(len(p), ang), np.full(len(p), ang + math.pi)]
    corners = E.corners()
    if len(corners):
        w = corners[None, :, :] - p[:, None, :]
        ang = np.arctan2(w[..., 1], w[..., 0])
        cols.append(ang.T)
    if not cols:
        return np.zeros((len(p), 0))
    out = np.vstack([np.atleast_2d(c) for c in cols]).T
    return np.mod(out, 2 * math.pi)


def crossing_points(sets: Sequence[SetSpec]) -> np.ndarray:
    """Intersections (n = 2) between boundary curves of different sets.

    Rays towards these points change structure when several sets enter a
    product, so they are added to the angular breakpoints.
    """
    pts = []
    for i, a in enumerate(sets):
        for b in sets[i + 1:]:
            if a is b:
                continue
            for ca in a.curves():
                for cb in b.curves():
                    x = _intersect_curves(ca, cb)
                    if len(x):
                        pts.append(np.asarray(x, dtype=float).reshape(-1, 2))
    return np.concatenate(pts, axis=0) if pts else np.zeros((0, 2))


# ---------------------------------------------------------------------------
# public helpers


def membership(E: SetSpec, x) -> Membership:
    """Exact three-way classification of a single point."""
    p = _pts(x, E.n)[:1]
    if E.on_boundary(p)[0]:
        return Membership.ON_BOUNDARY
    return Membership.INSIDE if E.contains(p)[0] else Membership.OUTSIDE


def boundary_distance(E: SetSpec, x) -> float:
    """Certified lower bound on ``dist(x, boundary of E)`` for one point."""
    return float(E.distance(_pts(x, E.n)[:1])[0])


def square(lower=(0, 0), side=1.0) -> Polygon:
    x, y = (float(c) for c in lower)
    s = float(side)
    return ConvexPolygon(np.array([[x, y], [x + s, y], [x + s, y + s], [x, y + s]]))


def quarter_plane(vertex=(0.0, 0.0)) -> SetSpec:
    """The cone ``{y1 > v1, y2 > v2}`` (the blow-up of a square at a vertex)."""
    v = np.asarray(vertex, dtype=float)
    return Intersection(HalfSpace(v, [1.0, 0.0]), HalfSpace(v, [0.0, 1.0]))


def vertex_cone(P: Polygon, index: int) -> SetSpec:
    """Tangent cone of a polygon at one of its vertices."""
    v = P.vertices
    k = len(v)
    p, prev, nxt = v[index], v[(index - 1) % k], v[(index + 1) % k]
    e_in, e_out = p - prev, nxt - p
    # inner normals of the two edges (polygon is counter-clockwise)
    n_in = np.array([-e_in[1], e_in[0]]) / np.linalg.norm(e_in)
    n_out = np.array([-e_out[1], e_out[0]]) / np.linalg.norm(e_out)
    convex = e_in[0] * e_out[1] - e_in[1] * e_out[0] > 0
    h1, h2 = HalfSpace(p, n_in), HalfSpace(p, n_out)
    return Intersection(h1, h2) if convex else Union(h1, h2)


def koch_prefractal(level: int) -> Polygon:
    """Koch snowflake prefractal: unit equilateral triangle refined ``level`` times."""
    if isinstance(level, bool) or int(level) != level or not 0 <= level <= 6:
        raise ValueError(f"level out of range: expected 0 <= level <= 6, got {level!r}")
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
    rot = np.array([[0.5, math.sqrt(3) / 2], [-math.sqrt(3) / 2, 0.5]])  # -60 degrees
    for _ in range(int(level)):
        a = pts
        b = np.roll(pts, -1, axis=0)
        d = (b - a) / 3.0
        p1 = a + d
        p3 = a + 2 * d
        p2 = p1 + d @ rot.T  # bump to the right of a counter-clockwise edge
        pts = np.stack([a, p1, p2, p3], axis=1).reshape(-1, 2)
    return Polygon(pts)


@dataclass(frozen=True)
class DensityReport:
    point: np.ndarray
    radii: tuple
    fractions: tuple
    std_errors: tuple
    classification: str


def density_profile(E: SetSpec, x, radii, samples_per_radius: int = 20000, seed=0,
                    thresholds=(0.01, 0.99)) -> DensityReport:
    """Monte Carlo estimates of ``|E cap B_r(x)| / |B_r(x)|`` along ``radii``."""
    radii = [float(r) for r in radii]
    if not radii:
        raise ValueError("density_profile needs at least one radius")
    if any(r <= 0 for r in radii) or any(a <= b for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be positive and strictly decreasing")
    x = _vec(x, E.n)
    rng = np.random.default_rng(seed)
    fractions, errors = [], []
    for r in radii:
        u = _uniform_ball(rng, samples_per_radius, E.n)
        hit = E.contains(x + r * u).astype(float)
        f = float(hit.mean())
        fractions.append(f)
        errors.append(float(hit.std(ddof=1) / math.sqrt(len(hit))) if len(hit) > 1 else 0.0)
    lo, hi = thresholds
    last = fractions[-1]
    if last < lo:
        cls = "density0"
    elif last > hi:
        cls = "density1"
    elif lo + 3 * errors[-1] < last < hi - 3 * errors[-1]:
        cls = "essential_boundary"
    else:
        cls = "inconclusive"
    return DensityReport(x, tuple(radii), tuple(fractions), tuple(errors), cls)


def _uniform_ball(rng, m, n):
    g = rng.standard_normal((m, n))
    g /= np.linalg.norm(g, axis=1)[:, None]
    return g * rng.random(m)[:, None] ** (1.0 / n)


def tube(E: SetSpec, eps: float) -> SetSpec:
    """A set containing every point within ``eps`` of the boundary of ``E``."""
    if isinstance(E, HalfSpace):
        return Intersection(HalfSpace(E.x0 - eps * E.nu, E.nu), HalfSpace(E.x0 + eps * E.nu, -E.nu))
    if isinstance(E, Ball):
        outer = Ball(E.x0, E.r + eps)
        return outer if E.r <= eps else Intersection(outer, Complement(Ball(E.x0, E.r - eps)))
    if isinstance(E, IntervalUnion):
        pts = sorted(E._finite)
        pairs = []
        for v in pts:
            if pairs and v - eps <= pairs[-1][1]:
                pairs[-1] = (pairs[-1][0], v + eps)
            else:
                pairs.append((v - eps, v + eps))
        return IntervalUnion(tuple(pairs))
    if isinstance(E, Polygon):
        out = None
        for a, b in zip(*E.edges):
            e = b - a
            nrm = np.array([-e[1], e[0]]) / np.linalg.norm(e) * eps
            cap = Union(ConvexPolygon([a - nrm, b - nrm, b + nrm, a + nrm]), Union(Ball(a, eps), Ball(b, eps)))
            out = cap if out is None else Union(out, cap)
        return out
    if isinstance(E, Complement):
        return tube(E.inner, eps)
    if isinstance(E, _Binary):
        return Union(tube(E.a, eps), tube(E.b, eps))
    if isinstance(E, (WholeSpace, EmptySet)):
        return EmptySet(E.n)
    raise TypeError(f"no tube construction for {type(E).__name__}")
