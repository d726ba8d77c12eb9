"""Compactly supported Lipschitz test fields.

A :class:`FieldSpec` wraps an exact pointwise evaluator together with the
information the integration engine relies on: a Lipschitz bound, a support
ball outside which the field vanishes identically, and optional sets whose
boundaries carry kinks or jumps (used as extra breakpoints along rays).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Ball, IntervalUnion, SetSpec

# max of |d/ds (1 - s^2)^3| on [0, 1], attained at s = 1/sqrt(5)
_BUMP_SLOPE = 96.0 / (25.0 * math.sqrt(5.0))
# max of (1 - s^2)^2 (1 + 5 s^2) on [0, 1], attained at s^2 = 1/5
_MODULATED_SLOPE = 1.28


@dataclass(frozen=True, eq=False)
class FieldSpec:
    """Scalar or vector field on R^n.

    Attributes
    ----------
    n : int
        Ambient dimension.
    kind : str
        ``"scalar"`` or ``"vector"``.
    evaluator : callable
        Maps points of shape ``(m, n)`` to values of shape ``(m,)`` or
        ``(m, n)``; must return exact zeros outside the support ball.
    lipschitz : float or None
        Lipschitz constant; the integration engine refuses fields without one.
    center, support_radius :
        The field vanishes outside ``B_{support_radius}(center)``.
        ``support_radius`` is ``inf`` for constant fields.
    family : str
        Name of the built-in family, for reports.
    sup_norm : float
        Upper bound on ``|f|``.
    break_sets : tuple of SetSpec
        Sets whose boundaries are added as radial and angular breakpoints.
    constant : bool
        True for fields that are constant on all of space.
    support_set : SetSpec or None
        Optional tighter support (for instance a tube around a boundary);
        when given it replaces the support ball along rays.
    """

    n: int
    kind: str
    evaluator: Callable
    lipschitz: float | None
    center: np.ndarray
    support_radius: float
    family: str
    sup_norm: float
    break_sets: tuple = ()
    constant: bool = False
    support_set: SetSpec | None = None

    def __post_init__(self):
        if self.kind not in ("scalar", "vector"):
            raise ValueError(f"field kind must be 'scalar' or 'vector', got {self.kind!r}")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))

    def __call__(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if p.ndim == 1 and (self.n > 1 or p.size == 1):
            return self.evaluator(p.reshape(1, self.n))[0]
        return self.evaluator(p.reshape(-1, self.n))

    @property
    def support(self) -> SetSpec | None:
        if self.constant:
            return None
        if self.support_set is not None:
            return self.support_set
        return Ball(self.center, self.support_radius)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.support_radius)

    @property
    def is_vector(self) -> bool:
        return self.kind == "vector"


def _radial_s2(points, center, width):
    d = points - center
    return np.einsum("ij,ij->i", d, d) / (width * width)


def radial_bump(center, width: float, amplitude: float = 1.0) -> FieldSpec:
    """``amplitude * (1 - |y - c|^2 / w^2)^3`` inside ``B_w(c)``, zero outside (C^2)."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    w = float(width)
    a = float(amplitude)
    if w <= 0:
        raise ValueError("bump width must be positive")

    def f(p):
        s2 = _radial_s2(p, c, w)
        return np.where(s2 < 1.0, a * (1.0 - np.minimum(s2, 1.0)) ** 3, 0.0)

    return FieldSpec(c.size, "scalar", f, abs(a) * _BUMP_SLOPE / w, c, w, "radial_bump", abs(a))


def tent(center: float, width: float, amplitude: float = 1.0) -> FieldSpec:
    """``amplitude * max(0, 1 - |t - c| / w)`` on the line."""
    c = float(np.atleast_1d(center)[0])
    w = float(width)
    a = float(amplitude)
    if w <= 0:
        raise ValueError("tent width must be positive")

    def f(p):
        return a * np.maximum(0.0, 1.0 - np.abs(p[:, 0] - c) / w)

    kinks = (IntervalUnion(((c - w, c),)),)
    return FieldSpec(1, "scalar", f, abs(a) / w, np.array([c]), w, "tent", abs(a), kinks)


def modulated_bump(center, width: float, amplitude: float = 1.0, axis: int = 0) -> FieldSpec:
    """``amplitude * ((y_axis - c_axis) / w) * (1 - |y - c|^2 / w^2)^3``; odd in one coordinate."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    w = float(width)
    a = float(amplitude)
    if not 0 <= axis < c.size:
        raise ValueError(f"axis {axis} out of range for dimension {c.size}")

    def f(p):
        s2 = _radial_s2(p, c, w)
        t = (p[:, axis] - c[axis]) / w
        return np.where(s2 < 1.0, a * t * (1.0 - np.minimum(s2, 1.0)) ** 3, 0.0)

    # |t| <= s, so |f| <= max s (1 - s^2)^3 = (1/sqrt 7)(6/7)^3
    sup = abs(a) * (6.0 / 7.0) ** 3 / math.sqrt(7.0)
    return FieldSpec(c.size, "scalar", f, abs(a) * _MODULATED_SLOPE / w, c, w, "modulated_bump", sup)


def vector_field(scalar: FieldSpec, direction) -> FieldSpec:
    """The vector field ``scalar(y) * e`` for a fixed unit vector ``e``."""
    if scalar.kind != "scalar":
        raise ValueError("vector_field expects a scalar field")
    e = np.asarray(direction, dtype=float)
    if e.shape != (scalar.n,):
        raise ValueError(f"direction must be a {scalar.n}-vector")
    norm = float(np.linalg.norm(e))
    if norm == 0:
        raise ValueError("direction must be nonzero")

    def f(p):
        return scalar.evaluator(p)[:, None] * e[None, :]

    return FieldSpec(scalar.n, "vector", f, None if scalar.lipschitz is None else scalar.lipschitz * norm,
                     scalar.center, scalar.support_radius, scalar.family + "_vector", scalar.sup_norm * norm,
                     scalar.break_sets, scalar.constant, scalar.support_set)


def constant_field(n: int, value=1.0) -> FieldSpec:
    """A field constant on R^n (scalar, or vector if ``value`` is an n-vector)."""
    v = np.asarray(value, dtype=float)
    kind = "vector" if v.ndim == 1 else "scalar"

    def f(p):
        if kind == "vector":
            return np.broadcast_to(v, (len(p), n)).copy()
        return np.full(len(p), float(v))

    return FieldSpec(n, kind, f, 0.0, np.zeros(n), math.inf, "constant", float(np.linalg.norm(v)), (), True)


def product_field(f: FieldSpec, g: FieldSpec) -> FieldSpec:
    """Pointwise product of two fields; at most one may be vector valued."""
    if f.n != g.n:
        raise ValueError("fields of different dimension")
    if f.is_vector and g.is_vector:
        raise ValueError("product of two vector fields is not defined here")
    if f.constant and g.constant:
        value = f.evaluator(np.zeros((1, f.n)))[0] * g.evaluator(np.zeros((1, f.n)))[0]
        return constant_field(f.n, value)
    if f.constant:
        f, g = g, f
    kind = "vector" if (f.is_vector or g.is_vector) else "scalar"

    def ev(p):
        a, b = f.evaluator(p), g.evaluator(p)
        if a.ndim != b.ndim:
            a = a[:, None] if a.ndim == 1 else a
            b = b[:, None] if b.ndim == 1 else b
        return a * b

    if f.support_set is not None or g.support_set is not None:
        raise ValueError("product_field needs ball-supported factors")
    lip = None
    if f.lipschitz is not None and g.lipschitz is not None:
        lip = f.lipschitz * g.sup_norm + g.lipschitz * f.sup_norm
    if g.constant:
        center, radius = f.center, f.support_radius
    else:
        # support of the product lies in the smaller support ball
        center, radius = (f.center, f.support_radius) if f.support_radius <= g.support_radius else (g.center, g.support_radius)
    # kinks at the edge of the larger support survive in the product
    edges = tuple(h.support for h in (f, g) if not h.constant)
    return FieldSpec(f.n, kind, ev, lip, center, radius, f"{f.family}*{g.family}", f.sup_norm * g.sup_norm,
                     f.break_sets + g.break_sets + edges)


def masked_field(f: FieldSpec, E: SetSpec) -> FieldSpec:
    """The product ``chi_E * f``.

    The result jumps across ``dE``; the stored Lipschitz constant is that of
    ``f`` and holds on each side of the boundary, which is all the
    integration engine needs at points off ``dE``.
    """
    if f.n != E.n:
        raise ValueError("field and set of different dimension")
    if f.constant:
        raise ValueError("masked_field needs a compactly supported field")

    def ev(p):
        v = f.evaluator(p)
        m = E.contains(p).astype(float)
        return v * (m[:, None] if v.ndim == 2 else m)

    return FieldSpec(f.n, f.kind, ev, f.lipschitz, f.center, f.support_radius, f"{f.family}|set",
                     f.sup_norm, f.break_sets + (E,), False, f.support_set)
