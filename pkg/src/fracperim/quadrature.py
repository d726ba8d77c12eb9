"""Singular-integral quadrature for Riesz-type kernels.

All whole-space integrals of the form

    int (t_1(y) - t_1(x)) ... (t_k(y) - t_k(x)) K(y - x) dy

are written in polar coordinates around ``x``.  Along each ray the
indicator factors are exact step functions (see
:meth:`fracperim.geometry.SetSpec.ray_profile`), so on pieces where every
field factor is constant the radial integral of ``r^(-1-alpha)`` is done in
closed form, including the unbounded tail.  Pieces where a field factor
varies are integrated by graded Gauss-Kronrod quadrature, and the sphere of
directions by adaptive Gauss-Kronrod cubature split at the directions where
the ray structure changes.

Every estimate carries an a-posteriori error bound and an evaluation count;
results that miss the tolerance are flagged, never silently returned.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import FieldSpec
from .geometry import (
    Ball,
    HalfSpace,
    SetSpec,
    _piece_midpoints,
    _profile_at,
    _pts,
    angular_breaks,
    crossing_points,
)
from .kernel import AlphaContext, sphere_area

_EPS = np.finfo(float).eps
ON_BOUNDARY_RTOL = 1e-13


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class QuadratureConfig:
    """Knobs shared by every engine.

    Attributes
    ----------
    tail_radius : float
        Radius beyond which the integrand is dropped and the analytic tail
        bound ``surface(n) R^-alpha / alpha`` added to the error.  The default
        ``inf`` integrates the tail exactly along rays.
    base_cell : float
        Largest initial angular cell, in radians.
    max_depth : int
        Maximum number of bisections of any cell.
    tol : float
        Target relative tolerance.
    mc_samples : int
        Sample count for the Monte Carlo engines.
    seed : int
        Seed for the Monte Carlo engines (numpy PCG64).
    max_evaluations : int
        Hard budget on integrand evaluations per adaptive call.
    """

    tail_radius: float = math.inf
    base_cell: float = math.pi / 4
    max_depth: int = 30
    tol: float = 1e-6
    mc_samples: int = 100_000
    seed: int = 0
    max_evaluations: int = 400_000_000

    def __post_init__(self):
        if not self.tail_radius > 0:
            raise ValueError(f"tail_radius must be positive, got {self.tail_radius}")
        if not self.base_cell > 0:
            raise ValueError(f"base_cell must be positive, got {self.base_cell}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise ValueError(f"max_depth must be an integer >= 1, got {self.max_depth}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.mc_samples) != self.mc_samples or self.mc_samples < 2:
            raise ValueError(f"mc_samples must be an integer >= 2, got {self.mc_samples}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def replace(self, **changes) -> "QuadratureConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class MeasureEstimate:
    """A value with an a-posteriori absolute error bound and its cost.

    ``std_error`` is set by the Monte Carlo engines (componentwise standard
    error); ``abs_error_estimate`` is then the Euclidean norm of it.
    """

    value: float | np.ndarray
    abs_error_estimate: float
    evaluations: int
    converged: bool = True
    std_error: np.ndarray | None = None

    def __post_init__(self):
        if not math.isfinite(self.abs_error_estimate) or self.abs_error_estimate < 0:
            raise ValueError(f"invalid error estimate {self.abs_error_estimate}")

    def scaled(self, c: float) -> "MeasureEstimate":
        se = None if self.std_error is None else abs(c) * self.std_error
        return MeasureEstimate(_mul(self.value, c), abs(c) * self.abs_error_estimate, self.evaluations,
                               self.converged, se)

    def __add__(self, other: "MeasureEstimate") -> "MeasureEstimate":
        return MeasureEstimate(_add(self.value, other.value), self.abs_error_estimate + other.abs_error_estimate,
                               self.evaluations + other.evaluations, self.converged and other.converged)

    def __sub__(self, other: "MeasureEstimate") -> "MeasureEstimate":
        return self + other.scaled(-1.0)

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(np.atleast_1d(self.value)))


def _mul(v, c):
    return v * c if isinstance(v, np.ndarray) else float(v) * c


def _add(a, b):
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.asarray(a, dtype=float) + np.asarray(b, dtype=float)
    return float(a) + float(b)


@dataclass
class BatchEstimate:
    """Per-point results of a batched evaluation."""

    value: np.ndarray  # (T, k)
    error: np.ndarray  # (T,)
    evaluations: int
    converged: np.ndarray  # (T,)

    def item(self, i: int = 0, squeeze: bool = False) -> MeasureEstimate:
        v = self.value[i]
        value = float(v[0]) if squeeze else v.copy()
        return MeasureEstimate(value, float(self.error[i]), int(max(self.evaluations, 1)), bool(self.converged[i]))


# ---------------------------------------------------------------------------
# Gauss-Kronrod rules

_GK15_X = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
]
_GK15_WK = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
]
_G7_W = {
    1: 0.129484966168869693270611432679082,
    3: 0.279705391489276667901467771423780,
    5: 0.381830050505118944950369775488975,
    7: 0.417959183673469387755102040816327,
}
_GK7_X = [0.960491268708020283423507092629080, 0.774596669241483377035853079956480,
          0.434243749346802558002071502844628, 0.0]
_GK7_WK = [0.104656226026467265193823857192073, 0.268488089868333440728569280666710,
           0.401397414775962222905051818618432, 0.450916538658474142345110087045571]
_G3_W = {1: 5.0 / 9.0, 3: 8.0 / 9.0}


def _symmetric(x, wk, wg_map):
    """Expand half-tables (positive nodes, centre last) to full rules on [-1, 1]."""
    half = len(x) - 1
    nodes = np.array([-v for v in x[:half]] + [0.0] + list(reversed(x[:half])))
    wkf = np.array(wk[:half] + [wk[half]] + list(reversed(wk[:half])))
    wg = [wg_map.get(i, 0.0) for i in range(len(x))]
    wgf = np.array(wg[:half] + [wg[half]] + list(reversed(wg[:half])))
    return nodes, wkf, wgf


@dataclass(frozen=True)
class Rule:
    """Embedded rule on the unit cube: nodes ``(p, d)``, Kronrod and Gauss weights."""

    nodes: np.ndarray
    wk: np.ndarray
    wg: np.ndarray

    @property
    def size(self) -> int:
        return len(self.wk)


def gauss_kronrod_1d(points: int = 15):
    """``(nodes, kronrod_weights, gauss_weights)`` on ``[-1, 1]`` for 15 or 7 points."""
    if points == 15:
        return _symmetric(_GK15_X, _GK15_WK, _G7_W)
    if points == 7:
        return _symmetric(_GK7_X, _GK7_WK, _G3_W)
    raise ValueError("only the 7- and 15-point Gauss-Kronrod rules are tabulated")


@functools.lru_cache(maxsize=None)
def cube_rule(d: int) -> Rule:
    """GK15 for ``d = 1``, tensor GK7 (with embedded tensor G3) for ``d >= 2``."""
    x, wk, wg = gauss_kronrod_1d(15 if d == 1 else 7)
    grids = np.meshgrid(*([x] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wkd = functools.reduce(np.multiply.outer, [wk] * d).ravel()
    wgd = functools.reduce(np.multiply.outer, [wg] * d).ravel()
    scale = 0.5**d
    return Rule((nodes + 1.0) / 2.0, wkd * scale, wgd * scale)


# ---------------------------------------------------------------------------
# batched adaptive cubature


@dataclass
class CubatureResult:
    value: np.ndarray  # (T, k)
    error: np.ndarray  # (T,)
    abs_integral: np.ndarray  # (T,)
    evaluations: int
    converged: np.ndarray  # (T,)


def _normalize_output(out, m, ncomp):
    if isinstance(out, tuple):
        vals, errs = out[0], out[1]
    else:
        vals, errs = out, None
    vals = np.asarray(vals, dtype=float).reshape(m, ncomp)
    errs = np.zeros(m) if errs is None else np.abs(np.asarray(errs, dtype=float).reshape(m))
    return vals, errs


def _eval_cells(func, rule, task, lo, hi, ncomp, chunk):
    C = len(task)
    d = lo.shape[1]
    p = rule.size
    val = np.empty((C, ncomp))
    err = np.empty(C)
    inn = np.empty(C)
    absk = np.empty(C)
    step = max(1, chunk // p)
    for s in range(0, C, step):
        sl = slice(s, min(C, s + step))
        clo, chi = lo[sl], hi[sl]
        width = chi - clo
        pts = clo[:, None, :] + width[:, None, :] * rule.nodes[None, :, :]
        t = np.repeat(task[sl], p)
        f, inner = _normalize_output(func(t, pts.reshape(-1, d)), len(t), ncomp)
        f = f.reshape(-1, p, ncomp)
        inner = inner.reshape(-1, p)
        vol = np.prod(width, axis=1)
        k = np.einsum("cpk,p->ck", f, rule.wk) * vol[:, None]
        g = np.einsum("cpk,p->ck", f, rule.wg) * vol[:, None]
        a = np.einsum("cp,p->c", np.sqrt(np.einsum("cpk,cpk->cp", f, f)), rule.wk) * vol
        diff = np.sqrt(np.einsum("ck,ck->c", k - g, k - g))
        val[sl] = k
        absk[sl] = a
        err[sl] = diff + 50 * _EPS * a
        inn[sl] = (inner @ rule.wk) * vol
    return val, err, inn, absk


def adaptive_cubature(func: Callable, cell_task, lo, hi, ntasks: int, ncomp: int, *, rel_tol: float,
                      abs_tol=0.0, max_depth: int = 30, max_evals: int = 400_000_000,
                      chunk: int = 200_000) -> CubatureResult:
    """Integrate many independent tasks over unions of boxes at once.

    Parameters
    ----------
    func : callable
        ``func(task_index, points)`` with ``task_index`` of shape ``(m,)`` and
        ``points`` of shape ``(m, d)``; returns values ``(m, ncomp)`` or a
        pair ``(values, inner_errors)`` where ``inner_errors`` bounds the
        error of each value (for nested integrals).
    cell_task, lo, hi :
        Initial cells: owning task and box corners, shapes ``(C,)``,
        ``(C, d)``, ``(C, d)``.
    rel_tol, abs_tol :
        Task ``t`` is converged once its summed error is at most
        ``max(abs_tol[t], rel_tol * int |f|)``.

    Cells of unconverged tasks whose discretization error exceeds half
    their share of the target are bisected in every coordinate.  Inner
    errors count towards the reported error but do not drive splitting,
    since bisection cannot reduce them.  Reductions use ``bincount``
    in a fixed order, so results are bit-reproducible.
    """
    task = np.asarray(cell_task, dtype=np.int64)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = lo.shape[1]
    rule = cube_rule(d)
    abs_tol = np.broadcast_to(np.asarray(abs_tol, dtype=float), (ntasks,))
    depth = np.zeros(len(task), dtype=np.int64)
    if len(task) == 0:
        z = np.zeros(ntasks)
        return CubatureResult(np.zeros((ntasks, ncomp)), z, z.copy(), 0, np.ones(ntasks, dtype=bool))
    val, err, inn, absk = _eval_cells(func, rule, task, lo, hi, ncomp, chunk)
    evals = len(task) * rule.size
    nchild = 2**d
    bits = ((np.arange(nchild)[:, None] >> np.arange(d)[None, :]) & 1).astype(bool)
    while True:
        tot_err = np.bincount(task, err, ntasks)
        tot_inn = np.bincount(task, inn, ntasks)
        tot_abs = np.bincount(task, absk, ntasks)
        target = np.maximum(abs_tol, rel_tol * tot_abs)
        goal = np.maximum(target - tot_inn, 0.5 * target)
        bad = tot_err > goal
        if not bad.any():
            break
        ncell = np.bincount(task, minlength=ntasks)
        split = bad[task] & (err > goal[task] / (2.0 * ncell[task])) & (depth < max_depth)
        nsplit = int(split.sum())
        if nsplit == 0 or evals + nsplit * nchild * rule.size > max_evals:
            break
        plo, phi, ptask, pdepth = lo[split], hi[split], task[split], depth[split]
        mid = 0.5 * (plo + phi)
        clo = np.where(bits[None, :, :], mid[:, None, :], plo[:, None, :]).reshape(-1, d)
        chi = np.where(bits[None, :, :], phi[:, None, :], mid[:, None, :]).reshape(-1, d)
        ctask = np.repeat(ptask, nchild)
        cdepth = np.repeat(pdepth + 1, nchild)
        cval, cerr, cinn, cabs = _eval_cells(func, rule, ctask, clo, chi, ncomp, chunk)
        evals += len(ctask) * rule.size
        keep = ~split
        task = np.concatenate([task[keep], ctask])
        lo = np.concatenate([lo[keep], clo])
        hi = np.concatenate([hi[keep], chi])
        depth = np.concatenate([depth[keep], cdepth])
        val = np.concatenate([val[keep], cval])
        err = np.concatenate([err[keep], cerr])
        inn = np.concatenate([inn[keep], cinn])
        absk = np.concatenate([absk[keep], cabs])
    value = np.stack([np.bincount(task, val[:, j], ntasks) for j in range(ncomp)], axis=1)
    tot_err = np.bincount(task, err + inn, ntasks)
    tot_abs = np.bincount(task, absk, ntasks)
    conv = tot_err <= np.maximum(abs_tol, rel_tol * tot_abs)
    return CubatureResult(value, tot_err, tot_abs, evals, conv)


# ---------------------------------------------------------------------------
# ray engine


@dataclass(frozen=True)
class RayTerms:
    """Integrand ``prod_i (t_i(y) - t_i(x)) * w(theta) * |y - x|^(-n-alpha)``.

    ``sets`` and ``fields`` are scalar factors.  ``mode`` selects the
    angular weight: ``"grad"`` multiplies by ``theta = (y - x)/|y - x|``
    (vector result), ``"div"`` contracts the increment of ``vector`` with
    ``theta`` (scalar result) and ``"mass"`` uses weight 1 (scalar result).
    """

    sets: tuple = ()
    fields: tuple = ()
    vector: FieldSpec | None = None
    mode: str = "grad"

    def __post_init__(self):
        if self.mode not in ("grad", "div", "mass"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if (self.mode == "div") != (self.vector is not None):
            raise ValueError("mode 'div' requires exactly one vector field")
        for f in self.all_fields:
            if f.lipschitz is None:
                raise ValueError(f"missing Lipschitz bound for field {f.family!r}")
        for f in self.fields:
            if f.is_vector:
                raise ValueError("vector fields enter only through mode 'div'")
        if self.vector is not None and not self.vector.is_vector:
            raise ValueError("the 'div' factor must be a vector field")
        dims = {t.n for t in self.sets} | {f.n for f in self.all_fields}
        if len(dims) != 1:
            raise ValueError("all factors must live in the same dimension")

    @property
    def all_fields(self) -> tuple:
        return self.fields + ((self.vector,) if self.vector is not None else ())

    @property
    def n(self) -> int:
        return (self.sets + self.all_fields)[0].n

    @property
    def ncomp(self) -> int:
        return self.n if self.mode == "grad" else 1

    @property
    def trivial(self) -> bool:
        """True when some factor is constant, so the integrand vanishes."""
        return any(f.constant for f in self.all_fields)

    def break_sets(self) -> list:
        out = list(self.sets)
        for f in self.all_fields:
            out.append(f.support)
            out.extend(f.break_sets)
        return out

    def complexity(self) -> int:
        return sum(s.complexity() for s in self.break_sets())

    def sup_bound(self) -> float:
        """Bound on the absolute value of the product of increments."""
        b = 1.0
        for f in self.all_fields:
            b *= 2.0 * f.sup_norm
        return b


def check_off_boundary(sets, X) -> None:
    scale = np.maximum(1.0, np.abs(X).max(axis=1))
    for E in sets:
        if np.any(E.distance(X) <= ON_BOUNDARY_RTOL * scale):
            raise ValueError("evaluation point on boundary")


def _power_map(kind, a, b, u, alpha):
    """Map ``u in (0, 1)`` onto a radial piece; returns ``(r, dr/du)``."""
    gamma = 1.0 / (1.0 - alpha)
    r = np.empty_like(u)
    jac = np.empty_like(u)
    k0 = kind == 0
    r[k0] = b[k0] * u[k0] ** gamma
    jac[k0] = b[k0] * gamma * u[k0] ** (gamma - 1.0)
    k1 = kind == 1
    lr = np.log(b[k1] / a[k1])
    r[k1] = a[k1] * np.exp(lr * u[k1])
    jac[k1] = r[k1] * lr
    k2 = kind == 2
    r[k2] = a[k2] + (b[k2] - a[k2]) * u[k2]
    jac[k2] = b[k2] - a[k2]
    return r, jac


def _ray_bound(terms: RayTerms, alpha: float) -> float:
    """A priori bound on one whole radial integral.

    The first field increment is at most ``min(L s, 2 sup)``, the others at
    most ``2 sup``, and set factors at most 1.  Pieces far below this scale
    are not worth refining: their values are dominated by rounding.
    """
    fs = terms.all_fields
    if not fs:
        return 0.0
    L, S = fs[0].lipschitz, 2.0 * fs[0].sup_norm
    if L <= 0 or S <= 0:
        return 0.0
    bound = L**alpha * S ** (1.0 - alpha) * (1.0 / (1.0 - alpha) + 1.0 / alpha)
    for f in fs[1:]:
        bound *= 2.0 * f.sup_norm
    return bound


def _radial(terms: RayTerms, origins, dirs, fx, fv, alpha, rel_tol, max_depth, tail_radius, max_evals):
    """Radial integrals of the increment product against ``r^(-1-alpha)``.

    ``fx`` holds scalar field values at the origins ``(m, nf)``; ``fv`` the
    vector field value ``(m, n)`` or ``None``.  Returns ``(R, err, evals, ok)``.
    """
    m = len(origins)
    profs = [E.ray_profile(origins, dirs) for E in terms.sets]
    finite_tail = math.isfinite(tail_radius)
    if len(profs) == 1 and not terms.all_fields and not finite_tail:
        # single indicator: sum (v_j - v_0) (c_j^-alpha - c_{j+1}^-alpha) / alpha
        p = profs[0]
        if p.breaks.shape[1] == 0:
            return np.zeros(m), np.zeros(m), m, np.ones(m, dtype=bool)
        pw = p.breaks ** -alpha
        nxt = np.concatenate([pw[:, 1:], np.zeros((m, 1))], axis=1)
        dv = p.values[:, 1:] - p.values[:, :1]
        R = np.einsum("ij,ij->i", dv, pw - nxt) / alpha
        return R, np.zeros(m), m, np.ones(m, dtype=bool)
    cols = [p.breaks for p in profs]
    for f in terms.all_fields:
        cols.append(f.support.ray_profile(origins, dirs).breaks)
        for B in f.break_sets:
            cols.append(B.ray_profile(origins, dirs).breaks)
    if finite_tail:
        cols.append(np.full((m, 1), tail_radius))
    breaks = np.sort(np.concatenate(cols, axis=1), axis=1) if cols else np.zeros((m, 0))
    if finite_tail:
        breaks = np.where(breaks <= tail_radius, breaks, np.inf)
    live = np.isfinite(breaks).any(axis=0)
    breaks = breaks[:, : int(live.sum())]
    left = np.concatenate([np.zeros((m, 1)), breaks], axis=1)
    right = np.concatenate([breaks, np.full((m, 1), np.inf)], axis=1)
    mid = _piece_midpoints(breaks)
    valid = left < right
    if finite_tail:
        valid &= left < tail_radius
    coef = np.ones_like(left)
    for p in profs:
        coef *= _profile_at(p, mid) - p.start[:, None]
    active = np.zeros(left.shape, dtype=bool)
    y = origins[:, None, :] + np.where(np.isfinite(mid), mid, 0.0)[:, :, None] * dirs[:, None, :]
    for f in terms.all_fields:
        if f.support_set is None:
            dist2 = np.einsum("mkj,mkj->mk", y - f.center, y - f.center)
            active |= dist2 < f.support_radius**2
        else:
            active |= f.support_set.contains(y.reshape(-1, y.shape[2])).reshape(y.shape[:2])
    # pieces where every field sits outside its support are constant
    outside = np.ones(m)
    for i in range(len(terms.fields)):
        outside *= -fx[:, i]
    if terms.vector is not None:
        outside *= -np.einsum("ij,ij->i", fv, dirs)
    const = valid & ~active & (coef != 0) & (left > 0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        seg = (left ** -alpha - np.where(np.isinf(right), 0.0, right ** -alpha)) / alpha
        R = np.where(const, coef * outside[:, None] * seg, 0.0).sum(axis=1)
    err = np.zeros(m)
    ok = np.ones(m, dtype=bool)
    smooth = valid & active & (coef != 0)
    ray_idx, piece_idx = np.nonzero(smooth)
    evals = m
    if len(ray_idx) == 0:
        return R, err, evals, ok
    a = left[ray_idx, piece_idx]
    b = right[ray_idx, piece_idx]
    c = coef[ray_idx, piece_idx]
    kind = np.where(a == 0, 0, np.where(b > 4.0 * a, 1, 2))

    def integrand(task, u):
        u = u[:, 0]
        ray = ray_idx[task]
        r, jac = _power_map(kind[task], a[task], b[task], u, alpha)
        y = origins[ray] + r[:, None] * dirs[ray]
        val = c[task] * r ** (-1.0 - alpha) * jac
        for i, f in enumerate(terms.fields):
            val = val * (f.evaluator(y) - fx[ray, i])
        if terms.vector is not None:
            val = val * np.einsum("ij,ij->i", terms.vector.evaluator(y) - fv[ray], dirs[ray])
        return val[:, None]

    T = len(ray_idx)
    res = adaptive_cubature(integrand, np.arange(T), np.zeros((T, 1)), np.ones((T, 1)), T, 1,
                            rel_tol=rel_tol, abs_tol=1e-3 * rel_tol * _ray_bound(terms, alpha),
                            max_depth=max_depth, max_evals=max_evals)
    R += np.bincount(ray_idx, res.value[:, 0], m)
    err += np.bincount(ray_idx, res.error, m)
    ok &= np.bincount(ray_idx, ~res.converged, m) == 0
    return R, err, evals + res.evaluations, ok


def _orthonormal_frames(axis):
    """Rows ``(e1, e2, axis)`` completing unit vectors ``axis`` of shape ``(T, 3)``."""
    T = len(axis)
    helper = np.zeros((T, 3))
    idx = np.argmin(np.abs(axis), axis=1)
    helper[np.arange(T), idx] = 1.0
    e1 = helper - np.einsum("ij,ij->i", helper, axis)[:, None] * axis
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(axis, e1)
    return np.stack([e1, e2, axis], axis=1)


def _frame3(sets, X):
    """Polar axis per point and the ``z = cos(polar angle)`` breakpoints it induces."""
    T = len(X)
    axis = np.tile([0.0, 0.0, 1.0], (T, 1))
    zb = np.zeros((T, 0))
    prims = [p for s in sets for p in s.primitives()]
    for p in prims:
        if isinstance(p, HalfSpace):
            axis = np.tile(p.nu, (T, 1))
            zb = np.zeros((T, 1))
            break
        if isinstance(p, Ball):
            w = p.x0 - X
            dist = np.linalg.norm(w, axis=1)
            good = dist > 0
            axis[good] = w[good] / dist[good, None]
            with np.errstate(invalid="ignore", divide="ignore"):
                z = np.sqrt(1.0 - (p.r / dist) ** 2)
            zb = np.where(good & (dist > p.r), z, np.nan)[:, None]
            break
    return _orthonormal_frames(axis), zb


def _interval_cells(breaks, lo, hi, max_width):
    """Cells between sorted per-row breakpoints (NaN padded), split to ``max_width``."""
    T = breaks.shape[0]
    b = np.where((breaks > lo) & (breaks < hi), breaks, np.nan)
    b = np.concatenate([np.full((T, 1), lo), b, np.full((T, 1), hi)], axis=1)
    b = np.sort(b, axis=1)  # NaN last
    a0, a1 = b[:, :-1], b[:, 1:]
    ok = np.isfinite(a0) & np.isfinite(a1) & (a1 - a0 > 1e-15 * max(1.0, abs(hi)))
    task, col = np.nonzero(ok)
    c_lo, c_hi = a0[task, col], a1[task, col]
    pieces = np.maximum(1, np.ceil((c_hi - c_lo) / max_width - 1e-12)).astype(np.int64)
    rep = np.repeat(np.arange(len(task)), pieces)
    k = np.arange(len(rep)) - np.repeat(np.cumsum(pieces) - pieces, pieces)
    w = (c_hi - c_lo)[rep] / pieces[rep]
    return task[rep], c_lo[rep] + k * w, c_lo[rep] + (k + 1) * w


def sphere_cells(sets, X, base_cell):
    """Initial angular cells and the direction map for ``n = 2`` or ``3``.

    Returns ``(cell_task, lo, hi, to_dirs)`` where ``to_dirs(task, pts)``
    maps cell coordinates to unit directions; the map has unit Jacobian
    (angle for ``n = 2``, ``(z, phi)`` for ``n = 3``).
    """
    n = X.shape[1]
    if n == 2:
        cols = [angular_breaks(s, X) for s in sets]
        cross = crossing_points([s for s in sets if s is not None and s.n == 2])
        if len(cross):
            w = cross[None, :, :] - X[:, None, :]
            cols.append(np.mod(np.arctan2(w[..., 1], w[..., 0]), 2 * math.pi))
        br = np.concatenate(cols, axis=1) if cols else np.zeros((len(X), 0))
        task, lo, hi = _interval_cells(br, 0.0, 2 * math.pi, base_cell)

        def to_dirs(t, p):
            return np.stack([np.cos(p[:, 0]), np.sin(p[:, 0])], axis=1)

        return task, lo[:, None], hi[:, None], to_dirs
    frames, zb = _frame3(sets, X)
    zt, zlo, zhi = _interval_cells(zb, -1.0, 1.0, max(base_cell, 0.5))
    nphi = max(4, int(math.ceil(2 * math.pi / base_cell)))
    edges = np.linspace(0.0, 2 * math.pi, nphi + 1)
    task = np.repeat(zt, nphi)
    lo = np.stack([np.repeat(zlo, nphi), np.tile(edges[:-1], len(zt))], axis=1)
    hi = np.stack([np.repeat(zhi, nphi), np.tile(edges[1:], len(zt))], axis=1)

    def to_dirs(t, p):
        z = np.clip(p[:, 0], -1.0, 1.0)
        s = np.sqrt(1.0 - z * z)
        local = np.stack([s * np.cos(p[:, 1]), s * np.sin(p[:, 1]), z], axis=1)
        return np.einsum("ij,ijk->ik", local, frames[t])

    return task, lo, hi, to_dirs


def ray_integral(terms: RayTerms, X, alpha: float, cfg: QuadratureConfig, *, check_boundary: bool = True,
                 rel_tol: float | None = None, abs_tol=0.0) -> BatchEstimate:
    """Whole-space integral of ``terms`` at every point of ``X`` (without ``mu``)."""
    X = _pts(X, terms.n)
    T, n = X.shape
    k = terms.ncomp
    rel_tol = cfg.tol if rel_tol is None else rel_tol
    if terms.trivial:
        return BatchEstimate(np.zeros((T, k)), np.zeros(T), T, np.ones(T, dtype=bool))
    if check_boundary:
        check_off_boundary(list(terms.sets) + [b for f in terms.all_fields for b in f.break_sets], X)
    fx = np.stack([f.evaluator(X) for f in terms.fields], axis=1) if terms.fields else np.zeros((T, 0))
    fv = terms.vector.evaluator(X) if terms.vector is not None else None
    radial_tol = rel_tol / 10.0
    tail = cfg.tail_radius
    counter = [0]
    chunk = int(max(2000, 4_000_000 // max(1, terms.complexity())))

    def radial(idx, dirs):
        R, err, ev, ok = _radial(terms, X[idx], dirs, fx[idx], None if fv is None else fv[idx], alpha,
                                 radial_tol, cfg.max_depth, tail, cfg.max_evaluations)
        counter[0] += ev
        return R, err, ok

    if n == 1:
        idx = np.concatenate([np.arange(T), np.arange(T)])
        dirs = np.concatenate([np.ones((T, 1)), -np.ones((T, 1))])
        R, err, ok = radial(idx, dirs)
        if terms.mode == "grad":
            value = (R[:T] - R[T:])[:, None]
        else:
            value = (R[:T] + R[T:])[:, None]
        error = err[:T] + err[T:]
        conv = ok[:T] & ok[T:]
    else:
        task, lo, hi, to_dirs = sphere_cells(terms.break_sets(), X, cfg.base_cell)
        radial_ok = np.ones(T, dtype=bool)

        def integrand(t, p):
            dirs = to_dirs(t, p)
            R, err, ok = radial(t, dirs)
            if not ok.all():
                radial_ok[np.unique(t[~ok])] = False
            vals = dirs * R[:, None] if terms.mode == "grad" else R[:, None]
            return vals, err

        res = adaptive_cubature(integrand, task, lo, hi, T, k, rel_tol=rel_tol, abs_tol=abs_tol,
                                max_depth=cfg.max_depth, max_evals=cfg.max_evaluations, chunk=chunk)
        value, error, conv = res.value, res.error, res.converged & radial_ok
    if math.isfinite(tail):
        error = error + sphere_area(n) * tail**-alpha / alpha * terms.sup_bound()
    return BatchEstimate(value, error, max(counter[0], 1), conv)


def singular_integral_set_batch(E: SetSpec, X, ctx: AlphaContext, cfg: QuadratureConfig,
                                check_boundary: bool = True) -> BatchEstimate:
    """``int (chi_E(y) - chi_E(x)) (y - x)/|y - x|^(n+alpha+1) dy`` at each row of ``X``."""
    _check_dim(E.n, ctx)
    return ray_integral(RayTerms(sets=(E,)), X, ctx.alpha, cfg, check_boundary=check_boundary)


def singular_integral_set(E: SetSpec, x, ctx: AlphaContext, cfg: QuadratureConfig) -> MeasureEstimate:
    """Set engine at one point; the value is an n-vector, without the factor ``mu``."""
    return singular_integral_set_batch(E, _pts(x, E.n)[:1], ctx, cfg).item(0)


def singular_integral_field(f: FieldSpec, x, ctx: AlphaContext, cfg: QuadratureConfig) -> MeasureEstimate:
    """Field engine at one point: ``int (f(y) - f(x)) (y - x)/|y - x|^(n+alpha+1) dy``."""
    if f.lipschitz is None:
        raise ValueError("missing Lipschitz bound")
    if f.is_vector:
        raise ValueError("singular_integral_field expects a scalar field")
    _check_dim(f.n, ctx)
    return ray_integral(RayTerms(fields=(f,)), _pts(x, f.n)[:1], ctx.alpha, cfg).item(0)


def _check_dim(n, ctx):
    if n != ctx.n:
        raise ValueError(f"dimension mismatch: object has n={n}, context has n={ctx.n}")


# ---------------------------------------------------------------------------
# Monte Carlo oracle


def _uniform_sphere(rng, m, n):
    if n == 1:
        return np.where(rng.random(m) < 0.5, -1.0, 1.0)[:, None]
    g = rng.standard_normal((m, n))
    return g / np.linalg.norm(g, axis=1)[:, None]


def mc_ray_integral(terms: RayTerms, x, alpha: float, cfg: QuadratureConfig, samples: int | None = None,
                    seed: int | None = None, chunk: int = 1_000_000) -> MeasureEstimate:
    """Importance-sampled Monte Carlo estimate of :func:`ray_integral` at one point.

    With indicator factors the radius is drawn with density ``~ r^(-1-alpha)``
    on ``[d, tail_radius)``, ``d`` the largest boundary distance (the product
    vanishes closer in).  For field-only integrands the density is
    ``~ r^(-alpha)`` on ``[0, R_max]``; beyond ``R_max`` the increment is
    constant and its angular average vanishes.
    """
    n = terms.n
    x = _pts(x, n)[0]
    N = int(cfg.mc_samples if samples is None else samples)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    k = terms.ncomp
    if terms.trivial:
        return MeasureEstimate(np.zeros(k), 0.0, 1, True, np.zeros(k))
    check_off_boundary(list(terms.sets) + [b for f in terms.all_fields for b in f.break_sets], x[None, :])
    area = sphere_area(n)
    tail = cfg.tail_radius
    fx = [float(f.evaluator(x[None, :])[0]) for f in terms.fields]
    fv = terms.vector.evaluator(x[None, :])[0] if terms.vector is not None else None
    x0 = [float(E.contains(x[None, :])[0]) for E in terms.sets]
    if terms.sets:
        d = max(float(E.distance(x[None, :])[0]) for E in terms.sets)
        if not math.isfinite(d) or d >= tail:
            return MeasureEstimate(np.zeros(k), 0.0, 1, True, np.zeros(k))
        frac = 1.0 - (d / tail) ** alpha if math.isfinite(tail) else 1.0
        weight = area * (d**-alpha - (tail**-alpha if math.isfinite(tail) else 0.0)) / alpha
    else:
        if not all(f.bounded for f in terms.all_fields):
            raise ValueError("Monte Carlo needs an indicator factor or bounded field supports")
        rmax = max(float(np.linalg.norm(x - f.center)) + f.support_radius for f in terms.all_fields)
    s1 = np.zeros(k)
    s2 = np.zeros(k)
    done = 0
    while done < N:
        m = min(chunk, N - done)
        theta = _uniform_sphere(rng, m, n)
        u = rng.random(m)
        if terms.sets:
            r = d * (1.0 - u * frac) ** (-1.0 / alpha)
            w = np.full(m, weight)
        else:
            r = rmax * u ** (1.0 / (1.0 - alpha))
            w = area * rmax ** (1.0 - alpha) / (1.0 - alpha) / r
        y = x[None, :] + r[:, None] * theta
        val = w
        for E, s0 in zip(terms.sets, x0):
            val = val * (E.contains(y) - s0)
        for f, v0 in zip(terms.fields, fx):
            val = val * (f.evaluator(y) - v0)
        if terms.vector is not None:
            val = val * np.einsum("ij,ij->i", terms.vector.evaluator(y) - fv, theta)
        contrib = theta * val[:, None] if terms.mode == "grad" else val[:, None]
        s1 += contrib.sum(axis=0)
        s2 += (contrib * contrib).sum(axis=0)
        done += m
    mean = s1 / N
    var = np.maximum(s2 / N - mean * mean, 0.0) * N / (N - 1)
    se = np.sqrt(var / N)
    return MeasureEstimate(mean, float(np.linalg.norm(se)), N, True, se)


def mc_singular_integral_set(E: SetSpec, x, ctx: AlphaContext, cfg: QuadratureConfig,
                             samples: int | None = None, seed: int | None = None) -> MeasureEstimate:
    """Monte Carlo oracle for :func:`singular_integral_set` (mean and standard error)."""
    _check_dim(E.n, ctx)
    return mc_ray_integral(RayTerms(sets=(E,)), x, ctx.alpha, cfg, samples, seed)


# ---------------------------------------------------------------------------
# volume integrals with boundary blow-up


def _sigmoid(u, q):
    a = u**q
    b = (1.0 - u) ** q
    s = a + b
    return a / s, q * (u * (1.0 - u)) ** (q - 1.0) / (s * s)


def _call_g(g, pts, ncomp):
    out = g(pts)
    evals = len(pts)
    if isinstance(out, tuple):
        if len(out) == 3:
            evals = int(out[2])
        vals, errs = out[0], out[1]
    else:
        vals, errs = out, None
    vals = np.asarray(vals, dtype=float).reshape(len(pts), -1)
    if ncomp is not None and vals.shape[1] != ncomp:
        raise ValueError(f"integrand returned {vals.shape[1]} components, expected {ncomp}")
    errs = np.zeros(len(pts)) if errs is None else np.abs(np.asarray(errs, dtype=float).reshape(len(pts)))
    return vals, errs, evals


def volume_integral(g: Callable, region: SetSpec, cfg: QuadratureConfig, *, singular=None,
                    alpha: float = 0.5, ncomp: int | None = None, rel_tol: float | None = None,
                    abs_tol: float = 0.0, center=None, gap: float = 1e-11, chunk: int = 4096) -> MeasureEstimate:
    """Integrate ``g`` over a bounded region, allowing ``dist^-alpha`` blow-up at a boundary.

    Polar coordinates are taken around ``center`` (default: the centre of
    the region's bounding ball).  Every ray is cut at the crossings of the
    region and of the set (or list of sets) ``singular``; each piece is
    integrated with a sigmoidal grading of order ``2 / (1 - alpha)`` at both ends, which absorbs
    ``s^-alpha`` endpoint singularities.  A strip of relative width ``gap``
    at each end is replaced by the local model ``g(s) ~ s^-alpha`` and its
    size added to the error.  Angular cells between structural directions
    are graded the same way.

    ``g(points)`` returns values ``(m, k)`` (or ``(m,)``), optionally with
    per-point error bounds and an evaluation count as extra tuple items.
    """
    n = region.n
    bb = region.bounding_ball()
    if bb is None or not bb[1] > 0:
        raise ValueError("region degenerate: a bounded region with nonempty interior is required")
    c = np.asarray(bb[0] if center is None else center, dtype=float).reshape(n)
    scale = float(bb[1]) + float(np.linalg.norm(c - bb[0]))
    s_min = gap * scale
    rel_tol = cfg.tol if rel_tol is None else rel_tol
    q = 2.0 / (1.0 - alpha)
    probe = np.sqrt(np.arange(1.0, n + 1.0))
    probe = c + 0.4137 * scale * probe / np.linalg.norm(probe)
    gp = _call_g(g, probe[None, :], ncomp)[0]
    ncomp = gp.shape[1] if ncomp is None else ncomp
    # absolute floor for single rays, far below any meaningful share of the total
    ray_floor = 1e-6 * rel_tol * float(np.linalg.norm(gp)) * scale**n
    counter = [0]
    flags = {"radial_ok": True}
    if singular is None:
        singular = []
    elif isinstance(singular, SetSpec):
        singular = [singular]
    singular = list(singular)
    cut_sets = [region] + singular

    def radial(dirs):
        """Radial integrals ``int g(c + r theta) r^(n-1) dr`` over the region, per direction."""
        m = len(dirs)
        origins = np.repeat(c[None, :], m, axis=0)
        rp = region.ray_profile(origins, dirs)
        cols = [rp.breaks] + [S.ray_profile(origins, dirs).breaks for S in singular]
        br = np.sort(np.concatenate(cols, axis=1), axis=1)
        live = np.isfinite(br).any(axis=0)
        br = br[:, : int(live.sum())]
        left = np.concatenate([np.zeros((m, 1)), br], axis=1)
        right = np.concatenate([br, np.full((m, 1), np.inf)], axis=1)
        mid = _piece_midpoints(br)
        inside = (_profile_at(rp, mid) > 0.5) & (left < right) & np.isfinite(right)
        ray, col = np.nonzero(inside)
        a, b = left[ray, col], right[ray, col]
        R = np.zeros((m, ncomp))
        E = np.zeros(m)
        if len(ray) == 0:
            return R, E
        short = (b - a) <= 4 * s_min
        # end strips: local model g ~ s^-alpha integrated exactly
        aa = np.where(short, a, a + s_min)
        bb_ = np.where(short, b, b - s_min)
        ends = np.concatenate([aa[~short], bb_[~short], 0.5 * (a + b)[short]])
        eray = np.concatenate([ray[~short], ray[~short], ray[short]])
        pts = c[None, :] + ends[:, None] * dirs[eray]
        gv, ge, ev = _call_g(g, pts, ncomp)
        counter[0] += ev
        jac = ends ** (n - 1)
        ns = int((~short).sum())
        w_end = np.concatenate([np.full(2 * ns, s_min / (1.0 - alpha)), (b - a)[short]])
        contrib = gv * (jac * w_end)[:, None]
        cerr = (np.linalg.norm(gv, axis=1) * jac * np.concatenate([np.full(2 * ns, s_min), (b - a)[short]])
                + ge * jac * w_end)
        for j in range(ncomp):
            R[:, j] += np.bincount(eray, contrib[:, j], m)
        E += np.bincount(eray, cerr, m)
        long = ~short
        if long.any():
            ta, tb, tray = aa[long], bb_[long], ray[long]

            def integrand(task, u):
                w, dw = _sigmoid(u[:, 0], q)
                r = ta[task] + (tb[task] - ta[task]) * w
                jr = (tb[task] - ta[task]) * dw * r ** (n - 1)
                vals, errs, ev2 = _call_g(g, c[None, :] + r[:, None] * dirs[tray[task]], ncomp)
                counter[0] += ev2
                return vals * jr[:, None], errs * jr

            T = len(tray)
            res = adaptive_cubature(integrand, np.arange(T), np.zeros((T, 1)), np.ones((T, 1)), T, ncomp,
                                    rel_tol=rel_tol / 3.0, abs_tol=ray_floor, max_depth=cfg.max_depth,
                                    max_evals=cfg.max_evaluations, chunk=chunk)
            if not res.converged.all():
                flags["radial_ok"] = False
            for j in range(ncomp):
                R[:, j] += np.bincount(tray, res.value[:, j], m)
            E += np.bincount(tray, res.error, m)
        return R, E

    if n == 1:
        R, E = radial(np.array([[1.0], [-1.0]]))
        value, error, conv = R.sum(axis=0), float(E.sum()), True
    elif n == 2:
        cols = [angular_breaks(s, c[None, :]) for s in cut_sets]
        br = np.concatenate(cols, axis=1)
        _, lo, hi = _interval_cells(br, 0.0, 2 * math.pi, cfg.base_cell)
        K = len(lo)

        def outer(task, p):
            k = np.minimum(np.floor(p[:, 0]).astype(np.int64), K - 1)
            w, dw = _sigmoid(p[:, 0] - k, q)
            phi = lo[k] + (hi[k] - lo[k]) * w
            dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
            R, E = radial(dirs)
            jac = (hi[k] - lo[k]) * dw
            return R * jac[:, None], E * jac

        res = adaptive_cubature(outer, np.zeros(K, dtype=np.int64), np.arange(K, dtype=float)[:, None],
                                np.arange(1, K + 1, dtype=float)[:, None], 1, ncomp, rel_tol=rel_tol,
                                abs_tol=abs_tol, max_depth=cfg.max_depth, max_evals=cfg.max_evaluations,
                                chunk=256 * 15)
        value, error, conv = res.value[0], float(res.error[0]), bool(res.converged[0])
    else:
        task, lo, hi, to_dirs = sphere_cells(cut_sets, c[None, :], cfg.base_cell)

        def outer3(t, p):
            return radial(to_dirs(t, p))

        res = adaptive_cubature(outer3, task, lo, hi, 1, ncomp, rel_tol=rel_tol, abs_tol=abs_tol,
                                max_depth=cfg.max_depth, max_evals=cfg.max_evaluations, chunk=64 * 343)
        value, error, conv = res.value[0], float(res.error[0]), bool(res.converged[0])
    return MeasureEstimate(np.asarray(value, dtype=float), error, max(counter[0], 1),
                           conv and flags["radial_ok"])
