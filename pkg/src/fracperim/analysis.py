"""Experiments built on the operators: variations on balls, normals,
blow-ups, boundary probes, identity checks and mollification.

Outer integrals over balls and boxes go through
:func:`fracperim.quadrature.volume_integral`; the integrand at each outer
point is a batched ray-engine evaluation whose own error bound is carried
into the outer error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate

from .fields import FieldSpec
from .fracops import gradient_of, gradient_of_product, value_at
from .geometry import (Ball, Complement, EmptySet, HalfSpace, Intersection, IntervalUnion, SetSpec, WholeSpace,
                       _pts, tube)
from .kernel import AlphaContext, ball_volume, make_context, sphere_area
from .quadrature import (BatchEstimate, MeasureEstimate, QuadratureConfig, RayTerms, adaptive_cubature,
                         ray_integral, sphere_cells, volume_integral)

__all__ = [
    "BlowupReport",
    "GaussGreenReport",
    "IbpReport",
    "NormalReport",
    "PreciseReport",
    "ball_average",
    "blowup_experiment",
    "corner_probe",
    "cone_ratio",
    "frac_normal",
    "halfspace_ball_integral",
    "halfspace_variation_target",
    "leibniz_residuals",
    "mollified_indicator",
    "mollifier_constant",
    "mollify_value",
    "nl_self_residuals",
    "precise_representative",
    "variation_on_ball",
    "verify_gauss_green",
    "verify_ibp",
    "verify_leibniz_pointwise",
    "verify_smoothing",
    "verify_total_zero",
    "verify_zero_average_nl",
]


# ---------------------------------------------------------------------------
# half-space reference values


def halfspace_ball_integral(n: int, alpha: float) -> float:
    """``int_{B_1} |y_n|^-alpha dy = |B^{n-1}_1| B((1-alpha)/2, (n+1)/2)``."""
    a = (1.0 - alpha) / 2.0
    b = (n + 1) / 2.0
    beta = math.exp(math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
    return ball_volume(n - 1) * beta if n > 1 else beta


def halfspace_variation_target(ctx: AlphaContext, R: float = 1.0) -> float:
    """``|D^alpha chi_H|(B_R)`` for any half-space ``H`` whose boundary passes through the centre."""
    c = make_context(1, ctx.alpha).mu / ctx.alpha
    return c * R ** (ctx.n - ctx.alpha) * halfspace_ball_integral(ctx.n, ctx.alpha)


# ---------------------------------------------------------------------------
# fractional variation on balls


def _density(E: SetSpec, ctx: AlphaContext, cfg: QuadratureConfig, inner_tol: float, with_norm: bool = True):
    """Outer integrand ``p -> (mu grad chi_E(p), |mu grad chi_E(p)|)`` with inner errors."""
    terms = RayTerms(sets=(E,))

    def g(p):
        b = ray_integral(terms, p, ctx.alpha, cfg, check_boundary=False, rel_tol=inner_tol)
        v = ctx.mu * b.value
        if with_norm:
            v = np.concatenate([v, np.linalg.norm(v, axis=1)[:, None]], axis=1)
        return v, ctx.mu * b.error * (math.sqrt(2.0) if with_norm else 1.0), b.evaluations

    return g


def variation_on_ball(E: SetSpec, center, R: float, ctx: AlphaContext, cfg: QuadratureConfig, *,
                      inner_tol: float | None = None) -> tuple[MeasureEstimate, MeasureEstimate]:
    """``(int_{B_R} grad^alpha chi_E, int_{B_R} |grad^alpha chi_E|)`` over ``B_R(center)``."""
    n = ctx.n
    if E.n != n:
        raise ValueError("dimension mismatch between set and context")
    center = _pts(center, n)[0]
    if isinstance(E, (WholeSpace, EmptySet)):
        z = MeasureEstimate(np.zeros(n), 0.0, 1)
        return z, MeasureEstimate(0.0, 0.0, 1)
    inner_tol = cfg.tol / 10.0 if inner_tol is None else inner_tol
    res = volume_integral(_density(E, ctx, cfg, inner_tol), Ball(center, R), cfg, singular=[E], alpha=ctx.alpha,
                          ncomp=n + 1, center=center)
    v = np.asarray(res.value, dtype=float)
    vec = MeasureEstimate(v[:n].copy(), res.abs_error_estimate, res.evaluations, res.converged)
    tot = MeasureEstimate(float(v[n]), res.abs_error_estimate, res.evaluations, res.converged)
    return vec, tot


# ---------------------------------------------------------------------------
# normals, blow-ups and boundary probes


@dataclass
class NormalReport:
    """Ratios ``D^alpha chi_E(B_r(x)) / |D^alpha chi_E|(B_r(x))`` along a radius ladder.

    ``bars`` bound the error of each ratio; ``flagged`` lists radii whose
    bar exceeds 10% of the magnitude.
    """

    point: np.ndarray
    radii: list
    ratios: list
    magnitudes: list
    bars: list
    vectors: list
    totals: list
    limit_estimate: np.ndarray | None
    converged: bool
    threshold: float
    flagged: list = field(default_factory=list)
    cone_value: float | None = None

    @property
    def plateau(self) -> bool:
        """True if the last two magnitudes differ by less than ``threshold``."""
        return len(self.magnitudes) >= 2 and abs(self.magnitudes[-1] - self.magnitudes[-2]) < self.threshold


def _check_ladder(radii):
    r = [float(v) for v in radii]
    if not r or any(v <= 0 for v in r) or any(b >= a for a, b in zip(r, r[1:])):
        raise ValueError("radii must be positive and strictly decreasing")
    return r


def _ladder_variations(E, x, radii, R, ctx, cfg, inner_tol):
    """Variations of the blow-ups ``(E - x)/r`` on ``B_R(0)`` for each ``r``."""
    out = []
    for r in radii:
        out.append(variation_on_ball(E.rescaled(x, r), np.zeros(ctx.n), R, ctx, cfg, inner_tol=inner_tol))
    return out


def frac_normal(E: SetSpec, x, radii, ctx: AlphaContext, cfg: QuadratureConfig, *, threshold: float = 0.02,
                inner_tol: float | None = None) -> NormalReport:
    """Estimate the inner fractional normal at ``x`` along a decreasing radius ladder.

    Each ratio is computed on the blow-up ``(E - x)/r`` over ``B_1``, which
    has the same ratio by scaling; the reported vectors and totals are
    rescaled back by ``r^(n - alpha)``.
    """
    x = _pts(x, ctx.n)[0]
    radii = _check_ladder(radii)
    ratios, mags, bars, vecs, tots, flagged = [], [], [], [], [], []
    for r, (vec, tot) in zip(radii, _ladder_variations(E, x, radii, 1.0, ctx, cfg, inner_tol)):
        s = r ** (ctx.n - ctx.alpha)
        t = float(tot.value)
        if t > 0:
            ratio = np.asarray(vec.value) / t
            bar = (vec.abs_error_estimate + float(np.linalg.norm(ratio)) * tot.abs_error_estimate) / t
        else:
            ratio, bar = np.zeros(ctx.n), math.inf
        m = float(np.linalg.norm(ratio))
        ratios.append(ratio)
        mags.append(m)
        bars.append(bar)
        vecs.append(np.asarray(vec.value) * s)
        tots.append(t * s)
        if bar > 0.1 * m:
            flagged.append(r)
    converged = (len(ratios) >= 2 and float(np.linalg.norm(ratios[-1] - ratios[-2])) < threshold
                 and mags[-1] > 0.99)
    return NormalReport(x, radii, ratios, mags, bars, vecs, tots, ratios[-1].copy() if converged else None,
                        converged, threshold, flagged)


def cone_ratio(cone: SetSpec, ctx: AlphaContext, cfg: QuadratureConfig, *,
               inner_tol: float | None = None) -> MeasureEstimate:
    """``|D^alpha chi_C(B_1)| / |D^alpha chi_C|(B_1)`` for a cone with vertex at the origin.

    Cones are invariant under dilation, so this is the ratio magnitude at
    every radius.
    """
    vec, tot = variation_on_ball(cone, np.zeros(ctx.n), 1.0, ctx, cfg, inner_tol=inner_tol)
    t = float(tot.value)
    m = float(np.linalg.norm(vec.value)) / t
    bar = (vec.abs_error_estimate + m * tot.abs_error_estimate) / t
    return MeasureEstimate(m, bar, vec.evaluations, vec.converged and tot.converged)


def corner_probe(E: SetSpec, x, radii, ctx: AlphaContext, cfg: QuadratureConfig, *, cone: SetSpec | None = None,
                 threshold: float = 0.02, inner_tol: float | None = None) -> NormalReport:
    """Ratio magnitudes at a boundary point along a ladder, with the tangent-cone value.

    ``cone`` is the tangent cone of ``E`` at ``x`` translated to the origin;
    when given its ratio magnitude is stored as ``cone_value``.
    """
    report = frac_normal(E, x, radii, ctx, cfg, threshold=threshold, inner_tol=inner_tol)
    if cone is not None:
        report.cone_value = float(cone_ratio(cone, ctx, cfg, inner_tol=inner_tol).value)
    return report


@dataclass
class BlowupReport:
    """Variations of the blow-ups ``(E - x)/r_k`` on ``B_R`` against the half-space target."""

    point: np.ndarray
    radii: list
    R: float
    vectors: list
    totals: list
    bars: list
    normal: np.ndarray
    target_total: float
    target_vector: np.ndarray
    deviations: list
    vector_deviations: list

    @property
    def decreasing(self) -> bool:
        d = self.deviations
        return all(b < a for a, b in zip(d, d[1:]))

    @property
    def converged(self) -> bool:
        """Deviations nonincreasing over the last three ladder steps."""
        d = self.deviations[-3:]
        return len(d) >= 2 and all(b <= a for a, b in zip(d, d[1:]))


def blowup_experiment(E: SetSpec, x, radii, R: float, ctx: AlphaContext, cfg: QuadratureConfig, *,
                      normal=None, inner_tol: float | None = None) -> BlowupReport:
    """Compare ``D^alpha chi_{(E-x)/r}(B_R)`` and ``|D^alpha chi_{(E-x)/r}|(B_R)`` with a half-space.

    The comparison half-space has inner normal ``normal``; by default the
    direction of the vector variation at the smallest radius is used.
    """
    x = _pts(x, ctx.n)[0]
    radii = _check_ladder(radii)
    res = _ladder_variations(E, x, radii, R, ctx, cfg, inner_tol)
    vecs = [np.asarray(v.value, dtype=float) for v, _ in res]
    tots = [float(t.value) for _, t in res]
    bars = [v.abs_error_estimate for v, _ in res]
    if normal is None:
        nu = vecs[-1] / max(float(np.linalg.norm(vecs[-1])), 1e-300)
    else:
        nu = np.asarray(normal, dtype=float)
        nu = nu / np.linalg.norm(nu)
    target = halfspace_variation_target(ctx, R)
    dev = [abs(t - target) / target for t in tots]
    vdev = [float(np.linalg.norm(v - target * nu)) / target for v in vecs]
    return BlowupReport(x, radii, float(R), vecs, tots, bars, nu, target, target * nu, dev, vdev)


# ---------------------------------------------------------------------------
# far-field tails for whole-space integrals


def _shell_monopole(E: SetSpec, c: np.ndarray, Rb: float, alpha: float) -> np.ndarray:
    """``int_{E, |x-c| > Rb} (x - c)/|x - c|^(n+alpha+1) dx`` for the supported set types."""
    n = E.n
    bb = E.bounding_ball()
    if isinstance(E, (WholeSpace, EmptySet)):
        return np.zeros(n)
    if bb is not None and np.linalg.norm(np.asarray(bb[0]) - c) + bb[1] <= Rb:
        return np.zeros(n)
    if isinstance(E, Complement):
        ib = E.inner.bounding_ball()
        if ib is not None and np.linalg.norm(np.asarray(ib[0]) - c) + ib[1] <= Rb:
            return np.zeros(n)
    if isinstance(E, HalfSpace):
        h = float((E.x0 - c) @ E.nu)
        if abs(h) >= Rb:
            raise ValueError("the truncation ball must cross the half-space boundary")
        if n == 1:
            cap = lambda t: 1.0  # noqa: E731
        elif n == 2:
            cap = lambda t: 2.0 * math.sqrt(max(0.0, 1.0 - t * t))  # noqa: E731
        else:
            cap = lambda t: math.pi * max(0.0, 1.0 - t * t)  # noqa: E731
        # r = Rb w^(-1/alpha) maps [Rb, inf) onto (0, 1]
        val, _ = integrate.quad(lambda w: cap(h / (Rb * w ** (-1.0 / alpha))), 0.0, 1.0, epsabs=0.0, epsrel=1e-12)
        return E.nu * val * Rb**-alpha / alpha
    if isinstance(E, IntervalUnion):
        def tail(lo, hi):  # int_lo^hi u^(-1-alpha) du restricted to u > Rb
            lo = max(lo, Rb)
            return (lo**-alpha - (hi**-alpha if math.isfinite(hi) else 0.0)) / alpha if hi > lo else 0.0

        total = 0.0
        for a, b in E.endpoints:
            a, b = a - float(c[0]), b - float(c[0])
            total += tail(a, b) - tail(-b, -a)
        return np.array([total])
    raise NotImplementedError(f"far field not available for {type(E).__name__}")


def _volume(F: SetSpec, cfg: QuadratureConfig) -> float:
    if isinstance(F, Ball):
        return ball_volume(F.n) * F.r**F.n
    if isinstance(F, IntervalUnion):
        return float(sum(b - a for a, b in F.endpoints))
    res = volume_integral(lambda p: np.ones(len(p)), F, cfg.replace(tol=1e-10), ncomp=1)
    return float(np.atleast_1d(res.value)[0])


def _dipole_bound(mu, vol, rho, n, alpha, Rb):
    """Bound on ``int_{|x-c|>Rb} |mu int_F (K(y-x) - K(c-x)) dy| dx`` for ``F`` inside ``B_rho(c)``."""
    s = n + alpha
    return (mu * vol * rho * s * sphere_area(n) * (Rb / (Rb - rho)) ** (n - 1)
            * (Rb - rho) ** (-1.0 - alpha) / (1.0 + alpha))


def _truncation(F: SetSpec, tail_factor: float):
    bb = F.bounding_ball()
    if bb is None:
        raise ValueError("a bounded set is required")
    c = np.asarray(bb[0], dtype=float)
    rho = max(float(bb[1]), 1e-300)
    return c, rho, tail_factor * rho


# ---------------------------------------------------------------------------
# Gauss-Green and zero totals


@dataclass
class GaussGreenReport:
    lhs: MeasureEstimate
    rhs: MeasureEstimate

    @property
    def difference(self) -> float:
        return float(np.linalg.norm(np.asarray(self.lhs.value) - np.asarray(self.rhs.value)))

    @property
    def bars(self) -> float:
        return self.lhs.abs_error_estimate + self.rhs.abs_error_estimate


def verify_gauss_green(E: SetSpec, F: SetSpec, ctx: AlphaContext, cfg: QuadratureConfig, *,
                       tail_factor: float = 256.0, inner_tol: float | None = None) -> GaussGreenReport:
    """Both sides of ``int_F grad^alpha chi_E dx = -int_E grad^alpha chi_F dx`` for bounded ``F``.

    The right side is integrated over ``E`` cut to the ball of radius
    ``tail_factor * rho`` around ``F`` (``F`` inside ``B_rho(c)``); outside it
    the density of ``F`` is replaced by its monopole term, integrated in
    closed form, and the dipole remainder is added to the error.
    """
    n = ctx.n
    inner_tol = cfg.tol / 10.0 if inner_tol is None else inner_tol
    c, rho, Rb = _truncation(F, tail_factor)
    if isinstance(E, (WholeSpace, EmptySet)):
        lhs = MeasureEstimate(np.zeros(n), 0.0, 1)
    else:
        lhs = volume_integral(_density(E, ctx, cfg, inner_tol, with_norm=False), F, cfg, singular=[E, F],
                              alpha=ctx.alpha, ncomp=n)
    region = Intersection(E, Ball(c, Rb)) if not isinstance(E, WholeSpace) else Ball(c, Rb)
    if isinstance(E, EmptySet):
        return GaussGreenReport(lhs, MeasureEstimate(np.zeros(n), 0.0, 1))
    box = volume_integral(_density(F, ctx, cfg, inner_tol, with_norm=False), region, cfg, singular=[F, E],
                          alpha=ctx.alpha, ncomp=n, center=c)
    vol = _volume(F, cfg)
    mono = ctx.mu * vol * _shell_monopole(E, c, Rb, ctx.alpha)
    bound = _dipole_bound(ctx.mu, vol, rho, n, ctx.alpha, Rb)
    rhs = MeasureEstimate(-np.asarray(box.value) + mono, box.abs_error_estimate + bound, box.evaluations,
                          box.converged)
    return GaussGreenReport(lhs, rhs)


def verify_zero_average_nl(E: SetSpec, F: SetSpec, ctx: AlphaContext, cfg: QuadratureConfig, *,
                           tail_factor: float = 256.0, inner_tol: float | None = None) -> MeasureEstimate:
    """``int grad^alpha_NL(chi_E, chi_F) dx`` over the whole space (zero in exact arithmetic)."""
    n = ctx.n
    if isinstance(E, (WholeSpace, EmptySet)):
        return MeasureEstimate(np.zeros(n), 0.0, 1)
    inner_tol = cfg.tol / 10.0 if inner_tol is None else inner_tol
    c, rho, Rb = _truncation(F, tail_factor)
    terms = RayTerms(sets=(E, F))

    def g(p):
        b = ray_integral(terms, p, ctx.alpha, cfg, check_boundary=False, rel_tol=inner_tol)
        return ctx.mu * b.value, ctx.mu * b.error, b.evaluations

    box = volume_integral(g, Ball(c, Rb), cfg, singular=[E, F], alpha=ctx.alpha, ncomp=n, center=c)
    vol = _volume(F, cfg)
    mono = ctx.mu * vol * _shell_monopole(E, c, Rb, ctx.alpha)
    bound = _dipole_bound(ctx.mu, vol, rho, n, ctx.alpha, Rb)
    return MeasureEstimate(np.asarray(box.value) + mono, box.abs_error_estimate + bound, box.evaluations,
                           box.converged)


def verify_total_zero(E: SetSpec, ctx: AlphaContext, cfg: QuadratureConfig, *, tail_factor: float = 256.0,
                      inner_tol: float | None = None) -> MeasureEstimate:
    """``int grad^alpha chi_E dx`` over the whole space for bounded ``E`` (zero in exact arithmetic).

    The integral over the complement of the truncation ball has a vanishing
    monopole term, so only the dipole remainder enters, as an error.
    """
    n = ctx.n
    inner_tol = cfg.tol / 10.0 if inner_tol is None else inner_tol
    c, rho, Rb = _truncation(E, tail_factor)
    box = volume_integral(_density(E, ctx, cfg, inner_tol, with_norm=False), Ball(c, Rb), cfg, singular=[E],
                          alpha=ctx.alpha, ncomp=n, center=c)
    bound = _dipole_bound(ctx.mu, _volume(E, cfg), rho, n, ctx.alpha, Rb)
    return MeasureEstimate(np.asarray(box.value), box.abs_error_estimate + bound, box.evaluations, box.converged)


# ---------------------------------------------------------------------------
# integration by parts and Leibniz rules


@dataclass
class IbpReport:
    residual: MeasureEstimate
    f_div: MeasureEstimate
    phi_grad: MeasureEstimate
    scale: float

    @property
    def relative(self) -> float:
        return abs(float(self.residual.value)) / self.scale if self.scale > 0 else 0.0


def _field_breaks(*fields):
    out = []
    for f in fields:
        if f.support is not None:
            out.append(f.support)
        out.extend(f.break_sets)
    return out


def verify_ibp(f: FieldSpec, phi: FieldSpec, ctx: AlphaContext, cfg: QuadratureConfig, *,
               inner_tol: float | None = None) -> IbpReport:
    """Residual of ``int f div^alpha phi dx + int phi . grad^alpha f dx = 0``.

    Each product is integrated over the support of its first factor.  The
    scale is ``|f|_inf int |div^alpha phi| + |phi|_inf int |grad^alpha f|`` over
    the same supports.
    """
    if f.is_vector or not phi.is_vector:
        raise ValueError("verify_ibp expects a scalar f and a vector phi")
    n = ctx.n
    inner_tol = cfg.tol / 10.0 if inner_tol is None else inner_tol
    if f.constant or phi.constant:
        z = MeasureEstimate(0.0, 0.0, 1)
        return IbpReport(z, z, z, 0.0)
    div_terms = RayTerms(vector=phi, mode="div")
    grad_terms = RayTerms(fields=(f,))
    brk = _field_breaks(f, phi)

    def g_div(p):
        b = ray_integral(div_terms, p, ctx.alpha, cfg, check_boundary=False, rel_tol=inner_tol)
        d = ctx.mu * b.value[:, 0]
        fv = f.evaluator(p)
        return np.stack([fv * d, np.abs(d)], axis=1), ctx.mu * b.error * (np.abs(fv) + 1.0), b.evaluations

    def g_grad(p):
        b = ray_integral(grad_terms, p, ctx.alpha, cfg, check_boundary=False, rel_tol=inner_tol)
        gr = ctx.mu * b.value
        pv = phi.evaluator(p)
        val = np.einsum("ij,ij->i", pv, gr)
        return (np.stack([val, np.linalg.norm(gr, axis=1)], axis=1),
                ctx.mu * b.error * (np.linalg.norm(pv, axis=1) + 1.0), b.evaluations)

    a = volume_integral(g_div, f.support, cfg, singular=brk, alpha=ctx.alpha, ncomp=2)
    b = volume_integral(g_grad, phi.support, cfg, singular=brk, alpha=ctx.alpha, ncomp=2)
    av, bv = np.asarray(a.value), np.asarray(b.value)
    f_div = MeasureEstimate(float(av[0]), a.abs_error_estimate, a.evaluations, a.converged)
    phi_grad = MeasureEstimate(float(bv[0]), b.abs_error_estimate, b.evaluations, b.converged)
    scale = f.sup_norm * float(av[1]) + phi.sup_norm * float(bv[1])
    return IbpReport(f_div + phi_grad, f_div, phi_grad, scale)


def leibniz_residuals(f, g, X, ctx: AlphaContext, cfg: QuadratureConfig) -> BatchEstimate:
    """``grad(fg) - f grad g - g grad f - grad_NL(f, g)`` at the rows of ``X``.

    ``f`` and ``g`` are sets or scalar fields; all terms include ``mu``.
    """
    X = _pts(X, ctx.n)
    fg = gradient_of(gradient_of_product(f, g), X, ctx, cfg)
    gf = gradient_of(f, X, ctx, cfg)
    gg = gradient_of(g, X, ctx, cfg)
    from .fracops import _split

    sets, fields = _split(f, g)
    nl = ray_integral(RayTerms(sets=sets, fields=fields), X, ctx.alpha, cfg)
    fx, gx = value_at(f, X), value_at(g, X)
    value = fg.value - fx[:, None] * gg.value - gx[:, None] * gf.value - ctx.mu * nl.value
    error = fg.error + np.abs(fx) * gg.error + np.abs(gx) * gf.error + ctx.mu * nl.error
    conv = fg.converged & gf.converged & gg.converged & nl.converged
    return BatchEstimate(value, error, fg.evaluations + gf.evaluations + gg.evaluations + nl.evaluations, conv)


def verify_leibniz_pointwise(f, g, x, ctx: AlphaContext, cfg: QuadratureConfig) -> MeasureEstimate:
    """Leibniz residual at one point (an n-vector with its error bar)."""
    return leibniz_residuals(f, g, _pts(x, ctx.n)[:1], ctx, cfg).item(0)


def nl_self_residuals(E: SetSpec, X, ctx: AlphaContext, cfg: QuadratureConfig) -> BatchEstimate:
    """``grad_NL(chi_E, chi_E)(x) - (1 - 2 chi_E(x)) grad chi_E(x)`` at the rows of ``X``."""
    X = _pts(X, ctx.n)
    nl = ray_integral(RayTerms(sets=(E, E)), X, ctx.alpha, cfg)
    gr = ray_integral(RayTerms(sets=(E,)), X, ctx.alpha, cfg)
    s = 1.0 - 2.0 * E.contains(X).astype(float)
    value = ctx.mu * (nl.value - s[:, None] * gr.value)
    return BatchEstimate(value, ctx.mu * (nl.error + gr.error), nl.evaluations + gr.evaluations,
                         nl.converged & gr.converged)


# ---------------------------------------------------------------------------
# mollification and ball averages


_MOLLIFIER_POWER = 3


def mollifier_constant(n: int) -> float:
    """``C_n`` with ``int_{B_1} C_n (1 - |z|^2)^3 dz = 1``, exact up to rounding."""
    # int_0^1 s^(n-1) (1 - s^2)^3 ds = B(n/2, 4) / 2
    beta = math.exp(math.lgamma(n / 2) + math.lgamma(_MOLLIFIER_POWER + 1) - math.lgamma(n / 2 + _MOLLIFIER_POWER + 1))
    return 1.0 / (sphere_area(n) * beta / 2.0)


def _radial_weight(n: int, kind: str) -> Polynomial:
    """Antiderivative of the normalized radial weight on ``[0, 1]``."""
    s = Polynomial([0.0, 1.0])
    if kind == "average":
        p = n * s ** (n - 1)
    else:
        p = s ** (n - 1) * (1 - s**2) ** _MOLLIFIER_POWER
        p = p / p.integ()(1.0)
    return p.integ()


def _polar_average(E: SetSpec, X, eps: float, kind: str, cfg: QuadratureConfig, tol: float) -> BatchEstimate:
    """``(1/|S|) int_S int_0^1 chi_E(x + eps s theta) w(s) ds dtheta`` for every row of ``X``.

    The radial integral is exact: along each ray ``chi_E`` is a step function
    and the weight is a polynomial with a known antiderivative.
    """
    X = _pts(X, E.n)
    T, n = X.shape
    P = _radial_weight(n, kind)
    area = sphere_area(n)

    def radial(idx, dirs):
        prof = E.ray_profile(X[idx], dirs)
        s = np.minimum(prof.breaks / eps, 1.0)
        w = P(s)
        lo = np.concatenate([np.zeros((len(idx), 1)), w], axis=1)
        hi = np.concatenate([w, np.full((len(idx), 1), P(1.0))], axis=1)
        return np.einsum("ij,ij->i", prof.values, hi - lo)

    if n == 1:
        idx = np.concatenate([np.arange(T), np.arange(T)])
        dirs = np.concatenate([np.ones((T, 1)), -np.ones((T, 1))])
        R = radial(idx, dirs)
        return BatchEstimate(((R[:T] + R[T:]) / area)[:, None], np.zeros(T), 2 * T, np.ones(T, dtype=bool))
    task, lo, hi, to_dirs = sphere_cells([E], X, cfg.base_cell)

    def integrand(t, p):
        return radial(t, to_dirs(t, p))[:, None] / area

    res = adaptive_cubature(integrand, task, lo, hi, T, 1, rel_tol=tol, abs_tol=tol, max_depth=cfg.max_depth,
                            max_evals=cfg.max_evaluations)
    return BatchEstimate(res.value, res.error, res.evaluations, res.converged)


def _field_average(f: FieldSpec, x, eps, kind, cfg, tol):
    n = f.n
    x = _pts(x, n)[0]
    if kind == "average":
        w = lambda r: np.full_like(r, 1.0 / (ball_volume(n) * eps**n))  # noqa: E731
    else:
        C = mollifier_constant(n)
        w = lambda r: C * np.clip(1.0 - (r / eps) ** 2, 0.0, None) ** _MOLLIFIER_POWER / eps**n  # noqa: E731

    def g(p):
        r = np.linalg.norm(p - x, axis=1)
        return f.evaluator(p) * w(r)

    res = volume_integral(g, Ball(x, eps), cfg, singular=_field_breaks(f), alpha=0.0, ncomp=1, rel_tol=tol,
                          abs_tol=tol, center=x)
    return MeasureEstimate(float(np.atleast_1d(res.value)[0]), res.abs_error_estimate, res.evaluations,
                           res.converged)


def mollify_value(u, eps: float, x, cfg: QuadratureConfig, *, tol: float = 1e-10) -> MeasureEstimate:
    """``(rho_eps * u)(x)`` with ``rho(z) = C_n (1 - |z|^2)^3`` on ``B_1``.

    ``u`` is a set (its indicator) or a scalar field.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if isinstance(u, SetSpec):
        return _polar_average(u, x, eps, "mollifier", cfg, tol).item(0, squeeze=True)
    return _field_average(u, x, eps, "mollifier", cfg, tol)


def ball_average(u, x, r: float, cfg: QuadratureConfig, *, tol: float = 1e-10) -> MeasureEstimate:
    """Average of ``u`` (set indicator or scalar field) over ``B_r(x)``."""
    if not r > 0:
        raise ValueError("radius must be positive")
    if isinstance(u, SetSpec):
        return _polar_average(u, x, r, "average", cfg, tol).item(0, squeeze=True)
    return _field_average(u, x, r, "average", cfg, tol)


@dataclass
class PreciseReport:
    """Ball averages along a ladder and the precise-representative verdict."""

    point: np.ndarray
    radii: list
    averages: list
    limit: float | None
    mollified: float
    agrees: bool
    tolerance: float

    @property
    def in_Ru(self) -> bool:
        return self.limit is not None


def precise_representative(u, x, radii, cfg: QuadratureConfig, *, tolerance: float = 0.02) -> PreciseReport:
    """Ball averages of ``u`` around ``x``; the limit is reported when the last two agree.

    The mollified value at ``eps = min(radii)`` is computed alongside, and
    ``agrees`` records whether it matches the limit within ``tolerance``.
    """
    radii = _check_ladder(radii)
    n = u.n
    x = _pts(x, n)[0]
    avgs = [float(ball_average(u, x, r, cfg).value) for r in radii]
    limit = avgs[-1] if len(avgs) >= 2 and abs(avgs[-1] - avgs[-2]) < tolerance else None
    moll = float(mollify_value(u, radii[-1], x, cfg).value)
    agrees = limit is not None and abs(moll - limit) < tolerance
    return PreciseReport(x, radii, avgs, limit, moll, agrees, tolerance)


def mollified_indicator(E: SetSpec, eps: float, cfg: QuadratureConfig, *, tol: float = 1e-11) -> FieldSpec:
    """The bounded function ``rho_eps * chi_E - chi_E`` as a field supported in a tube around ``dE``.

    It is smooth on each side of ``dE`` (where it jumps by one) and vanishes
    outside the ``eps``-tube.  Values are computed by the exact polar
    average to absolute accuracy ``tol``.
    """
    T = tube(E, eps)
    n = E.n
    # |grad (rho_eps * chi_E)| <= int |grad rho_eps| = C_n |S| int_0^1 6 s^n (1-s^2)^2 ds / eps
    s = Polynomial([0.0, 1.0])
    lip = mollifier_constant(n) * sphere_area(n) * (6 * s**n * (1 - s**2) ** 2).integ()(1.0) / eps

    def ev(p):
        out = np.zeros(len(p))
        inside = T.contains(p)
        if inside.any():
            q = p[inside]
            out[inside] = _polar_average(E, q, eps, "mollifier", cfg, tol).value[:, 0] - E.contains(q)
        return out

    bb = T.bounding_ball()
    center, radius = (np.asarray(bb[0], dtype=float), float(bb[1])) if bb is not None else (np.zeros(n), math.inf)
    return FieldSpec(n, "scalar", ev, lip, center, radius, "mollified_indicator", 1.0, (E, T), False, T)


def verify_smoothing(E: SetSpec, eps: float, X, ctx: AlphaContext, cfg: QuadratureConfig, *,
                     inner_tol: float | None = None) -> BatchEstimate:
    """``grad^alpha(rho_eps * chi_E)(x) - (rho_eps * grad^alpha chi_E)(x)`` at the rows of ``X``.

    The left term is ``grad^alpha chi_E + grad^alpha w`` with ``w`` from
    :func:`mollified_indicator` (field engine); the right term integrates
    the set-engine density against ``rho_eps`` over ``B_eps(x)``.
    """
    X = _pts(X, ctx.n)
    inner_tol = cfg.tol / 10.0 if inner_tol is None else inner_tol
    n = ctx.n
    if isinstance(E, (WholeSpace, EmptySet)):
        z = np.zeros((len(X), n))
        return BatchEstimate(z, np.zeros(len(X)), 1, np.ones(len(X), dtype=bool))
    w = mollified_indicator(E, eps, cfg)
    left_set = ray_integral(RayTerms(sets=(E,)), X, ctx.alpha, cfg)
    left_w = ray_integral(RayTerms(fields=(w,)), X, ctx.alpha, cfg)
    C = mollifier_constant(n)
    vals = np.zeros((len(X), n))
    errs = np.zeros(len(X))
    evals = left_set.evaluations + left_w.evaluations
    conv = left_set.converged & left_w.converged
    dens = _density(E, ctx, cfg, inner_tol, with_norm=False)
    for i, x in enumerate(X):

        def g(p, x=x):
            v, e, ev = dens(p)
            k = C * np.clip(1.0 - np.einsum("ij,ij->i", p - x, p - x) / eps**2, 0.0, None) ** 3 / eps**n
            return v * k[:, None], e * k, ev

        res = volume_integral(g, Ball(x, eps), cfg, singular=[E], alpha=ctx.alpha, ncomp=n, center=x)
        vals[i] = ctx.mu * (left_set.value[i] + left_w.value[i]) - np.asarray(res.value)
        errs[i] = ctx.mu * (left_set.error[i] + left_w.error[i]) + res.abs_error_estimate
        evals += res.evaluations
        conv[i] &= res.converged
    return BatchEstimate(vals, errs, evals, conv)
