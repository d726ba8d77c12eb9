"""Fractional gradient, divergence, their non-local variants and perimeters.

Every operator multiplies a whole-space singular integral from
:mod:`fracperim.quadrature` by the normalization ``mu_{n,alpha}`` of the
context.  Indicator arguments are given as :class:`SetSpec` objects, Lipschitz
test functions as :class:`FieldSpec` objects.
"""

from __future__ import annotations

import numpy as np

from .fields import FieldSpec, masked_field, product_field
from .geometry import Complement, Intersection, SetSpec, WholeSpace, _pts
from .kernel import AlphaContext
from .quadrature import (BatchEstimate, MeasureEstimate, QuadratureConfig, RayTerms, _check_dim,
                         mc_ray_integral, ray_integral, singular_integral_field, singular_integral_set_batch,
                         volume_integral)

__all__ = [
    "FieldSpec",
    "frac_divergence",
    "frac_gradient",
    "frac_gradient_set",
    "frac_gradient_set_batch",
    "frac_nl_divergence",
    "frac_nl_gradient",
    "frac_perimeter",
    "frac_perimeter_local",
    "gradient_of",
    "gradient_of_product",
    "mass_batch",
    "value_at",
]


def _scale_batch(b: BatchEstimate, mu: float) -> BatchEstimate:
    return BatchEstimate(b.value * mu, b.error * mu, b.evaluations, b.converged)


def frac_gradient(f: FieldSpec, x, ctx: AlphaContext, cfg: QuadratureConfig) -> MeasureEstimate:
    """``grad^alpha f(x)`` for a scalar Lipschitz field."""
    return singular_integral_field(f, x, ctx, cfg).scaled(ctx.mu)


def frac_gradient_set_batch(E: SetSpec, X, ctx: AlphaContext, cfg: QuadratureConfig,
                            check_boundary: bool = True) -> BatchEstimate:
    """``grad^alpha chi_E`` at every row of ``X``."""
    return _scale_batch(singular_integral_set_batch(E, X, ctx, cfg, check_boundary), ctx.mu)


def frac_gradient_set(E: SetSpec, x, ctx: AlphaContext, cfg: QuadratureConfig) -> MeasureEstimate:
    """``grad^alpha chi_E(x)`` for ``x`` off the boundary of ``E``."""
    return frac_gradient_set_batch(E, _pts(x, E.n)[:1], ctx, cfg).item(0)


def frac_divergence(phi: FieldSpec, x, ctx: AlphaContext, cfg: QuadratureConfig) -> MeasureEstimate:
    """``div^alpha phi(x)`` for a vector Lipschitz field."""
    if not phi.is_vector:
        raise ValueError("frac_divergence expects a vector field")
    _check_dim(phi.n, ctx)
    res = ray_integral(RayTerms(vector=phi, mode="div"), _pts(x, phi.n)[:1], ctx.alpha, cfg)
    return res.item(0, squeeze=True).scaled(ctx.mu)


def _split(*factors):
    sets, fields = [], []
    for u in factors:
        if isinstance(u, SetSpec):
            sets.append(u)
        elif isinstance(u, FieldSpec):
            if u.is_vector:
                raise ValueError("scalar argument expected")
            fields.append(u)
        else:
            raise TypeError(f"expected SetSpec or FieldSpec, got {type(u).__name__}")
    return tuple(sets), tuple(fields)


def frac_nl_gradient(f, g, x, ctx: AlphaContext, cfg: QuadratureConfig, *, method: str = "quadrature",
                     samples: int | None = None, seed: int | None = None) -> MeasureEstimate:
    """``grad^alpha_NL(f, g)(x) = mu int (f(y)-f(x)) (g(y)-g(x)) (y-x)/|y-x|^(n+alpha+1) dy``.

    ``f`` and ``g`` are scalar fields or sets (indicators).  ``method="mc"``
    uses the Monte Carlo engine instead of the ray quadrature.
    """
    sets, fields = _split(f, g)
    terms = RayTerms(sets=sets, fields=fields)
    _check_dim(terms.n, ctx)
    if method == "mc":
        return mc_ray_integral(terms, x, ctx.alpha, cfg, samples, seed).scaled(ctx.mu)
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    return ray_integral(terms, _pts(x, terms.n)[:1], ctx.alpha, cfg).item(0).scaled(ctx.mu)


def frac_nl_divergence(f, phi: FieldSpec, x, ctx: AlphaContext, cfg: QuadratureConfig, *,
                       method: str = "quadrature", samples: int | None = None,
                       seed: int | None = None) -> MeasureEstimate:
    """``div^alpha_NL(f, phi)(x) = mu int (f(y)-f(x)) (phi(y)-phi(x)).(y-x)/|y-x|^(n+alpha+1) dy``."""
    if not isinstance(phi, FieldSpec) or not phi.is_vector:
        raise ValueError("phi must be a vector field")
    sets, fields = _split(f)
    terms = RayTerms(sets=sets, fields=fields, vector=phi, mode="div")
    _check_dim(terms.n, ctx)
    if method == "mc":
        est = mc_ray_integral(terms, x, ctx.alpha, cfg, samples, seed).scaled(ctx.mu)
        return MeasureEstimate(float(est.value[0]), est.abs_error_estimate, est.evaluations, est.converged,
                               est.std_error)
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    return ray_integral(terms, _pts(x, terms.n)[:1], ctx.alpha, cfg).item(0, squeeze=True).scaled(ctx.mu)


# ---------------------------------------------------------------------------
# helpers shared with the analysis module


def value_at(u, X) -> np.ndarray:
    """Values of a field or indicator at the rows of ``X``."""
    if isinstance(u, SetSpec):
        return u.contains(X).astype(float)
    return u.evaluator(X)


def gradient_of(u, X, ctx: AlphaContext, cfg: QuadratureConfig, check_boundary: bool = True) -> BatchEstimate:
    """``grad^alpha u`` at the rows of ``X`` for a set or a scalar field (with ``mu``)."""
    X = _pts(X, ctx.n)
    if isinstance(u, SetSpec):
        return frac_gradient_set_batch(u, X, ctx, cfg, check_boundary)
    sets, fields = _split(u)
    return _scale_batch(ray_integral(RayTerms(fields=fields), X, ctx.alpha, cfg, check_boundary=check_boundary),
                        ctx.mu)


def gradient_of_product(f, g):
    """The object representing ``f g`` for sets and scalar fields."""
    if isinstance(f, SetSpec) and isinstance(g, SetSpec):
        return Intersection(f, g)
    if isinstance(f, FieldSpec) and isinstance(g, FieldSpec):
        return product_field(f, g)
    if isinstance(f, SetSpec):
        f, g = g, f
    return masked_field(f, g)


def mass_batch(A: SetSpec, X, alpha: float, cfg: QuadratureConfig, rel_tol: float | None = None,
               check_boundary: bool = False) -> BatchEstimate:
    """``int (chi_A(y) - chi_A(x)) |y - x|^(-n-alpha) dy`` at each row of ``X``.

    Equals ``int_A |y-x|^(-n-alpha) dy`` for ``x`` outside ``A`` and
    ``-int_{A^c} |y-x|^(-n-alpha) dy`` for ``x`` inside.
    """
    return ray_integral(RayTerms(sets=(A,), mode="mass"), X, alpha, cfg, check_boundary=check_boundary,
                        rel_tol=rel_tol)


# ---------------------------------------------------------------------------
# perimeters


def _bounded(E: SetSpec) -> bool:
    return E.bounding_ball() is not None


def _interaction(region: SetSpec, target: SetSpec, ctx, cfg, singular, inner_tol, outer_tol):
    """``int_region int_target |x - y|^(-n-alpha) dy dx`` for disjoint ``region`` and ``target``."""

    def g(p):
        b = mass_batch(target, p, ctx.alpha, cfg, rel_tol=inner_tol)
        return b.value[:, 0], b.error, b.evaluations

    return volume_integral(g, region, cfg, singular=singular, alpha=ctx.alpha, ncomp=1, rel_tol=outer_tol)


def frac_perimeter(E: SetSpec, Omega: SetSpec | None, ctx: AlphaContext, cfg: QuadratureConfig, *,
                   method: str = "quadrature", samples: int | None = None, seed: int | None = None,
                   inner_tol: float | None = None) -> MeasureEstimate:
    """``P_alpha(E; Omega) = int int |chi_E(x) - chi_E(y)| |x - y|^(-n-alpha)`` off ``Omega^c x Omega^c``.

    ``Omega=None`` (or a :class:`WholeSpace`) means the whole space.  The
    quadrature method writes the double integral as
    ``2 [int_{E cap Omega} I_{E^c} + int_{E^c cap Omega} I_{E minus Omega}]`` with
    ``I_A(x) = int_A |x - y|^(-n-alpha) dy`` evaluated exactly along rays,
    and integrates the outer variable with :func:`volume_integral`.
    ``method="mc"`` samples the outer variable uniformly on a bounding ball
    and the inner one with density ``~ r^(-1-alpha)``; its variance is
    infinite for ``alpha >= 1/2``, so its standard error is unreliable there.
    The result does not include ``mu``.
    """
    _check_dim(E.n, ctx)
    whole = Omega is None or isinstance(Omega, WholeSpace)
    if whole and not _bounded(E):
        raise ValueError("perimeter may diverge: E must be bounded when Omega is the whole space")
    if not whole and not _bounded(Omega):
        raise ValueError("Omega must be bounded or the whole space")
    if method == "mc":
        return _perimeter_mc(E, None if whole else Omega, ctx, cfg, samples, seed)
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    outer_tol = cfg.tol
    inner_tol = outer_tol / 10.0 if inner_tol is None else inner_tol
    if whole:
        if E.bounding_ball() is None or E.bounding_ball()[1] == 0:
            return MeasureEstimate(0.0, 0.0, 1)
        est = _interaction(E, Complement(E), ctx, cfg, [E], inner_tol, outer_tol)
    else:
        parts = []
        region = Intersection(E, Omega)
        if region.bounding_ball() is not None:
            parts.append(_interaction(region, Complement(E), ctx, cfg, [E, Omega], inner_tol, outer_tol))
        outside = Intersection(E, Complement(Omega))
        parts.append(_interaction(Intersection(Complement(E), Omega), outside, ctx, cfg, [E, Omega],
                                  inner_tol, outer_tol))
        est = parts[0]
        for p in parts[1:]:
            est = est + p
    return MeasureEstimate(2.0 * float(np.atleast_1d(est.value)[0]), 2.0 * est.abs_error_estimate,
                           est.evaluations, est.converged)


def frac_perimeter_local(E: SetSpec, A: SetSpec, ctx: AlphaContext, cfg: QuadratureConfig, *,
                         method: str = "quadrature", samples: int | None = None, seed: int | None = None,
                         inner_tol: float | None = None) -> MeasureEstimate:
    """Local part ``P^L_alpha(E; A) = int_{E cap A} int_{A minus E} |x - y|^(-n-alpha) dy dx``."""
    _check_dim(E.n, ctx)
    bb = A.bounding_ball()
    if bb is None or not bb[1] > 0:
        raise ValueError("A degenerate: a bounded set with nonempty interior is required")
    inside = Intersection(E, A)
    if inside.bounding_ball() is None or inside.bounding_ball()[1] == 0:
        return MeasureEstimate(0.0, 0.0, 1)
    target = Intersection(A, Complement(E))
    if method == "mc":
        return _local_mc(inside, target, ctx, cfg, samples, seed)
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    inner_tol = cfg.tol / 10.0 if inner_tol is None else inner_tol
    est = _interaction(inside, target, ctx, cfg, [E, A], inner_tol, cfg.tol)
    return MeasureEstimate(float(np.atleast_1d(est.value)[0]), est.abs_error_estimate, est.evaluations,
                           est.converged)


# ---------------------------------------------------------------------------
# Monte Carlo perimeters


def _uniform_in_ball(rng, m, n, c, R):
    g = rng.standard_normal((m, n))
    g /= np.linalg.norm(g, axis=1)[:, None]
    return c + R * g * rng.random(m)[:, None] ** (1.0 / n)


def _pair_mc(region: SetSpec, target: SetSpec, near: list, ctx, cfg, samples, seed):
    """Monte Carlo estimate of ``int_region int_target |x-y|^(-n-alpha)`` for disjoint sets.

    ``x`` is uniform on the bounding ball of ``region``; ``y = x + r theta``
    with ``r`` drawn from ``~ r^(-1-alpha)`` on ``[d(x), inf)``, where
    ``d(x)`` is the distance from ``x`` to the boundaries in ``near``.
    """
    from .kernel import ball_volume, sphere_area

    n, alpha = ctx.n, ctx.alpha
    N = int(cfg.mc_samples if samples is None else samples)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    c, R = region.bounding_ball()
    c = np.asarray(c, dtype=float)
    vol = ball_volume(n) * R**n
    area = sphere_area(n)
    s1 = s2 = 0.0
    done = 0
    while done < N:
        m = min(500_000, N - done)
        x = _uniform_in_ball(rng, m, n, c, R)
        ok = region.contains(x)
        d = np.min(np.stack([S.distance(x) for S in near]), axis=0)
        d = np.where(ok & (d > 0), d, 1.0)
        g = rng.standard_normal((m, n))
        theta = g / np.linalg.norm(g, axis=1)[:, None]
        r = d * (1.0 - rng.random(m)) ** (-1.0 / alpha)
        y = x + r[:, None] * theta
        w = vol * area * d**-alpha / alpha
        val = np.where(ok & target.contains(y), w, 0.0)
        s1 += val.sum()
        s2 += (val * val).sum()
        done += m
    mean = s1 / N
    var = max(s2 / N - mean * mean, 0.0) * N / (N - 1)
    se = float(np.sqrt(var / N))
    return MeasureEstimate(mean, se, N, True, np.array([se]))


def _perimeter_mc(E, Omega, ctx, cfg, samples, seed):
    if Omega is None:
        est = _pair_mc(E, Complement(E), [E], ctx, cfg, samples, seed)
    else:
        a = _pair_mc(Intersection(E, Omega), Complement(E), [E], ctx, cfg, samples, seed)
        b = _pair_mc(Intersection(Complement(E), Omega), Intersection(E, Complement(Omega)), [E, Omega],
                     ctx, cfg, samples, None if seed is None else seed + 1)
        se = float(np.hypot(a.abs_error_estimate, b.abs_error_estimate))
        est = MeasureEstimate(a.value + b.value, se, a.evaluations + b.evaluations, True, np.array([se]))
    return MeasureEstimate(2.0 * est.value, 2.0 * est.abs_error_estimate, est.evaluations, True,
                           2.0 * est.std_error)


def _local_mc(inside, target, ctx, cfg, samples, seed):
    return _pair_mc(inside, target, [inside, target], ctx, cfg, samples, seed)
