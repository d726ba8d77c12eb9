"""Closed-form reference values, computed without the ray engine.

* half-spaces: ``(mu_{1,alpha} / alpha) nu |(x - x0) . nu|^-alpha``;
* balls: ``-(mu_{n,alpha} / (n + alpha - 1)) g_{n,alpha}(|x|) x / |x|`` for the
  unit ball, with the sphere profile ``g_{n,alpha}`` reduced to a 1-D
  integral and evaluated by ``scipy.integrate.quad``;
* finite unions of intervals: ``c_alpha sum_k (|t - a_k|^-alpha - |t - b_k|^-alpha)``
  with ``c_alpha = mu_{1,alpha} / alpha``;
* the Gamma/Beta identity
  ``u^s int_R (t^2 + u^2)^(-(s+1)/2) dt = Gamma(s/2) sqrt(pi) / Gamma((s+1)/2)``.

Reference numbers that were produced offline (arbitrary precision,
symbolic integration, long Monte Carlo runs) live in ``data/golden.txt``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import integrate

from .kernel import AlphaContext, gamma_ratio, make_context

__all__ = [
    "BallProfile",
    "GoldenRecord",
    "ball_gradient",
    "ball_profile",
    "gamma_beta_identity",
    "golden",
    "halfspace_gradient",
    "interval_union_gradient",
    "load_golden",
]


def _c_alpha(alpha: float) -> float:
    return make_context(1, alpha).mu / alpha


def halfspace_gradient(x0, nu, x, ctx: AlphaContext) -> np.ndarray:
    """Fractional gradient of the indicator of ``{(y - x0) . nu > 0}`` at ``x``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s = float((x - x0) @ nu)
    if s == 0.0:
        raise ValueError("x lies on the hyperplane")
    return _c_alpha(ctx.alpha) * nu * abs(s) ** -ctx.alpha


def interval_union_gradient(intervals, t: float, alpha: float) -> float:
    """Fractional gradient on the line of a finite union of disjoint intervals.

    Infinite endpoints (half-lines) contribute nothing.
    """
    t = float(t)
    total = 0.0
    for a, b in intervals:
        a, b = float(a), float(b)
        if t == a or t == b:
            raise ValueError("t is an endpoint")
        if math.isfinite(a):
            total += abs(t - a) ** -alpha
        if math.isfinite(b):
            total -= abs(t - b) ** -alpha
    return _c_alpha(alpha) * total


# ---------------------------------------------------------------------------
# unit-ball profile


class BallProfile:
    """The sphere profile ``g_{n,alpha}(t) = int_{|y|=1} y_1 |t e_1 - y|^-(n+alpha-1)``.

    Values are computed on demand by adaptive quadrature of a 1-D reduction
    (angular for ``n = 2``, polar for ``n = 3``) and cached.  ``table``
    returns a tabulation on a grid that skips a window around ``t = 1``.
    """

    def __init__(self, n: int, alpha: float):
        if n not in (1, 2, 3):
            raise ValueError("n must be 1, 2 or 3")
        if not 0 < alpha < 1:
            raise ValueError("alpha out of range")
        self.n = n
        self.alpha = float(alpha)
        self._cache: dict[float, float] = {}
        self._lock = threading.Lock()

    def _direct(self, t: float) -> float:
        a = self.alpha
        if t == 0.0:
            return 0.0  # odd integrand on the sphere
        if self.n == 1:
            return abs(t - 1.0) ** -a - abs(t + 1.0) ** -a
        e = (self.n + a - 1.0) / 2.0
        # the integrand peaks at angle 0 with width ~ |1 - t|
        w = abs(1.0 - t)
        pts = sorted({min(math.pi / 2, k * w) for k in (0.5, 2.0, 8.0)} - {0.0})
        # t^2 - 2 t cos(p) + 1 written without cancellation near t = 1, p = 0
        d2 = (1.0 - t) ** 2
        if self.n == 2:
            def f(p):
                return math.cos(p) * (d2 + 4.0 * t * math.sin(p / 2) ** 2) ** -e
            factor = 2.0  # symmetric in the angle
        else:
            def f(p):
                return math.cos(p) * math.sin(p) * (d2 + 4.0 * t * math.sin(p / 2) ** 2) ** -e
            factor = 2.0 * math.pi
        # absolute floor relative to the integrand peak, for the cancellation near t = 0
        floor = 1e-13 * max(1.0, w ** (-2.0 * e))
        val, _ = integrate.quad(f, 0.0, math.pi, points=pts, epsabs=floor, epsrel=1e-12, limit=500)
        val *= factor
        return val

    def __call__(self, t: float) -> float:
        t = float(t)
        if t < 0:
            raise ValueError("the profile is defined for t >= 0")
        if t == 1.0:
            raise ValueError("the profile is singular at t = 1")
        with self._lock:
            hit = self._cache.get(t)
        if hit is not None:
            return hit
        val = self._direct(t)
        with self._lock:
            self._cache.setdefault(t, val)
        return val

    def table(self, t_max: float = 100.0, points: int = 64, window: float = 1e-2):
        """``(t, g(t))`` on log-spaced grids below and above ``1 -/+ window``."""
        lo = np.concatenate([[0.0], np.geomspace(1e-3, 1.0 - window, points // 2)])
        hi = np.geomspace(1.0 + window, t_max, points // 2)
        t = np.concatenate([lo, hi])
        return t, np.array([self(v) for v in t])


_PROFILES: dict = {}
_PROFILES_LOCK = threading.Lock()


def ball_profile(n: int, alpha: float) -> BallProfile:
    """Shared :class:`BallProfile` instance for ``(n, alpha)``."""
    key = (int(n), float(alpha))
    with _PROFILES_LOCK:
        if key not in _PROFILES:
            _PROFILES[key] = BallProfile(*key)
        return _PROFILES[key]


def ball_gradient(x0, r: float, x, ctx: AlphaContext) -> np.ndarray:
    """Fractional gradient of the indicator of ``B_r(x0)`` at ``x``.

    Uses ``grad chi_{B_r(x0)}(x) = r^-alpha grad chi_{B_1}((x - x0) / r)``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = (x - x0) / float(r)
    rho = float(np.linalg.norm(z))
    if rho == 1.0:
        raise ValueError("x lies on the sphere")
    if rho == 0.0:
        return np.zeros_like(z)
    g = ball_profile(ctx.n, ctx.alpha)(rho)
    return -float(r) ** -ctx.alpha * ctx.mu / (ctx.n + ctx.alpha - 1.0) * g * z / rho


# ---------------------------------------------------------------------------
# Gamma / Beta identity


def gamma_beta_identity(u: float, s: float) -> tuple[float, float]:
    """Both sides of ``u^s int_R (t^2 + u^2)^(-(s+1)/2) dt = Gamma(s/2) sqrt(pi) / Gamma((s+1)/2)``.

    The left side is integrated on ``[0, u]`` directly and on ``[u, inf)``
    after the substitution ``t = u w^(-1/s)``, which maps the tail onto a
    smooth integrand on ``[0, 1]``; the right side uses log-Gamma.
    """
    u = float(u)
    s = float(s)
    if not u > 0 or not s > 0:
        raise ValueError("u and s must be positive")
    e = (s + 1.0) / 2.0
    head, _ = integrate.quad(lambda t: (t * t + u * u) ** -e, 0.0, u, epsabs=0.0, epsrel=1e-13)
    # t = u w^(-1/s): int_u^inf ... dt = u^-s / s * int_0^1 (1 + w^(2/s))^-e dw
    tail, _ = integrate.quad(lambda w: (1.0 + w ** (2.0 / s)) ** -e, 0.0, 1.0, epsabs=0.0, epsrel=1e-13)
    lhs = 2.0 * (u**s * head + tail / s)
    rhs = math.sqrt(math.pi) * gamma_ratio(s / 2.0, (s + 1.0) / 2.0)
    return lhs, rhs


# ---------------------------------------------------------------------------
# golden values


@dataclass(frozen=True)
class GoldenRecord:
    """One line of the golden file: ``key n alpha point value tag``."""

    key: str
    n: int
    alpha: float
    point: tuple
    value: tuple
    tag: str

    @property
    def scalar(self) -> float:
        if len(self.value) != 1:
            raise ValueError(f"golden value {self.key!r} is a vector")
        return self.value[0]


def _floats(field: str) -> tuple:
    if field in ("-", "none"):
        return ()
    return tuple(float(v) for v in field.split(","))


def parse_golden(text: str, source: str = "<golden>") -> dict:
    records = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{source}:{lineno}: expected 6 fields, got {len(parts)}")
        key, n, alpha, point, value, tag = parts
        if key in records:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        records[key] = GoldenRecord(key, int(n), float(alpha), _floats(point), _floats(value), tag)
    return records


def load_golden(path: str | Path | None = None) -> dict:
    """Read the golden table (the packaged one by default) into ``{key: GoldenRecord}``."""
    if path is None:
        text = resources.files("fracperim").joinpath("data/golden.txt").read_text()
        return parse_golden(text, "golden.txt")
    p = Path(path)
    return parse_golden(p.read_text(), str(p))


_GOLDEN = None


def golden(key: str) -> GoldenRecord:
    global _GOLDEN
    if _GOLDEN is None:
        _GOLDEN = load_golden()
    try:
        return _GOLDEN[key]
    except KeyError:
        raise KeyError(f"no golden value named {key!r}") from None
