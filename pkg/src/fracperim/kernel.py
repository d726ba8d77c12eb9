"""Normalization constants and the pointwise Riesz-type kernel.

Every operator in the package carries an :class:`AlphaContext`, which fixes
the ambient dimension ``n``, the fractional order ``alpha`` and the
normalization constant ``mu`` multiplying the singular integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_DIM = 3


def log_gamma(x: float) -> tuple[float, int]:
    """Return ``(log|Gamma(x)|, sign(Gamma(x)))`` for real ``x``.

    Raises ``ValueError`` at the poles ``x = 0, -1, -2, ...``.
    """
    if x <= 0 and float(x).is_integer():
        raise ValueError(f"Gamma has a pole at {x}")
    value = math.lgamma(x)
    if x > 0:
        return value, 1
    # Gamma alternates sign between consecutive negative poles.
    return value, -1 if math.floor(x) % 2 else 1


def gamma_ratio(num: float, den: float) -> float:
    """``Gamma(num) / Gamma(den)`` evaluated in log space."""
    ln, sn = log_gamma(num)
    ld, sd = log_gamma(den)
    return sn * sd * math.exp(ln - ld)


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in R^n (2 for n = 1)."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def ball_volume(n: int) -> float:
    """Lebesgue measure of the unit ball in R^n."""
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def _mu(n: int, alpha: float) -> float:
    log_num, s_num = log_gamma((n + alpha + 1) / 2)
    log_den, s_den = log_gamma((1 - alpha) / 2)
    log_mu = alpha * math.log(2.0) - 0.5 * n * math.log(math.pi) + log_num - log_den
    return s_num * s_den * math.exp(log_mu)


@dataclass(frozen=True)
class AlphaContext:
    """Ambient dimension, fractional order and normalization constant.

    ``mu`` is derived from ``n`` and ``alpha`` on construction; instances are
    immutable and can be shared freely between threads.
    """

    n: int
    alpha: float
    mu: float = field(init=False)

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or not 1 <= self.n <= MAX_DIM:
            raise ValueError(f"n out of range: expected 1 <= n <= {MAX_DIM}, got {self.n!r}")
        alpha = float(self.alpha)
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha out of range: expected 0 < alpha < 1, got {self.alpha!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "mu", _mu(self.n, alpha))

    @property
    def s(self) -> float:
        """Homogeneity exponent ``n + alpha`` of the kernel magnitude."""
        return self.n + self.alpha

    def with_dim(self, n: int) -> "AlphaContext":
        return AlphaContext(n, self.alpha)


def make_context(n: int, alpha: float) -> AlphaContext:
    """Build an :class:`AlphaContext`; raises ``ValueError`` naming the bad field."""
    return AlphaContext(n, alpha)


def riesz_kernel(z, ctx: AlphaContext) -> np.ndarray:
    """Evaluate ``z / |z|^(n + alpha + 1)``.

    ``z`` may be a single n-vector or an array of shape ``(m, n)``.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zz = np.atleast_2d(z)
    if zz.shape[-1] != ctx.n:
        raise ValueError(f"expected vectors of dimension {ctx.n}, got shape {z.shape}")
    r = np.sqrt(np.einsum("ij,ij->i", zz, zz))
    if np.any(r == 0.0):
        raise ValueError("kernel singularity: z = 0")
    out = zz / r[:, None] ** (ctx.n + ctx.alpha + 1.0)
    return out[0] if single else out


def mu_descent(ctx_n: AlphaContext) -> float:
    """Constant of dimension ``n - 1`` obtained from the ``n``-dimensional one.

    Uses ``mu_{n-1} = mu_n * Gamma((n+alpha)/2) * sqrt(pi) / Gamma((n+alpha+1)/2)``.
    """
    n = ctx_n.n
    if n < 2:
        raise ValueError("no lower dimension: mu_descent needs n >= 2")
    a = ctx_n.alpha
    return ctx_n.mu * math.sqrt(math.pi) * gamma_ratio((n + a) / 2, (n + a + 1) / 2)
