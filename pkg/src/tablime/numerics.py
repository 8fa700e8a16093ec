"""Scalar probability primitives.

Standard-normal CDF/quantile, truncated-normal moments and inverse-CDF
sampling, and adaptive 1-D quadrature for conditional expectations against a
truncated-normal law. Everything here is pure: random streams are explicit
arguments owned by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import ndtr, ndtri

__all__ = [
    "DegenerateMassError",
    "QuadratureError",
    "TruncNormalParams",
    "conditional_expect",
    "normal_cdf",
    "normal_icdf",
    "normal_pdf",
    "trunc_normal_sample",
    "trunc_normal_stats",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)

DEFAULT_QUAD_TOL = 1e-10


class DegenerateMassError(ValueError):
    """The truncation interval carries no representable probability mass."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


def normal_cdf(x):
    """Standard normal CDF. Accepts scalars or arrays; |error| < 1e-15."""
    out = ndtr(x)
    return float(out) if np.isscalar(x) else out


def normal_icdf(u):
    """Inverse standard normal CDF on (0, 1)."""
    out = ndtri(u)
    return float(out) if np.isscalar(u) else out


def normal_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / _SQRT2PI
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TruncNormalParams:
    """Location/scale/bounds of one truncated Gaussian (a single grid bin).

    ``ell`` and ``r`` are the standardized bounds; ``mass`` is the Gaussian
    probability of [lo, hi], which must be positive.
    """

    mu: float
    sigma: float
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)
                and math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("truncated-normal parameters must be finite")
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.lo < self.hi:
            raise ValueError(f"empty truncation interval [{self.lo}, {self.hi}]")

    @property
    def ell(self) -> float:
        return (self.lo - self.mu) / self.sigma

    @property
    def r(self) -> float:
        return (self.hi - self.mu) / self.sigma

    @property
    def mass(self) -> float:
        """Gaussian mass of the bin, Phi(r) - Phi(ell)."""
        m = float(ndtr(self.r) - ndtr(self.ell))
        if m <= 0.0:
            raise DegenerateMassError(
                f"no probability mass on [{self.lo}, {self.hi}] "
                f"for mu={self.mu}, sigma={self.sigma}"
            )
        return m

    def pdf(self, t):
        """Density of the truncated law; zero outside [lo, hi]."""
        t = np.asarray(t, dtype=float)
        z = (t - self.mu) / self.sigma
        inside = (t >= self.lo) & (t <= self.hi)
        dens = np.exp(-0.5 * z * z) / (self.sigma * _SQRT2PI * self.mass)
        out = np.where(inside, dens, 0.0)
        return float(out) if out.ndim == 0 else out


def trunc_normal_stats(p: TruncNormalParams) -> tuple[float, float]:
    """Mean and standard deviation of the truncated law.

    Standard closed forms in terms of the Gaussian pdf/CDF at the
    standardized bounds:

        mean = mu + sigma * (phi(ell) - phi(r)) / mass
        var  = sigma^2 * (1 + (ell*phi(ell) - r*phi(r))/mass
                            - ((phi(ell) - phi(r))/mass)^2)
    """
    mass = p.mass
    phi_l = normal_pdf(p.ell)
    phi_r = normal_pdf(p.r)
    ratio = (phi_l - phi_r) / mass
    mean = p.mu + p.sigma * ratio
    var = p.sigma ** 2 * (1.0 + (p.ell * phi_l - p.r * phi_r) / mass - ratio ** 2)
    # rounding can push var a hair negative for near-symmetric narrow bins
    std = math.sqrt(max(var, 0.0))
    return mean, std


def trunc_normal_sample(p: TruncNormalParams, rng: np.random.Generator, size=None):
    """Inverse-CDF draws from the truncated law.

    u is uniform on [Phi(ell), Phi(r)] and mapped through the Gaussian
    quantile function, so the support is exact and determinism is inherited
    from ``rng``.
    """
    lo_u = ndtr(p.ell)
    span = p.mass  # raises DegenerateMassError on underflow
    u = rng.random(size=size)
    x = p.mu + p.sigma * ndtri(lo_u + span * u)
    return np.clip(x, p.lo, p.hi)


def trunc_normal_ppf(p: TruncNormalParams, u):
    """Quantile function of the truncated law at u in [0, 1]."""
    lo_u = ndtr(p.ell)
    x = p.mu + p.sigma * ndtri(lo_u + p.mass * np.asarray(u, dtype=float))
    return np.clip(x, p.lo, p.hi)


def conditional_expect(psi, p: TruncNormalParams, tol: float = DEFAULT_QUAD_TOL,
                       breakpoints=()) -> float:
    """E[psi(x)] for x following the truncated law, by adaptive quadrature.

    ``psi`` must be bounded on [lo, hi]. ``breakpoints`` marks interior
    points where psi is not smooth (e.g. indicator edges); the quadrature
    splits there. Absolute error of the result is at most ``tol``.
    """
    norm = p.sigma * _SQRT2PI * p.mass

    def integrand(t):
        z = (t - p.mu) / p.sigma
        return psi(t) * math.exp(-0.5 * z * z)

    pts = sorted(b for b in breakpoints if p.lo < b < p.hi) or None
    result = integrate.quad(
        integrand, p.lo, p.hi,
        epsabs=tol * norm, epsrel=tol,
        limit=200, points=pts, full_output=1,
    )
    if len(result) > 3:
        raise QuadratureError(f"quadrature did not converge: {result[3]}")
    value, abserr = result[0], result[1]
    if abserr > 10.0 * max(tol * norm, tol * abs(value) * norm):
        raise QuadratureError(
            f"quadrature error estimate {abserr / norm:.3e} exceeds tol {tol:.3e}"
        )
    return value / norm
