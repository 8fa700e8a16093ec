"""Closed-form limit explanations and every quantity feeding them.

In the large-sample limit the surrogate coefficients concentrate around an
explicit vector determined by the grid, the bin indices of the example, the
bandwidth, and expectations of the model under the perturbation law. This
module evaluates that vector three independent ways:

* ``beta_general`` - the generic expression in terms of E[pi f(x)] and
  E[pi z_j f(x)], with the expectations computed by structure-blind
  tensor-product Gauss-Legendre quadrature over all bin combinations (or by
  Monte Carlo with attached standard errors);
* ``limit_system`` - the matrix route: closed-form second-moment matrix, its
  closed-form inverse, and the moment vector assembled from per-feature
  weighted conditional expectations (the e-coefficient machinery);
* specialized formulas per model family (linear, additive, multiplicative,
  rectangular indicator, partition, Gaussian kernel sum).

Weighted conditional expectations e^psi[j][b] are the atomic quantity: the
expectation of psi(x_j) times the per-feature weight factor, conditional on
x_j falling in bin b. Under default weights the factor is exp(-1/(2 nu^2))
off the bin of the example and 1 on it; general weights replace it with
exp(-(tau_j(xi_j) - tau_j(x_j))^2 / (2 nu^2)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import BinGrid
from .models import (
    Additive,
    IndicatorRect,
    KernelSum,
    Linear,
    Model,
    Multiplicative,
    Opaque,
    Partition,
    Rectangle,
    refine_partition,
)
from .numerics import DEFAULT_QUAD_TOL, conditional_expect, normal_cdf, trunc_normal_stats
from .sampler import sample_batch, weights_default, weights_general
from .surrogate import Explanation

__all__ = [
    "ContainmentViolationError",
    "ECoefficients",
    "LimitSystem",
    "ZeroNormalizerError",
    "beta_additive",
    "beta_general",
    "beta_indicator",
    "beta_kernel_sum",
    "beta_linear",
    "beta_multiplicative",
    "beta_partition",
    "bin_distance",
    "c_const",
    "e_coefficients",
    "enclosing_bins",
    "kernel_e_coefficients",
    "large_bandwidth_limit",
    "limit_explanation",
    "limit_system",
    "pi_f_expectations",
    "relative_importance",
    "robustness_bound",
    "sample_size_bound",
    "unit_e_coefficients",
]

class ContainmentViolationError(ValueError):
    """A rectangle crosses a bin boundary; refine the partition first."""


class ZeroNormalizerError(ZeroDivisionError):
    """A per-feature normalizer vanished in the multiplicative formula."""


def c_const(p: int, nu: float) -> float:
    """Normalization constant 1/p + (1 - 1/p) exp(-1/(2 nu^2))."""
    if p < 2:
        raise ValueError(f"need p >= 2, got {p}")
    if nu <= 0:
        raise ValueError(f"bandwidth must be positive, got {nu}")
    return 1.0 / p + (1.0 - 1.0 / p) * math.exp(-1.0 / (2.0 * nu * nu))


def _off_bin_factor(nu: float) -> float:
    return math.exp(-1.0 / (2.0 * nu * nu))


@dataclass(frozen=True)
class ECoefficients:
    """Weighted conditional expectations e[j][b] and their bin averages.

    For psi = 1 the per-feature averages ``c_per_feature`` and their product
    ``product`` (the global normalizer) are populated as well.
    """

    e: np.ndarray        # (d, p)
    c_psi: np.ndarray    # (d,)
    c: np.ndarray | None = None         # per-feature c_j, psi = 1 only
    C: float | None = None              # prod_j c_j, psi = 1 only


def e_coefficients(psis, grid: BinGrid, b_star: np.ndarray, nu: float,
                   tol: float = DEFAULT_QUAD_TOL, taus=None, xi=None) -> ECoefficients:
    """e^psi[j][b] for per-feature maps psi, by adaptive per-bin quadrature.

    With default weights this is the off-bin exponential factor times the
    plain conditional expectation of psi_j on the bin; with general weights
    (``taus`` and ``xi`` given) the weight factor joins the integrand.
    """
    b_star = np.asarray(b_star, dtype=int)
    d, p = grid.d, grid.p
    e = np.empty((d, p))
    off = _off_bin_factor(nu)
    for j in range(d):
        psi = psis[j]
        bps = _unary_breakpoints(psi)
        for b in range(p):
            tn = grid.bin_params(j, b)
            if taus is None:
                plain = conditional_expect(psi, tn, tol=tol, breakpoints=bps)
                e[j, b] = plain if b == b_star[j] else off * plain
            else:
                tau, xij = taus[j], float(np.asarray(xi).ravel()[j])
                scale = 2.0 * nu * nu

                def weighted(t, _psi=psi, _tau=tau, _xij=xij, _s=scale):
                    return _psi(t) * math.exp(-(_tau(_xij) - _tau(t)) ** 2 / _s)

                e[j, b] = conditional_expect(weighted, tn, tol=tol, breakpoints=bps)
    return ECoefficients(e=e, c_psi=e.mean(axis=1))


def unit_e_coefficients(grid: BinGrid, b_star: np.ndarray, nu: float,
                        tol: float = DEFAULT_QUAD_TOL, taus=None, xi=None) -> ECoefficients:
    """e[j][b] for psi = 1, with the per-feature and global normalizers.

    Exact (no quadrature) under default weights: 1 on the example's bin and
    exp(-1/(2 nu^2)) elsewhere, so every c_j equals c_const(p, nu).
    """
    b_star = np.asarray(b_star, dtype=int)
    d, p = grid.d, grid.p
    if taus is None:
        off = _off_bin_factor(nu)
        e = np.full((d, p), off)
        e[np.arange(d), b_star] = 1.0
        c = np.full(d, c_const(p, nu))
    else:
        ones = [lambda t: np.ones_like(np.asarray(t, dtype=float)) if np.ndim(t) else 1.0
                for _ in range(d)]
        ec = e_coefficients(ones, grid, b_star, nu, tol=tol, taus=taus, xi=xi)
        e, c = ec.e, ec.c_psi
    return ECoefficients(e=e, c_psi=c.copy(), c=c, C=float(np.prod(c)))


def _unary_breakpoints(fn):
    get = getattr(fn, "breakpoints", None)
    return tuple(get()) if get is not None else ()


# ---------------------------------------------------------------------------
# structure-blind expectation engine (tensor-product Gauss-Legendre)
# ---------------------------------------------------------------------------

def _dim_rule(grid, j, b_star_j, nu, model_bps, taus, xi, order):
    """Quadrature nodes and weights along one feature.

    Returns (nodes, w_pi, w_z): integrating f against w_pi across all
    features yields E[pi f(x)]; swapping dim j's vector for w_z (supported on
    the example's bin only) yields E[pi z_j f(x)]. nu=None means unit weights.
    """
    gl_nodes, gl_weights = np.polynomial.legendre.leggauss(order)
    nodes, w_pi, w_z = [], [], []
    for b in range(grid.p):
        tn = grid.bin_params(j, b)
        edges = [tn.lo] + sorted(c for c in set(model_bps)
                                 if tn.lo < c < tn.hi) + [tn.hi]
        for a, c in zip(edges[:-1], edges[1:]):
            half = 0.5 * (c - a)
            t = a + half * (gl_nodes + 1.0)
            base = gl_weights * half * tn.pdf(t) / grid.p
            if nu is None:
                wj = np.ones_like(t)
            elif taus is None:
                wj = np.full_like(t, 1.0 if b == b_star_j else _off_bin_factor(nu))
            else:
                diff = np.asarray(taus[j](float(np.asarray(xi).ravel()[j]))) \
                    - np.asarray(taus[j](t))
                wj = np.exp(-diff * diff / (2.0 * nu * nu))
            nodes.append(t)
            w_pi.append(base * wj)
            w_z.append(base * wj if b == b_star_j else np.zeros_like(t))
    return (np.concatenate(nodes), np.concatenate(w_pi), np.concatenate(w_z))


def _contract(values, vectors):
    out = values
    for axis in range(len(vectors) - 1, -1, -1):
        out = np.tensordot(out, vectors[axis], axes=([axis], [0]))
    return float(out)


def pi_f_expectations(model: Model, grid: BinGrid, b_star, nu,
                      taus=None, xi=None, order: int | None = None):
    """(E[pi f(x)], E[pi z_j f(x)] for each j) by tensor-product quadrature.

    Structure-blind: only needs pointwise evaluation of the model, so it
    serves as an independent oracle for every closed form. nu=None drops the
    weights (used for the infinite-bandwidth limit). Partitions are summed
    piece by piece to keep the per-dimension node counts small.
    """
    b_star = np.asarray(b_star, dtype=int)
    if isinstance(model, Partition):
        e_pf, e_pzf = 0.0, np.zeros(grid.d)
        for rect, value in model.pieces:
            a, b = pi_f_expectations(IndicatorRect(rect, value), grid, b_star,
                                     nu, taus=taus, xi=xi, order=order)
            e_pf += a
            e_pzf += b
        return e_pf, e_pzf

    has_kinks = any(model.breakpoints(j) for j in range(grid.d))
    if order is None:
        order = 12 if has_kinks else (20 if grid.d >= 3 else 32)

    rules = [_dim_rule(grid, j, b_star[j], nu, model.breakpoints(j), taus, xi, order)
             for j in range(grid.d)]
    mesh = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    rows = np.stack([m.ravel() for m in mesh], axis=1)
    values = model.evaluate(rows).reshape(mesh[0].shape)

    w_pi = [r[1] for r in rules]
    e_pf = _contract(values, w_pi)
    e_pzf = np.empty(grid.d)
    for j in range(grid.d):
        vectors = list(w_pi)
        vectors[j] = rules[j][2]
        e_pzf[j] = _contract(values, vectors)
    return e_pf, e_pzf


# ---------------------------------------------------------------------------
# the limit system: Sigma, its inverse, and Gamma
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LimitSystem:
    """Population second-moment matrix, its closed-form inverse, and the
    moment vector; the limit explanation is sigma_inv @ gamma."""

    sigma: np.ndarray
    sigma_inv: np.ndarray
    gamma: np.ndarray

    def beta(self) -> np.ndarray:
        return self.sigma_inv @ self.gamma

    def to_json(self) -> str:
        import json
        return json.dumps({"sigma": self.sigma.tolist(),
                           "sigma_inv": self.sigma_inv.tolist(),
                           "gamma": self.gamma.tolist()})


def _sigma_matrices(unit: ECoefficients, b_star, p):
    """Closed forms for the moment matrix and its inverse."""
    b_star = np.asarray(b_star, dtype=int)
    d = unit.e.shape[0]
    e_star = unit.e[np.arange(d), b_star]
    alpha = e_star / (p * unit.c)
    big_c = unit.C

    sigma = np.empty((d + 1, d + 1))
    sigma[0, 0] = 1.0
    sigma[0, 1:] = alpha
    sigma[1:, 0] = alpha
    sigma[1:, 1:] = np.outer(alpha, alpha)
    sigma[np.arange(1, d + 1), np.arange(1, d + 1)] = alpha
    sigma *= big_c

    inv = np.zeros((d + 1, d + 1))
    inv[0, 0] = 1.0 + np.sum(alpha / (1.0 - alpha))
    inv[0, 1:] = -1.0 / (1.0 - alpha)
    inv[1:, 0] = -1.0 / (1.0 - alpha)
    inv[np.arange(1, d + 1), np.arange(1, d + 1)] = 1.0 / (alpha * (1.0 - alpha))
    inv /= big_c
    return sigma, inv


def _gamma_additive(e_rows: np.ndarray, unit: ECoefficients, b_star, p):
    """Moment vector for a sum of per-feature functions (carries the global
    normalizer explicitly)."""
    b_star = np.asarray(b_star, dtype=int)
    d = e_rows.shape[0]
    e_star_unit = unit.e[np.arange(d), b_star]
    alpha = e_star_unit / (p * unit.c)
    sums = e_rows.sum(axis=1)
    e_star_psi = e_rows[np.arange(d), b_star]
    total = float(np.sum(sums / (p * unit.c)))
    gamma = np.empty(d + 1)
    gamma[0] = unit.C * total
    gamma[1:] = unit.C * (alpha * total
                          + (e_star_psi - alpha * sums) / (p * unit.c))
    return gamma


def _gamma_multiplicative(e_rows: np.ndarray, b_star, p):
    """Moment vector for a product of per-feature functions."""
    b_star = np.asarray(b_star, dtype=int)
    d = e_rows.shape[0]
    c_psi = e_rows.mean(axis=1)
    e_star = e_rows[np.arange(d), b_star]
    prod_all = float(np.prod(c_psi))
    gamma = np.empty(d + 1)
    gamma[0] = prod_all
    for j in range(d):
        others = np.prod(np.delete(c_psi, j))
        gamma[j + 1] = others * e_star[j] / p
    return gamma


def _model_factor_e_rows(model, grid, b_star, nu, tol):
    """Per-feature e-coefficient rows for each factor of a structured model."""
    if isinstance(model, Additive) or isinstance(model, Multiplicative):
        return e_coefficients(model.funcs, grid, b_star, nu, tol=tol).e
    raise TypeError(f"no factor structure on {type(model).__name__}")


def _gamma_for_model(model, grid, b_star, nu, tol, unit):
    d, p = grid.d, grid.p
    if isinstance(model, Linear):
        funcs = [_LinearUnary(c) for c in model.coefficients]
        e_rows = e_coefficients(funcs, grid, b_star, nu, tol=tol).e
        gamma = _gamma_additive(e_rows, unit, b_star, p)
        # constant part: Gamma of kappa*1 is kappa*(C, C*alpha_j)
        alpha = unit.e[np.arange(d), np.asarray(b_star, dtype=int)] / (p * unit.c)
        gamma[0] += model.intercept * unit.C
        gamma[1:] += model.intercept * unit.C * alpha
        return gamma
    if isinstance(model, Additive):
        return _gamma_additive(_model_factor_e_rows(model, grid, b_star, nu, tol),
                               unit, b_star, p)
    if isinstance(model, Multiplicative):
        return _gamma_multiplicative(
            _model_factor_e_rows(model, grid, b_star, nu, tol), b_star, p)
    if isinstance(model, IndicatorRect):
        e_rows = _indicator_e_rows(model.rect, grid, b_star, nu)
        return model.value * _gamma_multiplicative(e_rows, b_star, p)
    if isinstance(model, Partition):
        gamma = np.zeros(d + 1)
        for rect, value in model.pieces:
            gamma += value * _gamma_multiplicative(
                _indicator_e_rows(rect, grid, b_star, nu), b_star, p)
        return gamma
    if isinstance(model, KernelSum):
        gamma = np.zeros(d + 1)
        for term in model.terms:
            e_rows = _kernel_term_e_rows(term, grid, b_star, nu, unit)
            gamma += term.alpha * _gamma_multiplicative(e_rows, b_star, p)
        return gamma
    # opaque or anything without exploitable structure: quadrature expectations
    e_pf, e_pzf = pi_f_expectations(model, grid, b_star, nu)
    return np.concatenate([[e_pf], e_pzf])


def _indicator_e_rows(rect: Rectangle, grid: BinGrid, b_star, nu) -> np.ndarray:
    """e-coefficient rows of per-axis interval indicators, via Gaussian-mass
    ratios of the interval/bin overlap (works for unrefined rectangles)."""
    b_star = np.asarray(b_star, dtype=int)
    d, p = grid.d, grid.p
    off = _off_bin_factor(nu)
    rows = np.zeros((d, p))
    for j in range(d):
        for b in range(p):
            tn = grid.bin_params(j, b)
            lo = max(float(rect.lower[j]), tn.lo)
            hi = min(float(rect.upper[j]), tn.hi)
            if lo >= hi:
                continue
            plain = (normal_cdf((hi - tn.mu) / tn.sigma)
                     - normal_cdf((lo - tn.mu) / tn.sigma)) / tn.mass
            rows[j, b] = plain if b == b_star[j] else off * plain
    return rows


class _LinearUnary:
    """coefficient * identity, with a breakpoint-free contract."""

    def __init__(self, coefficient):
        self.coefficient = float(coefficient)

    def __call__(self, t):
        return self.coefficient * np.asarray(t, dtype=float)

    def breakpoints(self):
        return ()


def limit_system(model: Model, grid: BinGrid, b_star, nu: float,
                 tol: float = DEFAULT_QUAD_TOL, taus=None, xi=None) -> LimitSystem:
    """Closed-form moment matrix and inverse plus the model's moment vector.

    The inverse exists in closed form because every e[j][b] is positive.
    With general weights the moment vector falls back to quadrature
    expectations for non-factorizing models.
    """
    unit = unit_e_coefficients(grid, b_star, nu, tol=tol, taus=taus, xi=xi)
    sigma, sigma_inv = _sigma_matrices(unit, b_star, grid.p)
    if taus is None:
        gamma = _gamma_for_model(model, grid, b_star, nu, tol, unit)
    else:
        e_pf, e_pzf = pi_f_expectations(model, grid, b_star, nu, taus=taus, xi=xi)
        gamma = np.concatenate([[e_pf], e_pzf])
    return LimitSystem(sigma=sigma, sigma_inv=sigma_inv, gamma=gamma)


# ---------------------------------------------------------------------------
# limit explanations
# ---------------------------------------------------------------------------

def _theory_meta(grid, nu, **extra):
    meta = {"p": grid.p, "nu": nu}
    meta.update(extra)
    return meta


def _beta_from_expectations(e_pf, e_pzf, unit: ECoefficients, b_star, p, grid, nu,
                            **meta):
    b_star = np.asarray(b_star, dtype=int)
    d = unit.e.shape[0]
    e_star = unit.e[np.arange(d), b_star]
    pc = p * unit.c
    gap = pc - e_star
    coef = (-pc / gap * e_pf + pc * pc / (e_star * gap) * e_pzf) / unit.C
    intercept = ((1.0 + float(np.sum(e_star / gap))) * e_pf
                 - float(np.sum(pc / gap * e_pzf))) / unit.C
    return Explanation(intercept=float(intercept), coefficients=coef,
                       kind="theoretical", meta=_theory_meta(grid, nu, **meta))


def beta_general(model: Model, grid: BinGrid, b_star, nu: float,
                 method: str = "quadrature", tol: float = DEFAULT_QUAD_TOL,
                 n_draws: int = 200_000, seed: int = 0,
                 taus=None, xi=None, order: int | None = None) -> Explanation:
    """Limit explanation from the generic expectation formula.

    method="quadrature" computes E[pi f] and E[pi z_j f] by structure-blind
    tensor quadrature (small d); method="monte-carlo" estimates them from
    ``n_draws`` sampled perturbations and attaches conservative per-coordinate
    standard errors (covariances ignored) in ``meta["stderr"]``.
    """
    b_star = np.asarray(b_star, dtype=int)
    unit = unit_e_coefficients(grid, b_star, nu, tol=tol, taus=taus, xi=xi)
    if method == "quadrature":
        e_pf, e_pzf = pi_f_expectations(model, grid, b_star, nu,
                                        taus=taus, xi=xi, order=order)
        return _beta_from_expectations(e_pf, e_pzf, unit, b_star, grid.p, grid, nu,
                                       method="quadrature", tol=tol)
    if method != "monte-carlo":
        raise ValueError(f"unknown method {method!r}")

    batch = sample_batch(grid, b_star, n_draws, seed)
    if taus is None:
        pi = weights_default(batch.z, nu).pi
    else:
        pi = weights_general(batch.x, xi, taus, nu).pi
    y = model.evaluate(batch.x)
    terms0 = pi * y
    e_pf = float(terms0.mean())
    se0 = float(terms0.std() / math.sqrt(n_draws))
    termsj = pi[:, None] * batch.z * y[:, None]
    e_pzf = termsj.mean(axis=0)
    sej = termsj.std(axis=0) / math.sqrt(n_draws)

    d = grid.d
    e_star = unit.e[np.arange(d), b_star]
    pc = grid.p * unit.c
    gap = pc - e_star
    stderr = np.empty(d + 1)
    stderr[0] = math.hypot((1.0 + float(np.sum(e_star / gap))) * se0,
                           float(np.linalg.norm(pc / gap * sej)))
    stderr[1:] = np.sqrt((pc / gap * se0) ** 2
                         + (pc * pc / (e_star * gap) * sej) ** 2) / unit.C
    stderr[0] /= unit.C
    return _beta_from_expectations(e_pf, e_pzf, unit, b_star, grid.p, grid, nu,
                                   method="monte-carlo", n_draws=n_draws,
                                   seed=seed, stderr=stderr.tolist())


def beta_linear(model: Linear, grid: BinGrid, b_star, nu: float) -> Explanation:
    """Exact limit explanation for a linear model.

    Each coefficient is the model coefficient times a bandwidth-free
    proportionality factor v_j (average gap between the truncated mean on
    the example's bin and the other bins); v is reported in ``meta["v"]``.
    """
    b_star = np.asarray(b_star, dtype=int)
    d, p = grid.d, grid.p
    mu_t = np.empty((d, p))
    for j in range(d):
        for b in range(p):
            mu_t[j, b] = trunc_normal_stats(grid.bin_params(j, b))[0]
    mu_star = mu_t[np.arange(d), b_star]
    v = (mu_star[:, None] - mu_t).sum(axis=1) / (p - 1)
    coef = model.coefficients * v

    off = _off_bin_factor(nu)
    weights = np.full((d, p), off)
    weights[np.arange(d), b_star] = 1.0
    mu_tt = (weights * mu_t).sum(axis=1) / weights.sum(axis=1)
    pc = p * c_const(p, nu)
    intercept = (model.intercept + float(model.coefficients @ mu_tt)
                 - float(((mu_star - mu_tt) * model.coefficients).sum()) / (pc - 1.0))
    return Explanation(intercept=intercept, coefficients=coef, kind="theoretical",
                       meta=_theory_meta(grid, nu, v=v.tolist()))


def beta_additive(model: Additive, grid: BinGrid, b_star, nu: float,
                  tol: float = DEFAULT_QUAD_TOL) -> Explanation:
    """Limit explanation for a sum of per-feature functions."""
    b_star = np.asarray(b_star, dtype=int)
    d, p = grid.d, grid.p
    e_rows = e_coefficients(model.funcs, grid, b_star, nu, tol=tol).e
    c = c_const(p, nu)
    pc = p * c
    e_star = e_rows[np.arange(d), b_star]
    c_psi = e_rows.mean(axis=1)
    coef = pc / (pc - 1.0) * (e_star - c_psi / c)
    off_sums = e_rows.sum(axis=1) - e_star
    intercept = float(off_sums.sum()) / (pc - 1.0)
    return Explanation(intercept=intercept, coefficients=coef, kind="theoretical",
                       meta=_theory_meta(grid, nu, tol=tol))


def _beta_multiplicative_from_rows(e_rows: np.ndarray, b_star, p, nu, grid,
                                   scale: float = 1.0) -> Explanation:
    b_star = np.asarray(b_star, dtype=int)
    d = e_rows.shape[0]
    c = c_const(p, nu)
    pc = p * c
    c_psi = e_rows.mean(axis=1)
    e_star = e_rows[np.arange(d), b_star]
    row_scale = np.max(np.abs(e_rows), axis=1)
    dead = (c_psi == 0.0) | (np.abs(c_psi) < 1e-12 * np.maximum(row_scale, 1e-300))
    if np.any(dead):
        raise ZeroNormalizerError(
            f"per-feature normalizer vanished on feature(s) "
            f"{np.where(dead)[0].tolist()}; the multiplicative formula is undefined"
        )
    factor = float(np.prod(c_psi)) / c ** d
    ratio = e_star * c / c_psi
    coef = scale * factor * pc / (pc - 1.0) * (ratio - 1.0)
    intercept = scale * factor * (1.0 + float(np.sum((1.0 - ratio) / (pc - 1.0))))
    return Explanation(intercept=intercept, coefficients=coef, kind="theoretical",
                       meta=_theory_meta(grid, nu))


def beta_multiplicative(model: Multiplicative, grid: BinGrid, b_star, nu: float,
                        tol: float = DEFAULT_QUAD_TOL) -> Explanation:
    """Limit explanation for a product of per-feature functions."""
    e_rows = e_coefficients(model.funcs, grid, b_star, nu, tol=tol).e
    return _beta_multiplicative_from_rows(e_rows, b_star, grid.p, nu, grid)


# ---------------------------------------------------------------------------
# rectangles: relative importance, bin distance, indicator and partition forms
# ---------------------------------------------------------------------------

def enclosing_bins(rect: Rectangle, grid: BinGrid) -> np.ndarray:
    """0-based bin index containing the rectangle on each axis.

    Raises ContainmentViolationError when the rectangle crosses an interior
    bin boundary (refine the partition first).
    """
    if rect.d != grid.d:
        raise ValueError("rectangle/grid dimension mismatch")
    out = np.empty(grid.d, dtype=int)
    for j in range(grid.d):
        q = grid.boundaries[j]
        mid = 0.5 * (rect.lower[j] + rect.upper[j])
        b = min(max(int(np.searchsorted(q, mid, side="left")) - 1, 0), grid.p - 1)
        width = q[b + 1] - q[b]
        tol = 1e-9 * width
        if rect.lower[j] < q[b] - tol or rect.upper[j] > q[b + 1] + tol:
            raise ContainmentViolationError(
                f"rectangle [{rect.lower[j]}, {rect.upper[j]}] crosses bin "
                f"boundaries on axis {j}"
            )
        out[j] = b
    return out


def relative_importance(rect: Rectangle, grid: BinGrid) -> float:
    """Mass the per-bin truncated Gaussians give the rectangle, normalized by
    the mass of its enclosing bin; in [0, 1]."""
    bins = enclosing_bins(rect, grid)
    out = 1.0
    for j in range(grid.d):
        tn = grid.bin_params(j, int(bins[j]))
        num = (normal_cdf((rect.upper[j] - tn.mu) / tn.sigma)
               - normal_cdf((rect.lower[j] - tn.mu) / tn.sigma))
        out *= num / tn.mass
    return min(max(out, 0.0), 1.0)


def bin_distance(b_star, rect: Rectangle, grid: BinGrid) -> int:
    """Number of axes where the example's bin differs from the rectangle's
    enclosing bin."""
    b_star = np.asarray(b_star, dtype=int)
    return int(np.sum(b_star != enclosing_bins(rect, grid)))


def beta_indicator(rect: Rectangle, value: float, grid: BinGrid, b_star,
                   nu: float) -> Explanation:
    """Exact limit explanation for value * 1{x in rect}, rect inside one bin.

    Aligned axes get positive weight scaled by the rectangle's relative
    importance and an exponential decay in the bin distance; misaligned axes
    get a negative weight with the decay exponent reduced by one (the
    misaligned axis itself already contributes a disagreement).
    """
    b_star = np.asarray(b_star, dtype=int)
    d, p = grid.d, grid.p
    c = c_const(p, nu)
    enc = enclosing_bins(rect, grid)
    rho = relative_importance(rect, grid)
    dist = int(np.sum(b_star != enc))
    dn = p ** (d - 1) * c ** (d - 1)
    aligned = b_star == enc
    coef = np.where(
        aligned,
        rho * math.exp(-dist / (2.0 * nu * nu)) / dn,
        -rho * math.exp(-(dist - 1) / (2.0 * nu * nu)) / ((p - 1) * dn),
    )
    intercept = (rho * math.exp(-dist / (2.0 * nu * nu)) / (p ** d * c ** d)
                 - float(coef.sum()) / (p * c))
    return Explanation(intercept=value * intercept, coefficients=value * coef,
                       kind="theoretical",
                       meta=_theory_meta(grid, nu, relative_importance=rho,
                                         bin_distance=dist))


def beta_partition(partition: Partition, grid: BinGrid, b_star,
                   nu: float) -> Explanation:
    """Limit explanation for a refined rectangle partition (sum of the
    per-rectangle indicator explanations, by linearity)."""
    total = np.zeros(grid.d + 1)
    for rect, value in partition.pieces:
        piece = beta_indicator(rect, value, grid, b_star, nu)
        total += piece.as_vector()
    return Explanation(intercept=float(total[0]), coefficients=total[1:],
                       kind="theoretical", meta=_theory_meta(grid, nu))


# ---------------------------------------------------------------------------
# Gaussian kernels
# ---------------------------------------------------------------------------

def kernel_e_coefficients(zeta: np.ndarray, gamma: float, grid: BinGrid, b_star,
                          nu: float) -> ECoefficients:
    """Closed-form e-coefficients of the per-axis Gaussian kernel factors.

    Completing the square turns the kernel-times-Gaussian integral into a
    rescaled Gaussian mass: with blended center m = (g^2 mu + s^2 z)/(g^2+s^2)
    and width w^2 = s^2 g^2/(s^2+g^2), the plain conditional expectation is
    (w/s) * [Phi((q_hi-m)/w) - Phi((q_lo-m)/w)] / mass * exp(-(mu-z)^2/(2(g^2+s^2))).
    """
    zeta = np.asarray(zeta, dtype=float).ravel()
    b_star = np.asarray(b_star, dtype=int)
    d, p = grid.d, grid.p
    e = np.empty((d, p))
    off = _off_bin_factor(nu)
    for j in range(d):
        for b in range(p):
            tn = grid.bin_params(j, b)
            hat = _kernel_hat(tn, zeta[j], gamma)
            e[j, b] = hat if b == b_star[j] else off * hat
    return ECoefficients(e=e, c_psi=e.mean(axis=1))


def _kernel_hat(tn, zj, gamma):
    g2, s2 = gamma * gamma, tn.sigma * tn.sigma
    m = (g2 * tn.mu + s2 * zj) / (g2 + s2)
    w = math.sqrt(s2 * g2 / (s2 + g2))
    num = normal_cdf((tn.hi - m) / w) - normal_cdf((tn.lo - m) / w)
    return (w / tn.sigma) * (num / tn.mass) * math.exp(
        -(tn.mu - zj) ** 2 / (2.0 * (g2 + s2)))


def _kernel_term_e_rows(term, grid, b_star, nu, unit):
    b_star = np.asarray(b_star, dtype=int)
    rows = unit.e.copy()  # inactive axes carry the unit factor
    active = term.active_dims(grid.d)
    off = _off_bin_factor(nu)
    for k, j in enumerate(active):
        for b in range(grid.p):
            hat = _kernel_hat(grid.bin_params(j, b), float(term.zeta[k]), term.gamma)
            rows[j, b] = hat if b == b_star[j] else off * hat
    return rows


def beta_kernel_sum(model: KernelSum, grid: BinGrid, b_star, nu: float) -> Explanation:
    """Limit explanation for a sum of Gaussian kernels (per-term multiplicative
    closed forms, summed by linearity)."""
    unit = unit_e_coefficients(grid, b_star, nu)
    total = np.zeros(grid.d + 1)
    for term in model.terms:
        rows = _kernel_term_e_rows(term, grid, b_star, nu, unit)
        part = _beta_multiplicative_from_rows(rows, b_star, grid.p, nu, grid,
                                              scale=term.alpha)
        total += part.as_vector()
    return Explanation(intercept=float(total[0]), coefficients=total[1:],
                       kind="theoretical", meta=_theory_meta(grid, nu))


# ---------------------------------------------------------------------------
# limits and bounds
# ---------------------------------------------------------------------------

def large_bandwidth_limit(model: Model, grid: BinGrid, b_star,
                          tol: float = DEFAULT_QUAD_TOL,
                          order: int | None = None) -> Explanation:
    """Infinite-bandwidth limit of the explanation (all weights equal one)."""
    b_star = np.asarray(b_star, dtype=int)
    p = grid.p
    e_f, e_zf = pi_f_expectations(model, grid, b_star, nu=None, order=order)
    coef = -p / (p - 1.0) * e_f + p * p / (p - 1.0) * e_zf
    intercept = (1.0 + grid.d / (p - 1.0)) * e_f - p / (p - 1.0) * float(e_zf.sum())
    return Explanation(intercept=intercept, coefficients=coef, kind="theoretical",
                       meta={"p": p, "nu": math.inf, "tol": tol})


def sample_size_bound(eps: float, eta: float, d: int, p: int, nu: float,
                      c_f: float) -> int:
    """Perturbation count guaranteeing eps-accuracy with probability 1 - eta.

    Ceiling of the larger of the two concentration terms (d^4 p^4 and
    d^7 p^8 regimes) with global normalizer c^d.
    """
    if not 0 < eps < c_f:
        raise ValueError("need 0 < eps < c_f")
    if not 0 < eta < 1:
        raise ValueError("need 0 < eta < 1")
    big_c = c_const(p, nu) ** d
    log_term = math.log(8.0 * d / eta)
    t1 = (2.0 ** 12) * c_f * d ** 4 * p ** 4 * math.exp(1.0 / nu ** 2) \
        * log_term / (big_c ** 2 * eps ** 2)
    t2 = (2.0 ** 15) * c_f ** 2 * d ** 7 * p ** 8 * math.exp(2.0 / nu ** 2) \
        * log_term / (big_c ** 4 * eps ** 2)
    return int(math.ceil(max(t1, t2)))


def robustness_bound(d: int, p: int, nu: float, sup_norm_diff: float) -> float:
    """Upper bound on the explanation shift caused by a bounded model change:
    sqrt(d (9d + 4 p^2)) * exp(1/(2 nu^2)) / (p - 1) * ||f - g||_inf."""
    if min(d, p, nu, 1) <= 0 or sup_norm_diff < 0:
        raise ValueError("arguments must be positive (diff nonnegative)")
    return (math.sqrt(d * (9.0 * d + 4.0 * p * p))
            * math.exp(1.0 / (2.0 * nu * nu)) / (p - 1.0) * sup_norm_diff)


def limit_explanation(model: Model, grid: BinGrid, b_star, nu: float,
                      tol: float = DEFAULT_QUAD_TOL) -> Explanation:
    """Dispatch to the sharpest closed form available for the model family."""
    if isinstance(model, Linear):
        return beta_linear(model, grid, b_star, nu)
    if isinstance(model, Additive):
        return beta_additive(model, grid, b_star, nu, tol=tol)
    if isinstance(model, Multiplicative):
        return beta_multiplicative(model, grid, b_star, nu, tol=tol)
    if isinstance(model, IndicatorRect):
        try:
            return beta_indicator(model.rect, model.value, grid, b_star, nu)
        except ContainmentViolationError:
            refined = refine_partition(Partition(((model.rect, model.value),)), grid)
            return beta_partition(refined, grid, b_star, nu)
    if isinstance(model, Partition):
        return beta_partition(refine_partition(model, grid), grid, b_star, nu)
    if isinstance(model, KernelSum):
        return beta_kernel_sum(model, grid, b_star, nu)
    if isinstance(model, Opaque):
        if grid.d <= 4:
            return beta_general(model, grid, b_star, nu, method="quadrature", tol=tol)
        return beta_general(model, grid, b_star, nu, method="monte-carlo")
    raise TypeError(f"no limit formula for {type(model).__name__}")
