"""Weighted (optionally ridge-regularized) linear surrogate on binary features.

Solves min_beta sum_i pi_i (y_i - beta0 - beta . z_i)^2 + lambda ||beta||^2
with the intercept left unpenalized, via the (d+1)x(d+1) normal equations and
a Cholesky factorization. Matrices are tiny, so accuracy governs over speed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .sampler import WeightVector

__all__ = ["Explanation", "RankDeficientError", "fit_surrogate"]

_JITTER = 1e-12
_RANK_RTOL = 1e-12


class RankDeficientError(ValueError):
    """Unregularized design matrix is (numerically) rank deficient.

    Callers may resample or pass lambda > 0.
    """


@dataclass(frozen=True)
class Explanation:
    """Intercept plus d interpretable coefficients.

    ``kind`` records provenance: "empirical" for a fitted surrogate,
    "theoretical" for a large-sample limit value.
    """

    intercept: float
    coefficients: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        object.__setattr__(self, "coefficients", coef)
        if self.kind not in ("empirical", "theoretical"):
            raise ValueError(f"unknown explanation kind {self.kind!r}")
        if not (np.isfinite(self.intercept) and np.all(np.isfinite(coef))):
            raise ValueError("explanation entries must be finite")

    @property
    def d(self) -> int:
        return self.coefficients.shape[0]

    def as_vector(self) -> np.ndarray:
        """(d+1,) vector [intercept, coefficients...]."""
        return np.concatenate([[self.intercept], self.coefficients])

    def to_json(self) -> str:
        return json.dumps({
            "intercept": self.intercept,
            "coefficients": self.coefficients.tolist(),
            "kind": self.kind,
            "meta": _jsonable(self.meta),
        })

    @classmethod
    def from_json(cls, text: str) -> "Explanation":
        obj = json.loads(text)
        return cls(
            intercept=float(obj["intercept"]),
            coefficients=np.asarray(obj["coefficients"], dtype=float),
            kind=obj["kind"],
            meta=obj.get("meta", {}),
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _solve_spd(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    lower = np.linalg.cholesky(a)
    y = np.linalg.solve(lower, rhs)
    return np.linalg.solve(lower.T, y)


def fit_surrogate(z: np.ndarray, y: np.ndarray, weights: WeightVector,
                  lam: float = 0.0) -> Explanation:
    """Fit the weighted surrogate and return the empirical explanation.

    The penalty applies to the d slope coefficients only. At lam=0 a
    rank-deficient normal system (e.g. a constant binary column) raises
    RankDeficientError after one jittered retry.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    pi = np.asarray(weights.pi, dtype=float).ravel()
    n, d = z.shape
    if n <= d + 1:
        raise ValueError(f"need n > d+1 samples, got n={n}, d={d}")
    if lam < 0:
        raise ValueError(f"penalty must be nonnegative, got {lam}")

    design = np.concatenate([np.ones((n, 1)), z], axis=1)
    weighted = design * pi[:, None]
    normal = weighted.T @ design
    rhs = weighted.T @ y
    if lam > 0:
        penalty = np.full(d + 1, lam)
        penalty[0] = 0.0  # intercept unpenalized
        normal = normal + np.diag(penalty)

    if lam == 0.0:
        eigvals = np.linalg.eigvalsh(normal)
        scale = max(eigvals[-1], 1.0)
        if eigvals[0] <= _RANK_RTOL * scale:
            jittered = normal + _JITTER * scale * np.eye(d + 1)
            eigvals = np.linalg.eigvalsh(jittered)
            if eigvals[0] <= _RANK_RTOL * scale:
                raise RankDeficientError(
                    "normal system is rank deficient at lambda=0 "
                    "(collinear or constant binary column); resample or regularize"
                )
            normal = jittered

    beta = _solve_spd(normal, rhs)
    return Explanation(
        intercept=float(beta[0]),
        coefficients=beta[1:],
        kind="empirical",
        meta={"n": n, "nu": weights.nu, "lambda": lam},
    )
