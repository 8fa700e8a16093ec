"""Perturbed-example generation and sample weights.

A batch draws, per coordinate, a bin uniformly at random and then a value
from that bin's truncated Gaussian. Binary features mark agreement with the
bins of the example to explain; weights decay exponentially with the number
of disagreeing coordinates (default) or with distances measured through
per-feature maps (general weights).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .grid import BinGrid

__all__ = [
    "BoundednessViolationError",
    "PerturbationBatch",
    "WeightVector",
    "batch_to_csv",
    "sample_batch",
    "weights_default",
    "weights_general",
]


class BoundednessViolationError(ValueError):
    """A sampled per-feature map difference exceeded the unit bound."""


@dataclass(frozen=True)
class PerturbationBatch:
    """n perturbed examples: bin draws B, raw samples X, binaries Z."""

    bins: np.ndarray   # (n, d) int, 0-based
    x: np.ndarray      # (n, d) float
    z: np.ndarray      # (n, d) uint8, z[i,j] = 1 iff bins[i,j] == b_star[j]
    seed: int

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class WeightVector:
    pi: np.ndarray
    nu: float


def sample_batch(grid: BinGrid, b_star: np.ndarray, n: int, seed: int) -> PerturbationBatch:
    """Draw n perturbed examples. Bit-identical for identical inputs.

    Bins are i.i.d. uniform on {0,...,p-1} per coordinate; conditional on its
    bin, each coordinate is an inverse-CDF truncated-Gaussian draw. The draw
    order is fixed (all bins, then all uniforms), so results do not depend on
    any execution schedule. The sample itself depends on the example to
    explain only through ``b_star`` (and only via Z).
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    b_star = np.asarray(b_star, dtype=int)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    bins = rng.integers(0, grid.p, size=(n, grid.d))
    u = rng.random(size=(n, grid.d))

    x = np.empty((n, grid.d))
    for j in range(grid.d):
        for b in range(grid.p):
            mask = bins[:, j] == b
            if not mask.any():
                continue
            tn = grid.bin_params(j, b)
            lo_u = ndtr(tn.ell)
            span = tn.mass
            vals = tn.mu + tn.sigma * ndtri(lo_u + span * u[mask, j])
            x[mask, j] = np.clip(vals, tn.lo, tn.hi)
    z = (bins == b_star[None, :]).astype(np.uint8)
    return PerturbationBatch(bins=bins, x=x, z=z, seed=seed)


def weights_default(z: np.ndarray, nu: float) -> WeightVector:
    """pi_i = exp(-(# coordinates with z=0) / (2 nu^2))."""
    if nu <= 0:
        raise ValueError(f"bandwidth must be positive, got {nu}")
    z = np.asarray(z)
    disagreements = z.shape[1] - z.sum(axis=1, dtype=float)
    return WeightVector(pi=np.exp(-disagreements / (2.0 * nu * nu)), nu=float(nu))


def weights_general(x: np.ndarray, xi: np.ndarray, taus, nu: float) -> WeightVector:
    """pi_i = exp(-sum_j (tau_j(xi_j) - tau_j(x_ij))^2 / (2 nu^2)).

    Each map must move by at most 1 between any two points of the support;
    sampled violations raise BoundednessViolationError.
    """
    if nu <= 0:
        raise ValueError(f"bandwidth must be positive, got {nu}")
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float).ravel()
    if len(taus) != x.shape[1] or xi.shape[0] != x.shape[1]:
        raise ValueError("need one map and one xi coordinate per feature")
    sq = np.zeros(x.shape[0])
    for j, tau in enumerate(taus):
        diff = np.asarray(tau(xi[j])) - np.asarray(tau(x[:, j]))
        if np.any(np.abs(diff) > 1.0 + 1e-12):
            raise BoundednessViolationError(
                f"map {j} moved by {np.max(np.abs(diff)):.6g} > 1 on sampled data"
            )
        sq += diff * diff
    return WeightVector(pi=np.exp(-sq / (2.0 * nu * nu)), nu=float(nu))


def batch_to_csv(batch: PerturbationBatch, weights: WeightVector, path) -> None:
    """Debug dump, one row per (example, feature)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "bin", "x", "z", "pi"])
        for i in range(batch.n):
            for j in range(batch.d):
                writer.writerow([
                    i, j, int(batch.bins[i, j]),
                    repr(float(batch.x[i, j])),
                    int(batch.z[i, j]),
                    repr(float(weights.pi[i])),
                ])
