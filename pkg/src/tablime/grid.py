"""Quantile discretization of training data.

Builds per-feature bin boundaries (type-7 quantiles), per-bin means and
standard deviations, and locates the bin indices of an example. Bin indices
are 0-based throughout the package. Bins are half-open ``(q[b-1], q[b]]``
except the first, which is closed on the left, so every point of the support
maps to exactly one bin.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .numerics import TruncNormalParams

__all__ = [
    "BinGrid",
    "GridError",
    "InsufficientDataError",
    "NonFiniteDataError",
    "OutOfSupportError",
    "bin_id",
    "fit_grid",
    "load_matrix_csv",
]

# smallest usable per-bin scale, relative to bin width (degenerate-bin clamp)
_STD_REL_FLOOR = 1e-9
_STD_ABS_FLOOR = 1e-12


class GridError(ValueError):
    pass


class InsufficientDataError(GridError):
    """A column cannot host the requested number of nonempty bins."""


class NonFiniteDataError(GridError):
    """Training data contains NaN or infinities."""


class OutOfSupportError(GridError):
    """The example to explain lies outside the grid support."""


@dataclass(frozen=True)
class BinGrid:
    """Discretization parameters: boundaries (d, p+1), means/stds (d, p)."""

    boundaries: np.ndarray
    bin_means: np.ndarray
    bin_stds: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.boundaries, dtype=float)
        if q.ndim != 2 or q.shape[1] < 3:
            raise GridError("boundaries must be (d, p+1) with p >= 2")
        if not np.all(np.diff(q, axis=1) > 0):
            raise GridError("bin boundaries must be strictly increasing")
        if self.bin_means.shape != (q.shape[0], q.shape[1] - 1):
            raise GridError("bin_means shape mismatch")
        if self.bin_stds.shape != self.bin_means.shape:
            raise GridError("bin_stds shape mismatch")
        if not np.all(self.bin_stds > 0):
            raise GridError("bin_stds must be positive after clamping")

    @property
    def d(self) -> int:
        return self.boundaries.shape[0]

    @property
    def p(self) -> int:
        return self.boundaries.shape[1] - 1

    @property
    def support(self) -> np.ndarray:
        """(d, 2) array of [q[j,0], q[j,p]] per feature."""
        return np.stack([self.boundaries[:, 0], self.boundaries[:, -1]], axis=1)

    def bin_params(self, j: int, b: int) -> TruncNormalParams:
        """Truncated-Gaussian parameters of bin b (0-based) on feature j."""
        return TruncNormalParams(
            mu=float(self.bin_means[j, b]),
            sigma=float(self.bin_stds[j, b]),
            lo=float(self.boundaries[j, b]),
            hi=float(self.boundaries[j, b + 1]),
        )

    def bin_center(self, b_star: np.ndarray) -> np.ndarray:
        """Midpoints of the given per-feature bin indices."""
        b = np.asarray(b_star, dtype=int)
        lo = self.boundaries[np.arange(self.d), b]
        hi = self.boundaries[np.arange(self.d), b + 1]
        return 0.5 * (lo + hi)

    def to_json(self) -> str:
        return json.dumps({
            "boundaries": self.boundaries.tolist(),
            "bin_means": self.bin_means.tolist(),
            "bin_stds": self.bin_stds.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "BinGrid":
        obj = json.loads(text)
        return cls(
            boundaries=np.asarray(obj["boundaries"], dtype=float),
            bin_means=np.asarray(obj["bin_means"], dtype=float),
            bin_stds=np.asarray(obj["bin_stds"], dtype=float),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "BinGrid":
        with open(path) as fh:
            return cls.from_json(fh.read())


def fit_grid(train: np.ndarray, p: int) -> BinGrid:
    """Fit the discretization on an (m, d) training matrix with p bins.

    Boundaries are the b/p quantiles (linear interpolation between order
    statistics) so q[j,0] and q[j,p] are the column min and max; per-bin
    mean/std use the points with q[j,b-1] < x <= q[j,b] (first bin closed on
    the left). Zero per-bin scales are clamped to keep every bin samplable.
    """
    if p < 2:
        raise GridError(f"need at least 2 bins, got p={p}")
    x = np.asarray(train, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 2:
        raise GridError("training data must be a matrix with at least 2 rows")
    if not np.all(np.isfinite(x)):
        raise NonFiniteDataError("training data contains NaN or Inf")
    m, d = x.shape
    if m < p:
        raise InsufficientDataError(f"{m} rows cannot fill {p} bins")

    levels = np.arange(p + 1) / p
    boundaries = np.quantile(x, levels, axis=0, method="linear").T  # (d, p+1)
    if not np.all(np.diff(boundaries, axis=1) > 0):
        bad = np.where(~np.all(np.diff(boundaries, axis=1) > 0, axis=1))[0]
        raise InsufficientDataError(
            f"duplicate quantile boundaries on feature(s) {bad.tolist()}; "
            f"data too heavily tied for p={p}"
        )

    means = np.empty((d, p))
    stds = np.empty((d, p))
    for j in range(d):
        col = x[:, j]
        for b in range(p):
            lo, hi = boundaries[j, b], boundaries[j, b + 1]
            mask = (col > lo) & (col <= hi) if b > 0 else (col >= lo) & (col <= hi)
            pts = col[mask]
            if pts.size == 0:
                raise InsufficientDataError(
                    f"empty bin {b} on feature {j}; data too heavily tied"
                )
            means[j, b] = pts.mean()
            width = hi - lo
            stds[j, b] = max(pts.std(), _STD_REL_FLOOR * width, _STD_ABS_FLOOR)
    return BinGrid(boundaries=boundaries, bin_means=means, bin_stds=stds)


def bin_id(xi: np.ndarray, grid: BinGrid) -> np.ndarray:
    """0-based bin index of each coordinate of xi.

    Raises OutOfSupportError when any coordinate leaves [q[j,0], q[j,p]].
    """
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.shape[0] != grid.d:
        raise GridError(f"expected {grid.d} coordinates, got {xi.shape[0]}")
    lo, hi = grid.boundaries[:, 0], grid.boundaries[:, -1]
    if np.any(xi < lo) or np.any(xi > hi) or not np.all(np.isfinite(xi)):
        raise OutOfSupportError(
            f"example {xi.tolist()} outside support "
            f"{np.stack([lo, hi], axis=1).tolist()}"
        )
    out = np.empty(grid.d, dtype=int)
    for j in range(grid.d):
        # (q[b-1], q[b]] bins: a point equal to q[b] belongs to bin b-1 (0-based)
        idx = int(np.searchsorted(grid.boundaries[j], xi[j], side="left")) - 1
        out[j] = max(idx, 0)
    return out


def load_matrix_csv(path) -> np.ndarray:
    """Read a numeric CSV (one row per example); a header row is skipped."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise GridError(f"{path}: empty file")
    start = 0
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        start = 1
    if start == len(rows):
        raise GridError(f"{path}: no data rows")
    data = np.array([[float(v) for v in row] for row in rows[start:]], dtype=float)
    return data
