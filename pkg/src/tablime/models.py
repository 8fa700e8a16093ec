"""The black-box zoo.

Structured model descriptions that both evaluate pointwise (vectorized over
rows) and expose their algebraic structure to the closed-form explanation
engine: linear, additive, multiplicative, rectangular indicator, rectangle
partition (e.g. a CART tree), Gaussian kernel sums, and opaque callables with
an explicit bound. Also a minimal variance-reduction CART fitter and a
partition refiner that intersects rectangles with a bin grid.

Additive/multiplicative factors are small declarative unary functions
(polynomial, Gaussian bump, interval indicator) so models round-trip through
JSON; arbitrary callables are accepted for computation but do not serialize.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .grid import BinGrid

__all__ = [
    "Additive",
    "GaussBump",
    "IndicatorRect",
    "IntervalIndicator",
    "KernelSum",
    "KernelTerm",
    "Linear",
    "Model",
    "Multiplicative",
    "Opaque",
    "Partition",
    "Poly",
    "Rectangle",
    "fit_cart",
    "model_from_json",
    "model_to_json",
    "refine_partition",
]


# ---------------------------------------------------------------------------
# unary building blocks for additive / multiplicative models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Poly:
    """Polynomial sum_k coeffs[k] * x^k. Poly((kappa,)) is the constant map."""

    coeffs: tuple

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float),
                                                np.asarray(self.coeffs, dtype=float))

    def breakpoints(self):
        return ()

    def to_obj(self):
        return {"kind": "poly", "coeffs": list(self.coeffs)}


@dataclass(frozen=True)
class GaussBump:
    """amplitude * exp(-(x - center)^2 / (2 scale^2))."""

    center: float
    scale: float
    amplitude: float = 1.0

    def __call__(self, x):
        z = (np.asarray(x, dtype=float) - self.center) / self.scale
        return self.amplitude * np.exp(-0.5 * z * z)

    def breakpoints(self):
        return ()

    def to_obj(self):
        return {"kind": "gauss", "center": self.center, "scale": self.scale,
                "amplitude": self.amplitude}


@dataclass(frozen=True)
class IntervalIndicator:
    """Indicator of the closed interval [lo, hi]."""

    lo: float
    hi: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = ((x >= self.lo) & (x <= self.hi)).astype(float)
        return float(out) if out.ndim == 0 else out

    def breakpoints(self):
        return (self.lo, self.hi)

    def to_obj(self):
        return {"kind": "interval", "lo": self.lo, "hi": self.hi}


def _unary_from_obj(obj):
    kind = obj["kind"]
    if kind == "poly":
        return Poly(tuple(obj["coeffs"]))
    if kind == "gauss":
        return GaussBump(obj["center"], obj["scale"], obj.get("amplitude", 1.0))
    if kind == "interval":
        return IntervalIndicator(obj["lo"], obj["hi"])
    raise ValueError(f"unknown unary function kind {kind!r}")


def _unary_breakpoints(fn):
    get = getattr(fn, "breakpoints", None)
    return tuple(get()) if get is not None else ()


# ---------------------------------------------------------------------------
# rectangles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned box prod_j [lower_j, upper_j] with lower_j < upper_j."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("rectangle needs lower_j < upper_j on every axis")

    @property
    def d(self) -> int:
        return self.lower.shape[0]

    def to_obj(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_obj(cls, obj):
        return cls(np.asarray(obj["lower"]), np.asarray(obj["upper"]))


# ---------------------------------------------------------------------------
# model variants
# ---------------------------------------------------------------------------

class Model:
    """Base class; subclasses implement evaluate() on (n, d) or (d,) input."""

    def evaluate(self, x):
        rows = np.atleast_2d(np.asarray(x, dtype=float))
        out = self._evaluate_rows(rows)
        return float(out[0]) if np.asarray(x).ndim == 1 else out

    def _evaluate_rows(self, rows):
        raise NotImplementedError

    def breakpoints(self, j: int) -> tuple:
        """Points where the model is not smooth along coordinate j."""
        return ()


@dataclass(frozen=True)
class Linear(Model):
    intercept: float
    coefficients: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coefficients",
                           np.asarray(self.coefficients, dtype=float).ravel())

    def _evaluate_rows(self, rows):
        return self.intercept + rows @ self.coefficients

    def to_obj(self):
        return {"variant": "linear", "intercept": self.intercept,
                "coefficients": self.coefficients.tolist()}


@dataclass(frozen=True)
class Additive(Model):
    """f(x) = sum_j funcs[j](x_j)."""

    funcs: tuple

    def _evaluate_rows(self, rows):
        out = np.zeros(rows.shape[0])
        for j, fn in enumerate(self.funcs):
            out += fn(rows[:, j])
        return out

    def breakpoints(self, j):
        return _unary_breakpoints(self.funcs[j])

    def to_obj(self):
        return {"variant": "additive", "funcs": [f.to_obj() for f in self.funcs]}


@dataclass(frozen=True)
class Multiplicative(Model):
    """f(x) = prod_j funcs[j](x_j)."""

    funcs: tuple

    def _evaluate_rows(self, rows):
        out = np.ones(rows.shape[0])
        for j, fn in enumerate(self.funcs):
            out *= fn(rows[:, j])
        return out

    def breakpoints(self, j):
        return _unary_breakpoints(self.funcs[j])

    def to_obj(self):
        return {"variant": "multiplicative",
                "funcs": [f.to_obj() for f in self.funcs]}


@dataclass(frozen=True)
class IndicatorRect(Model):
    """value on the closed rectangle, zero outside."""

    rect: Rectangle
    value: float = 1.0

    def _evaluate_rows(self, rows):
        inside = np.all((rows >= self.rect.lower) & (rows <= self.rect.upper), axis=1)
        return np.where(inside, self.value, 0.0)

    def breakpoints(self, j):
        return (float(self.rect.lower[j]), float(self.rect.upper[j]))

    def to_obj(self):
        return {"variant": "indicator", "rect": self.rect.to_obj(),
                "value": self.value}


@dataclass(frozen=True)
class Partition(Model):
    """f(x) = sum over pieces of value * 1{x in rectangle}.

    Piece membership is half-open (lower, upper] per axis, closed on the left
    at the partition bounding box, matching the bin-boundary convention so a
    covering partition evaluates to exactly one piece everywhere.
    """

    pieces: tuple  # of (Rectangle, float)

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("partition needs at least one piece")
        lows = np.min([r.lower for r, _ in self.pieces], axis=0)
        object.__setattr__(self, "_box_lower", lows)

    def _evaluate_rows(self, rows):
        out = np.zeros(rows.shape[0])
        box_lo = self._box_lower
        for rect, value in self.pieces:
            left_ok = (rows > rect.lower) | ((rows == rect.lower)
                                             & (rect.lower == box_lo))
            inside = np.all(left_ok & (rows <= rect.upper), axis=1)
            out[inside] += value
        return out

    def breakpoints(self, j):
        pts = set()
        for rect, _ in self.pieces:
            pts.add(float(rect.lower[j]))
            pts.add(float(rect.upper[j]))
        return tuple(sorted(pts))

    def to_obj(self):
        return {"variant": "partition",
                "pieces": [{"rect": r.to_obj(), "value": v}
                           for r, v in self.pieces]}


@dataclass(frozen=True)
class KernelTerm:
    """alpha * exp(-sum_{j in dims} (x_j - zeta_j)^2 / (2 gamma^2)).

    ``dims`` restricts the kernel to a coordinate subset (None means all);
    ``zeta`` lists the centers of the active coordinates in ``dims`` order.
    """

    alpha: float
    gamma: float
    zeta: np.ndarray
    dims: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "zeta", np.asarray(self.zeta, dtype=float).ravel())
        if self.gamma <= 0:
            raise ValueError("kernel scale must be positive")
        if self.dims is not None:
            object.__setattr__(self, "dims", tuple(int(j) for j in self.dims))
            if len(self.dims) != self.zeta.shape[0]:
                raise ValueError("need one center per active coordinate")

    def active_dims(self, d: int) -> tuple:
        return tuple(range(d)) if self.dims is None else self.dims

    def to_obj(self):
        return {"alpha": self.alpha, "gamma": self.gamma,
                "zeta": self.zeta.tolist(),
                "dims": None if self.dims is None else list(self.dims)}


@dataclass(frozen=True)
class KernelSum(Model):
    terms: tuple  # of KernelTerm

    def _evaluate_rows(self, rows):
        out = np.zeros(rows.shape[0])
        for term in self.terms:
            cols = list(term.active_dims(rows.shape[1]))
            diff = rows[:, cols] - term.zeta[None, :]
            out += term.alpha * np.exp(-0.5 * np.sum(diff * diff, axis=1)
                                       / (term.gamma ** 2))
        return out

    def to_obj(self):
        return {"variant": "kernel_sum", "terms": [t.to_obj() for t in self.terms]}


@dataclass(frozen=True)
class Opaque(Model):
    """Arbitrary callable on (n, d) rows with an explicit sup-norm bound."""

    fn: object
    bound: float

    def __post_init__(self):
        if not self.bound > 0:
            raise ValueError("opaque models need a positive bound")

    def _evaluate_rows(self, rows):
        out = np.asarray(self.fn(rows), dtype=float).ravel()
        bad = np.abs(out) > self.bound * (1 + 1e-9)
        if bad.any():
            raise ValueError(
                f"opaque model exceeded its declared bound {self.bound} "
                f"(saw {np.max(np.abs(out)):.6g})"
            )
        return out

    def to_obj(self):
        raise TypeError("opaque models do not serialize")


def model_to_json(model: Model) -> str:
    return json.dumps(model.to_obj())


def model_from_json(text: str) -> Model:
    return _model_from_obj(json.loads(text))


def _model_from_obj(obj) -> Model:
    variant = obj["variant"]
    if variant == "linear":
        return Linear(obj["intercept"], np.asarray(obj["coefficients"]))
    if variant == "additive":
        return Additive(tuple(_unary_from_obj(o) for o in obj["funcs"]))
    if variant == "multiplicative":
        return Multiplicative(tuple(_unary_from_obj(o) for o in obj["funcs"]))
    if variant == "indicator":
        return IndicatorRect(Rectangle.from_obj(obj["rect"]), obj["value"])
    if variant == "partition":
        return Partition(tuple((Rectangle.from_obj(o["rect"]), float(o["value"]))
                               for o in obj["pieces"]))
    if variant == "kernel_sum":
        return KernelSum(tuple(
            KernelTerm(t["alpha"], t["gamma"], np.asarray(t["zeta"]),
                       None if t.get("dims") is None else tuple(t["dims"]))
            for t in obj["terms"]))
    raise ValueError(f"unknown model variant {variant!r}")


# ---------------------------------------------------------------------------
# CART fitting and partition refinement
# ---------------------------------------------------------------------------

def _sse(y):
    return float(np.sum((y - y.mean()) ** 2)) if y.size else 0.0


def _best_split(x, y):
    """(feature, threshold, sse_drop) maximizing variance reduction."""
    best = (None, None, 0.0)
    parent = _sse(y)
    for j in range(x.shape[1]):
        vals = np.unique(x[:, j])
        if vals.size < 2:
            continue
        for thr in 0.5 * (vals[1:] + vals[:-1]):
            left = x[:, j] <= thr
            drop = parent - _sse(y[left]) - _sse(y[~left])
            if drop > best[2] + 1e-12:
                best = (j, float(thr), drop)
    return best


def fit_cart(train: np.ndarray, targets: np.ndarray, max_depth: int) -> Partition:
    """Axis-aligned variance-reduction regression tree as a rectangle partition.

    Split candidates are midpoints between consecutive sorted unique feature
    values; leaves emit the mean target. The returned rectangles tile the
    training bounding box.
    """
    x = np.atleast_2d(np.asarray(train, dtype=float))
    if x.shape[0] == 1 and np.asarray(train).ndim == 1:
        x = x.T
    y = np.asarray(targets, dtype=float).ravel()
    if x.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")

    pieces = []

    def grow(rows_x, rows_y, lower, upper, depth):
        if depth >= max_depth or rows_y.size < 2:
            pieces.append((Rectangle(lower, upper), float(rows_y.mean())))
            return
        j, thr, drop = _best_split(rows_x, rows_y)
        if j is None or drop <= 0.0:
            pieces.append((Rectangle(lower, upper), float(rows_y.mean())))
            return
        left = rows_x[:, j] <= thr
        up_l, lo_r = upper.copy(), lower.copy()
        up_l[j] = thr
        lo_r[j] = thr
        grow(rows_x[left], rows_y[left], lower.copy(), up_l, depth + 1)
        grow(rows_x[~left], rows_y[~left], lo_r, upper.copy(), depth + 1)

    grow(x, y, x.min(axis=0), x.max(axis=0), 0)
    return Partition(tuple(pieces))


def refine_partition(partition: Partition, grid: BinGrid) -> Partition:
    """Cut every piece at interior grid boundaries.

    Each output rectangle lies inside a single d-dimensional grid bin; values
    are preserved and the union is unchanged up to boundary sets.
    """
    out = []
    for rect, value in partition.pieces:
        segments_per_dim = []
        for j in range(rect.d):
            cuts = [c for c in grid.boundaries[j, 1:-1]
                    if rect.lower[j] < c < rect.upper[j]]
            edges = [rect.lower[j], *cuts, rect.upper[j]]
            segments_per_dim.append(list(zip(edges[:-1], edges[1:])))
        idx = [0] * rect.d
        while True:
            lo = np.array([segments_per_dim[j][idx[j]][0] for j in range(rect.d)])
            hi = np.array([segments_per_dim[j][idx[j]][1] for j in range(rect.d)])
            out.append((Rectangle(lo, hi), value))
            for j in range(rect.d):
                idx[j] += 1
                if idx[j] < len(segments_per_dim[j]):
                    break
                idx[j] = 0
            else:
                break
    return Partition(tuple(out))
