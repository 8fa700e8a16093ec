"""Render figures from tablime CSV reports.

Three figure kinds, one per documented CSV contract:

* whisker - per-coefficient boxes from an explain summary CSV
  (feature_index, bin_lower, bin_upper, beta_hat_mean, beta_hat_std,
  beta_hat_se, beta_theory, pass), theory overlaid as red crosses;
* field   - one arrow per 2-D bin from a field CSV
  (bin_i, bin_j, beta_1, beta_2);
* sweep   - coefficient curves over bandwidth from a sweep CSV
  (nu, feature_index, beta_hat_mean, beta_hat_se, beta_theory, pass),
  with the infinite-bandwidth rows drawn as dotted levels.

Rendering is read-only and recomputes nothing: every number drawn comes
straight out of the CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["FigureSpec", "RenderResult", "SchemaError", "render"]

KINDS = ("whisker", "field", "sweep")

REQUIRED_COLUMNS = {
    "whisker": ("feature_index", "bin_lower", "bin_upper", "beta_hat_mean",
                "beta_hat_std", "beta_hat_se", "beta_theory", "pass"),
    "field": ("bin_i", "bin_j", "beta_1", "beta_2"),
    "sweep": ("nu", "feature_index", "beta_hat_mean", "beta_hat_se",
              "beta_theory", "pass"),
}


class SchemaError(ValueError):
    """The input CSV does not match the documented report contract."""


@dataclass(frozen=True)
class FigureSpec:
    input_csv: str
    kind: str
    output: str
    title: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; "
                              f"expected one of {KINDS}")


@dataclass(frozen=True)
class RenderResult:
    """Where the image went, how many marks it contains, and the exact
    numbers that were drawn (for reproducibility checks)."""

    path: str
    marks: int
    data: dict = field(default_factory=dict)


def read_rows(path, kind: str) -> list[dict]:
    required = REQUIRED_COLUMNS[kind]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [column for column in required if column not in header]
        if missing:
            raise SchemaError(
                f"{path}: missing required column(s) "
                f"{', '.join(repr(c) for c in missing)} for kind {kind!r} "
                f"(found {header})"
            )
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def render(spec: FigureSpec) -> RenderResult:
    """Render one figure; the output format follows the file suffix."""
    rows = read_rows(spec.input_csv, spec.kind)
    fig, ax = plt.subplots(figsize=(7.0, 5.0), dpi=150)
    try:
        if spec.kind == "whisker":
            result = _draw_whisker(ax, rows, spec)
        elif spec.kind == "field":
            result = _draw_field(ax, rows, spec)
        else:
            result = _draw_sweep(ax, rows, spec)
        if spec.title:
            ax.set_title(spec.title)
        fig.tight_layout()
        fig.savefig(spec.output)
    finally:
        plt.close(fig)
    return result


def _label(row) -> str:
    k = int(row["feature_index"])
    if k == 0 or not row["bin_lower"]:
        return "intercept"
    return f"x{k} in ({float(row['bin_lower']):.3g}, {float(row['bin_upper']):.3g}]"


def _draw_whisker(ax, rows, spec) -> RenderResult:
    rows = sorted(rows, key=lambda r: int(r["feature_index"]))
    mean = np.array([float(r["beta_hat_mean"]) for r in rows])
    std = np.array([float(r["beta_hat_std"]) for r in rows])
    se = np.array([float(r["beta_hat_se"]) for r in rows])
    theory = np.array([float(r["beta_theory"]) for r in rows])
    stats = [{
        "med": m, "q1": m - s, "q3": m + s,
        "whislo": m - 2 * w, "whishi": m + 2 * w,
        "mean": m, "fliers": [],
    } for m, s, w in zip(mean, se, std)]
    positions = np.arange(len(rows))
    ax.bxp(stats, positions=positions, orientation="horizontal",
           showmeans=False, boxprops={"color": "0.25"},
           medianprops={"color": "tab:blue"})
    ax.plot(theory, positions, "x", color="tab:red", markersize=8,
            label="theory")
    ax.axvline(0.0, color="0.6", linestyle=":", linewidth=0.8)
    ax.set_yticks(positions)
    ax.set_yticklabels([_label(r) for r in rows], fontsize=8)
    ax.set_xlabel("interpretable coefficient")
    ax.legend(loc="best", fontsize=8)
    return RenderResult(path=spec.output, marks=len(rows),
                        data={"mean": mean, "theory": theory, "std": std})


def _draw_field(ax, rows, spec) -> RenderResult:
    bi = np.array([int(r["bin_i"]) for r in rows])
    bj = np.array([int(r["bin_j"]) for r in rows])
    b1 = np.array([float(r["beta_1"]) for r in rows])
    b2 = np.array([float(r["beta_2"]) for r in rows])
    # normalize so the longest arrow spans ~0.45 of a cell (field figures are
    # direction/relative-magnitude plots, not to scale)
    longest = float(np.hypot(b1, b2).max())
    scale = longest / 0.45 if longest > 0 else 1.0
    ax.quiver(bi + 0.5, bj + 0.5, b1, b2, angles="xy", scale_units="xy",
              scale=scale, width=4e-3, color="0.15")
    ax.set_xticks(np.arange(bi.max() + 2))
    ax.set_yticks(np.arange(bj.max() + 2))
    ax.grid(True, color="0.8", linewidth=0.6)
    ax.set_xlim(0, bi.max() + 1)
    ax.set_ylim(0, bj.max() + 1)
    ax.set_xlabel("bin index, axis 1")
    ax.set_ylabel("bin index, axis 2")
    ax.set_aspect("equal")
    return RenderResult(path=spec.output, marks=len(rows),
                        data={"bin_i": bi, "bin_j": bj, "beta_1": b1, "beta_2": b2})


def _draw_sweep(ax, rows, spec) -> RenderResult:
    finite = [r for r in rows if r["nu"] != "inf"]
    limits = [r for r in rows if r["nu"] == "inf"]
    coords = sorted({int(r["feature_index"]) for r in finite})
    curves = 0
    drawn = {}
    for k in coords:
        sub = sorted((r for r in finite if int(r["feature_index"]) == k),
                     key=lambda r: float(r["nu"]))
        nus = np.array([float(r["nu"]) for r in sub])
        mean = np.array([float(r["beta_hat_mean"]) for r in sub])
        se = np.array([float(r["beta_hat_se"]) for r in sub])
        theory = np.array([float(r["beta_theory"]) for r in sub])
        label = "intercept" if k == 0 else f"beta_{k}"
        line = ax.errorbar(nus, mean, yerr=4 * se, marker="o", markersize=3,
                           capsize=2, label=label)
        ax.plot(nus, theory, linestyle="--", linewidth=1.0,
                color=line.lines[0].get_color())
        drawn[k] = {"nu": nus, "mean": mean, "theory": theory}
        curves += 1
    for r in limits:
        if r["beta_theory"]:
            ax.axhline(float(r["beta_theory"]), linestyle=":", linewidth=0.8,
                       color="0.4")
    ax.set_xscale("log")
    ax.set_xlabel("bandwidth")
    ax.set_ylabel("interpretable coefficient")
    ax.legend(loc="best", fontsize=8)
    return RenderResult(path=spec.output, marks=curves, data={"curves": drawn})
