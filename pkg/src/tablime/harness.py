"""Experiment runner: repeated surrogate fits checked against the theory.

Configures grids and models, runs repeated explanation fits, compares the
empirical mean against the closed-form limit with a standard-error based
tolerance, and emits CSV/JSON reports. Also: bandwidth sweeps, a
moment-concentration probe, and 2-D explanation field maps.

All randomness is derived from (seed, repetition) keys, so reports are
reproducible and independent of execution order. Empirical-vs-theory checks
pass when |mean - theory| <= 4 * SE + 1e-3 per coordinate.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .grid import BinGrid, bin_id, fit_grid, load_matrix_csv
from .models import Model, _model_from_obj
from .sampler import sample_batch, weights_default
from .surrogate import Explanation, RankDeficientError, fit_surrogate
from .theory import large_bandwidth_limit, limit_explanation, limit_system

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "FieldMap",
    "ProbeReport",
    "SweepResult",
    "concentration_probe",
    "default_bandwidth",
    "field_map",
    "run_experiment",
    "sweep_bandwidth",
]

PASS_SE_MULTIPLE = 4.0
PASS_ABS_FLOOR = 1e-3


class ConfigError(ValueError):
    pass


def default_bandwidth(d: int) -> float:
    """Default kernel width sqrt(0.75 * d)."""
    return float(np.sqrt(0.75 * d))


@dataclass
class ExperimentConfig:
    """Run parameters: grid source, sampling sizes, bandwidth, model, seed.

    Exactly one of ``grid``, ``data_csv``, ``synthetic`` provides the
    discretization; ``xi`` gives explicit coordinates while ``xi_bins``
    selects bin centers (0-based bin indices). ``nu="default"`` resolves to
    sqrt(0.75 * d).
    """

    model: Model
    grid: BinGrid | None = None
    data_csv: str | None = None
    synthetic: dict | None = None       # {"bounds": [[lo, hi], ...], "m": int, "seed": int}
    p: int = 4
    nu: float | str = "default"
    n: int = 5000
    lam: float = 1.0
    repetitions: int = 100
    xi: np.ndarray | None = None
    xi_bins: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if isinstance(self.nu, str):
            if self.nu != "default":
                raise ConfigError(f"nu must be positive or 'default', got {self.nu!r}")
        elif self.nu <= 0:
            raise ConfigError(f"nu must be positive, got {self.nu}")
        if sum(x is not None for x in (self.grid, self.data_csv, self.synthetic)) != 1:
            raise ConfigError("provide exactly one of grid, data_csv, synthetic")
        if self.xi is None and self.xi_bins is None:
            raise ConfigError("provide xi or xi_bins")

    @classmethod
    def from_dict(cls, obj: dict, base_model: Model | None = None) -> "ExperimentConfig":
        obj = dict(obj)
        model = base_model
        if model is None:
            spec = obj.pop("model")
            if isinstance(spec, dict) and "path" in spec:
                with open(spec["path"]) as fh:
                    spec = json.load(fh)
            model = _model_from_obj(spec)
        else:
            obj.pop("model", None)
        data = obj.pop("data", {})
        xi_field = obj.pop("xi", None)
        xi, xi_bins = None, None
        if isinstance(xi_field, dict):
            xi_bins = np.asarray(xi_field["bin_center"], dtype=int)
        elif xi_field is not None:
            xi = np.asarray(xi_field, dtype=float)
        grid = None
        if "grid" in data:
            grid = BinGrid.load(data["grid"])
        return cls(
            model=model,
            grid=grid,
            data_csv=data.get("csv"),
            synthetic=data.get("synthetic"),
            p=int(obj.pop("p", 4)),
            nu=obj.pop("nu", "default"),
            n=int(obj.pop("n", 5000)),
            lam=float(obj.pop("lambda", obj.pop("lam", 1.0))),
            repetitions=int(obj.pop("repetitions", 100)),
            xi=xi,
            xi_bins=xi_bins,
            seed=int(obj.pop("seed", 0)),
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        text = open(path, "rb").read()
        if str(path).endswith(".toml"):
            if sys.version_info >= (3, 11):
                import tomllib
            else:
                import tomli as tomllib
            obj = tomllib.loads(text.decode())
        else:
            obj = json.loads(text.decode())
        return cls.from_dict(obj)

    def build_grid(self) -> BinGrid:
        if self.grid is not None:
            return self.grid
        if self.data_csv is not None:
            return fit_grid(load_matrix_csv(self.data_csv), self.p)
        spec = self.synthetic
        bounds = np.asarray(spec["bounds"], dtype=float)
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        train = rng.uniform(bounds[:, 0], bounds[:, 1], size=(int(spec["m"]), bounds.shape[0]))
        return fit_grid(train, self.p)

    def resolve(self) -> tuple[BinGrid, np.ndarray, float]:
        """(grid, b_star, nu) with every selector expanded."""
        grid = self.build_grid()
        if self.xi_bins is not None:
            xi = grid.bin_center(np.asarray(self.xi_bins, dtype=int))
        else:
            xi = np.asarray(self.xi, dtype=float)
        b_star = bin_id(xi, grid)
        nu = default_bandwidth(grid.d) if self.nu == "default" else float(self.nu)
        if self.n <= grid.d + 1:
            raise ConfigError(f"need n > d+1, got n={self.n}, d={grid.d}")
        return grid, b_star, nu

    def echo(self) -> dict:
        return {
            "p": self.p, "nu": self.nu, "n": self.n, "lambda": self.lam,
            "repetitions": self.repetitions, "seed": self.seed,
            "xi": None if self.xi is None else np.asarray(self.xi).tolist(),
            "xi_bins": None if self.xi_bins is None else np.asarray(self.xi_bins).tolist(),
        }


def _rep_seeds(seed: int, repetitions: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(repetitions, dtype=np.uint64)


def _fmt(x) -> str:
    return repr(float(x))


@dataclass
class ExperimentReport:
    """Per-repetition coefficients, summary statistics, theory, verdicts."""

    config_echo: dict
    beta_hat: np.ndarray          # (repetitions, d+1), NaN rows for failures
    theory: np.ndarray            # (d+1,)
    b_star: np.ndarray
    bin_lower: np.ndarray         # (d,)
    bin_upper: np.ndarray         # (d,)
    nu: float
    failures: list = field(default_factory=list)
    runtime: float = 0.0

    @property
    def mean(self) -> np.ndarray:
        return np.nanmean(self.beta_hat, axis=0)

    @property
    def std(self) -> np.ndarray:
        return np.nanstd(self.beta_hat, axis=0)

    @property
    def stderr(self) -> np.ndarray:
        good = np.sum(~np.isnan(self.beta_hat[:, 0]))
        return self.std / np.sqrt(max(good, 1))

    @property
    def passed(self) -> np.ndarray:
        return (np.abs(self.mean - self.theory)
                <= PASS_SE_MULTIPLE * self.stderr + PASS_ABS_FLOOR)

    def all_passed(self) -> bool:
        return bool(np.all(self.passed))

    def to_csv(self, path) -> None:
        """Fixed columns: feature_index, bin_lower, bin_upper, beta_hat_mean,
        beta_hat_std, beta_hat_se, beta_theory, pass. Row 0 is the intercept
        (empty bin bounds)."""
        mean, std, se, passed = self.mean, self.std, self.stderr, self.passed
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature_index", "bin_lower", "bin_upper",
                             "beta_hat_mean", "beta_hat_std", "beta_hat_se",
                             "beta_theory", "pass"])
            for k in range(mean.shape[0]):
                lo = "" if k == 0 else _fmt(self.bin_lower[k - 1])
                hi = "" if k == 0 else _fmt(self.bin_upper[k - 1])
                writer.writerow([k, lo, hi, _fmt(mean[k]), _fmt(std[k]),
                                 _fmt(se[k]), _fmt(self.theory[k]),
                                 str(bool(passed[k])).lower()])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({
                "config": self.config_echo,
                "nu": self.nu,
                "b_star": self.b_star.tolist(),
                "beta_hat": [[None if np.isnan(v) else v for v in row]
                             for row in self.beta_hat.tolist()],
                "mean": self.mean.tolist(),
                "std": self.std.tolist(),
                "stderr": self.stderr.tolist(),
                "theory": self.theory.tolist(),
                "pass": self.passed.tolist(),
                "failures": self.failures,
                "runtime_seconds": self.runtime,
            }, fh, indent=2)


def run_experiment(config: ExperimentConfig, theory: Explanation | None = None) -> ExperimentReport:
    """Repeat sample -> predict -> weight -> fit; compare against the limit.

    Rank-deficient repetitions are recorded (NaN row) rather than fatal.
    Deterministic for a given config and seed.
    """
    start = time.perf_counter()
    grid, b_star, nu = config.resolve()
    model = config.model
    if theory is None:
        theory = limit_explanation(model, grid, b_star, nu)

    d = grid.d
    beta_hat = np.full((config.repetitions, d + 1), np.nan)
    failures = []
    for rep, rep_seed in enumerate(_rep_seeds(config.seed, config.repetitions)):
        batch = sample_batch(grid, b_star, config.n, int(rep_seed))
        y = model.evaluate(batch.x)
        weights = weights_default(batch.z, nu)
        try:
            fitted = fit_surrogate(batch.z, y, weights, lam=config.lam)
        except RankDeficientError as exc:
            failures.append({"repetition": rep, "error": str(exc)})
            continue
        beta_hat[rep] = fitted.as_vector()

    idx = np.arange(d)
    return ExperimentReport(
        config_echo=config.echo(),
        beta_hat=beta_hat,
        theory=theory.as_vector(),
        b_star=b_star,
        bin_lower=grid.boundaries[idx, b_star],
        bin_upper=grid.boundaries[idx, b_star + 1],
        nu=nu,
        failures=failures,
        runtime=time.perf_counter() - start,
    )


@dataclass
class SweepResult:
    nus: list
    reports: list
    limit: Explanation
    sign_changes: np.ndarray   # (d+1,) bool: theory changes sign across the sweep

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["nu", "feature_index", "beta_hat_mean", "beta_hat_se",
                             "beta_theory", "pass"])
            for nu, report in zip(self.nus, self.reports):
                mean, se, passed = report.mean, report.stderr, report.passed
                for k in range(mean.shape[0]):
                    writer.writerow([_fmt(nu), k, _fmt(mean[k]), _fmt(se[k]),
                                     _fmt(report.theory[k]),
                                     str(bool(passed[k])).lower()])
            for k, v in enumerate(self.limit.as_vector()):
                writer.writerow(["inf", k, "", "", _fmt(v), ""])

    def all_passed(self) -> bool:
        return all(r.all_passed() for r in self.reports)


def sweep_bandwidth(config: ExperimentConfig, nus) -> SweepResult:
    """One experiment per bandwidth, plus the infinite-bandwidth limit row."""
    nus = [float(v) for v in nus]
    if any(v <= 0 for v in nus):
        raise ConfigError("bandwidths must be positive")
    grid, b_star, _ = config.resolve()
    reports = []
    for nu in nus:
        cfg = ExperimentConfig(
            model=config.model, grid=grid, p=config.p, nu=nu, n=config.n,
            lam=config.lam, repetitions=config.repetitions,
            xi=None if config.xi is None else np.asarray(config.xi),
            xi_bins=None if config.xi_bins is None else np.asarray(config.xi_bins),
            seed=config.seed,
        )
        reports.append(run_experiment(cfg))
    limit = large_bandwidth_limit(config.model, grid, b_star)
    theories = np.stack([r.theory for r in reports])
    signs = np.sign(theories)
    nonzero = np.abs(theories) > 1e-12
    sign_changes = np.array([
        bool(np.unique(signs[nonzero[:, k], k]).size > 1)
        for k in range(theories.shape[1])
    ])
    return SweepResult(nus=nus, reports=reports, limit=limit,
                       sign_changes=sign_changes)


@dataclass
class ProbeReport:
    """Moment-matrix / moment-vector concentration measurements."""

    ns: list
    sigma_errors: np.ndarray    # (len(ns), trials) spectral norms
    gamma_errors: np.ndarray    # (len(ns), trials) Euclidean norms
    entries_in_unit_interval: bool

    @property
    def median_sigma(self) -> np.ndarray:
        return np.median(self.sigma_errors, axis=1)

    @property
    def median_gamma(self) -> np.ndarray:
        return np.median(self.gamma_errors, axis=1)

    @property
    def sigma_ratios(self) -> np.ndarray:
        med = self.median_sigma
        return med[:-1] / med[1:]

    @property
    def gamma_ratios(self) -> np.ndarray:
        med = self.median_gamma
        return med[:-1] / med[1:]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "median_sigma_err", "median_gamma_err"])
            for n, s, g in zip(self.ns, self.median_sigma, self.median_gamma):
                writer.writerow([n, _fmt(s), _fmt(g)])


def _spectral_norm(sym: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(sym))))


def concentration_probe(config: ExperimentConfig, ns, trials: int = 20) -> ProbeReport:
    """Empirical moment errors against the closed forms, per sample size.

    For the square-root concentration rate, the median error ratio between n
    and 4n should sit near 2.
    """
    ns = [int(v) for v in ns]
    if any(b <= a for a, b in zip(ns[:-1], ns[1:])):
        raise ConfigError("sample sizes must be increasing")
    grid, b_star, nu = config.resolve()
    model = config.model
    system = limit_system(model, grid, b_star, nu)
    sigma_err = np.empty((len(ns), trials))
    gamma_err = np.empty((len(ns), trials))
    seeds = _rep_seeds(config.seed, len(ns) * trials).reshape(len(ns), trials)
    in_unit = True
    for i, n in enumerate(ns):
        for t in range(trials):
            batch = sample_batch(grid, b_star, n, int(seeds[i, t]))
            pi = weights_default(batch.z, nu).pi
            design = np.concatenate([np.ones((n, 1)), batch.z], axis=1)
            weighted = design * pi[:, None]
            sigma_hat = weighted.T @ design / n
            gamma_hat = weighted.T @ model.evaluate(batch.x) / n
            in_unit &= bool(np.all(sigma_hat >= 0) and np.all(sigma_hat <= 1))
            sigma_err[i, t] = _spectral_norm(sigma_hat - system.sigma)
            gamma_err[i, t] = float(np.linalg.norm(gamma_hat - system.gamma))
    return ProbeReport(ns=ns, sigma_errors=sigma_err, gamma_errors=gamma_err,
                       entries_in_unit_interval=in_unit)


@dataclass
class FieldMap:
    """Theory explanation at the center of every 2-D bin."""

    rows: list   # of (bin_i, bin_j, beta_1, beta_2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_i", "bin_j", "beta_1", "beta_2"])
            for bi, bj, b1, b2 in self.rows:
                writer.writerow([bi, bj, _fmt(b1), _fmt(b2)])


def field_map(model: Model, grid: BinGrid, nu: float) -> FieldMap:
    """Explanation vectors over all 2-D bin centers (d = 2 only)."""
    if grid.d != 2:
        raise ConfigError("field maps are defined for 2-D grids only")
    rows = []
    for bi in range(grid.p):
        for bj in range(grid.p):
            b_star = np.array([bi, bj])
            expl = limit_explanation(model, grid, b_star, nu)
            rows.append((bi, bj, float(expl.coefficients[0]),
                         float(expl.coefficients[1])))
    return FieldMap(rows=rows)
