"""Temperature verification on Gaussians and the hyperparameter sweep."""

from __future__ import annotations

import csv
import itertools
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .langevin import CoolingConfig, FringeDetector, chain_moments
from .metrics import manifold_residual
from .rng import Rng
from .score import GaussianDensity
from .translate import ToyCycleGan, run_lcool_pipeline

log = logging.getLogger(__name__)

# default sweep grid
DEFAULT_TEMPERATURES = (0.0001, 0.001, 0.005, 0.01)
DEFAULT_ALPHAS = (0.001, 0.005, 0.01)
DEFAULT_N_STEPS = (20, 40, 60, 80, 100)


# -- temperature check ------------------------------------------------------


@dataclass
class TemperatureRow:
    beta: float
    alpha: float
    delta_sq: float
    mean: list
    var: list
    expected_var: list
    max_rel_error: float
    heating: bool
    passed: bool


def verify_temperature(
    density: GaussianDensity,
    betas,
    chain_length=100_000,
    seed=0,
    *,
    alpha=0.005,
    n_chains=32,
    burn_in=0.1,
    rel_tol=0.10,
) -> list[TemperatureRow]:
    """Check that Langevin chains with ``delta_sq = 2 alpha / beta`` reach ``N(mu, Sigma / beta)``.

    For each beta, ``n_chains`` chains of ``chain_length`` steps start at the
    mean; after burn-in the pooled per-coordinate variance is compared with
    the diagonal of ``Sigma / beta``.
    """
    if chain_length < 10_000:
        raise ValueError("chain_length must be at least 10000")
    rows = []
    root = Rng(seed)
    for i, beta in enumerate(betas):
        if not beta > 0:
            raise ValueError(f"beta must be positive, got {beta}")
        delta_sq = 2.0 * alpha / beta
        x0 = np.tile(density.mean, (n_chains, 1))
        mom = chain_moments(x0, density, alpha, delta_sq, chain_length, root.child(i), burn_in)
        expected = np.diag(density.covariance) / beta
        rel = np.abs(mom.var - expected) / expected
        rows.append(
            TemperatureRow(
                beta=float(beta),
                alpha=float(alpha),
                delta_sq=delta_sq,
                mean=mom.mean.tolist(),
                var=mom.var.tolist(),
                expected_var=expected.tolist(),
                max_rel_error=float(rel.max()),
                heating=beta < 1,
                passed=bool(np.all(rel <= rel_tol)),
            )
        )
        log.info("beta=%g var=%s expected=%s", beta, mom.var, expected)
    return rows


def write_temperature_csv(rows, path):
    dim = len(rows[0].var) if rows else 0
    head = ["beta", "alpha", "delta_sq"]
    head += [f"mean{j + 1}" for j in range(dim)]
    head += [f"var{j + 1}" for j in range(dim)]
    head += [f"expected_var{j + 1}" for j in range(dim)]
    head += ["max_rel_error", "heating", "passed"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for r in rows:
            w.writerow([
                _f(r.beta), _f(r.alpha), _f(r.delta_sq),
                *map(_f, r.mean), *map(_f, r.var), *map(_f, r.expected_var),
                _f(r.max_rel_error), int(r.heating), int(r.passed),
            ])


def _f(v):
    return f"{v:.17g}"


# -- sweep ------------------------------------------------------------------


@dataclass
class SweepGrid:
    temperatures: tuple = DEFAULT_TEMPERATURES
    alphas: tuple = DEFAULT_ALPHAS
    n_steps: tuple = DEFAULT_N_STEPS

    def __post_init__(self):
        for name in ("temperatures", "alphas", "n_steps"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"sweep axis {name} is empty")
            setattr(self, name, vals)

    def cells(self):
        """``(alpha, temperature, n_steps)`` triples, alpha slowest, n_steps fastest."""
        return list(itertools.product(self.alphas, self.temperatures, self.n_steps))

    def __len__(self):
        return len(self.alphas) * len(self.temperatures) * len(self.n_steps)


SWEEP_COLUMNS = (
    "cell", "alpha", "temperature", "n_steps", "fringe_proportion",
    "src_residual_before_mean", "src_residual_before_median",
    "src_residual_after_mean", "src_residual_after_median",
    "tgt_residual_baseline_mean", "tgt_residual_baseline_median",
    "tgt_residual_cooled_mean", "tgt_residual_cooled_median",
)


@dataclass
class SweepRow:
    cell: int
    alpha: float
    temperature: float
    n_steps: int
    fringe_proportion: float
    src_residual_before_mean: float
    src_residual_before_median: float
    src_residual_after_mean: float
    src_residual_after_median: float
    tgt_residual_baseline_mean: float
    tgt_residual_baseline_median: float
    tgt_residual_cooled_mean: float
    tgt_residual_cooled_median: float
    runtime_s: float = field(default=0.0, compare=False)


def summarize_results(cell, cfg: CoolingConfig, results) -> SweepRow:
    """Aggregate one pipeline run with the shared residual oracle."""
    orig = np.array([r.original for r in results])
    cooled = np.array([r.cooled for r in results])
    yb = np.array([r.y_baseline for r in results])
    yc = np.array([r.y_cooled for r in results])
    sb, sa = manifold_residual(orig, "source"), manifold_residual(cooled, "source")
    tb, tc = manifold_residual(yb, "target"), manifold_residual(yc, "target")
    return SweepRow(
        cell, cfg.alpha, cfg.temperature, cfg.n_steps,
        float(np.mean([r.fringe for r in results])),
        sb.mean, sb.median, sa.mean, sa.median, tb.mean, tb.median, tc.mean, tc.median,
    )


def sweep(grid: SweepGrid, model: ToyCycleGan, score, detector: FringeDetector, tests, seed=0) -> list[SweepRow]:
    """Run the pipeline on every grid cell.

    All cells share the master ``seed`` (common random numbers), so cells
    differ only in their hyperparameters.
    """
    rows = []
    for i, (alpha, temp, n) in enumerate(grid.cells()):
        cfg = CoolingConfig(alpha, temp, n, seed)
        t0 = time.perf_counter()
        results = run_lcool_pipeline(model, score, detector, cfg, tests)
        row = summarize_results(i, cfg, results)
        row.runtime_s = time.perf_counter() - t0
        rows.append(row)
    return rows


def select_best(rows) -> SweepRow:
    """Cell with the smallest mean cooled target residual; ties go to smaller N, then smaller alpha."""
    if not rows:
        raise ValueError("no sweep rows to select from")
    return min(rows, key=lambda r: (r.tgt_residual_cooled_mean, r.n_steps, r.alpha, r.cell))


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([
                d[c] if c in ("cell", "n_steps") else _f(d[c]) for c in SWEEP_COLUMNS
            ])


def read_sweep_csv(path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [
            SweepRow(**{c: (int(v) if c in ("cell", "n_steps") else float(v)) for c, v in rec.items()})
            for rec in rd
        ]
