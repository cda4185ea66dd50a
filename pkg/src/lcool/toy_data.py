"""The 2D toy source/target domains and off-manifold test points.

Source samples lie in a band above the parabola ``x2 = 0.75 x1**2`` of height
0.2; target samples lie in a band above the line ``x2 = 0.4 x1`` of height
0.1. ``x1`` is uniform on [0, 1] in both domains.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DatasetFormatError, DimensionError, OnManifoldError
from .rng import Rng

log = logging.getLogger(__name__)

SOURCE_CURVATURE = 0.75
SOURCE_BAND = 0.2
TARGET_SLOPE = 0.4
TARGET_BAND = 0.1

DEFAULT_TEST_POINTS = ((0.2, 0.55), (0.5, 0.65), (0.8, 0.9))

DOMAINS = ("source", "target", "test")


@dataclass(frozen=True)
class ToyDatasetSpec:
    n_samples: int = 1000
    domain: str = "source"
    seed: int = 0

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("n_samples must be positive")
        if self.domain not in ("source", "target"):
            raise ValueError(f"domain must be 'source' or 'target', got {self.domain!r}")


@dataclass
class Dataset:
    points: np.ndarray
    domain: str = "source"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain tag {self.domain!r}")

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.domain == other.domain and np.array_equal(self.points, other.points)


def source_baseline(x1):
    return SOURCE_CURVATURE * np.asarray(x1) ** 2


def target_baseline(x1):
    return TARGET_SLOPE * np.asarray(x1)


def source_point(t, eps):
    """Source sample for given draws ``t`` in [0, 1] and ``eps`` in [0, 0.2]."""
    t = np.asarray(t, dtype=np.float64)
    return np.stack([t, SOURCE_CURVATURE * t**2 + eps], axis=-1)


def target_point(t, eps):
    """Target sample for given draws ``t`` in [0, 1] and ``eps`` in [0, 0.1]."""
    t = np.asarray(t, dtype=np.float64)
    return np.stack([t, TARGET_SLOPE * t + eps], axis=-1)


def _draws(spec, band):
    rng = Rng(spec.seed)
    t = rng.uniform(0.0, 1.0, spec.n_samples)
    eps = rng.uniform(0.0, band, spec.n_samples)
    return t, eps


def _snap_into_band(pts, baseline, band):
    # rounding in baseline + eps can leave the recomputed residual one ulp outside
    lo = baseline(pts[:, 0])
    for _ in range(4):
        r = pts[:, 1] - lo
        pts[:, 1] = np.where(r < 0.0, np.nextafter(pts[:, 1], np.inf), pts[:, 1])
        pts[:, 1] = np.where(r > band, np.nextafter(pts[:, 1], -np.inf), pts[:, 1])
    return pts


def generate_source(spec: ToyDatasetSpec) -> Dataset:
    if spec.domain != "source":
        raise ValueError("generate_source needs a spec with domain='source'")
    t, eps = _draws(spec, SOURCE_BAND)
    pts = _snap_into_band(source_point(t, eps), source_baseline, SOURCE_BAND)
    return Dataset(pts, "source", {"seed": spec.seed})


def generate_target(spec: ToyDatasetSpec) -> Dataset:
    if spec.domain != "target":
        raise ValueError("generate_target needs a spec with domain='target'")
    t, eps = _draws(spec, TARGET_BAND)
    pts = _snap_into_band(target_point(t, eps), target_baseline, TARGET_BAND)
    return Dataset(pts, "target", {"seed": spec.seed})


def generate(spec: ToyDatasetSpec) -> Dataset:
    return generate_source(spec) if spec.domain == "source" else generate_target(spec)


def in_band(points, domain="source") -> np.ndarray:
    """Boolean mask of points inside the domain's noise band (x1 ignored)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if domain == "source":
        resid, band = pts[:, 1] - source_baseline(pts[:, 0]), SOURCE_BAND
    elif domain == "target":
        resid, band = pts[:, 1] - target_baseline(pts[:, 0]), TARGET_BAND
    else:
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")
    return (resid >= 0.0) & (resid <= band)


def make_offmanifold_tests(offsets=None) -> Dataset:
    """Tag user-supplied points as test samples, rejecting any inside the source band."""
    pts = np.asarray(DEFAULT_TEST_POINTS if offsets is None else offsets, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DimensionError(f"test points must have shape (n, 2), got {pts.shape}")
    inside = in_band(pts, "source")
    if inside.any():
        bad = [tuple(p) for p in pts[inside]]
        log.warning("rejecting test points inside the source band: %s", bad)
        raise OnManifoldError(f"points lie inside the source manifold band: {bad}")
    return Dataset(pts, "test")


# -- CSV I/O ----------------------------------------------------------------


def save_dataset(dataset: Dataset, path) -> None:
    """CSV with header ``x1,x2``; 17 significant digits so the round trip is exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2"])
        for x1, x2 in dataset.points:
            w.writerow([f"{x1:.17g}", f"{x2:.17g}"])


def load_dataset(path, domain="source") -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file, expected header 'x1,x2'")
    if [c.strip() for c in rows[0]] != ["x1", "x2"]:
        raise DatasetFormatError(f"{path}: bad header {rows[0]!r}, expected 'x1,x2'")
    pts = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise DimensionError(f"{path}: row {lineno} has {len(row)} columns, expected 2")
        try:
            pts.append((float(row[0]), float(row[1])))
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: row {lineno}: {exc}") from exc
    return Dataset(np.array(pts, dtype=np.float64).reshape(-1, 2), domain)
