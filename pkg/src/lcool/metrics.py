"""Manifold residuals and direction comparisons used by every report."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .langevin import fringe_score
from .score import as_score_fn
from .toy_data import SOURCE_BAND, TARGET_BAND, source_baseline, target_baseline


def manifold_residual_values(points, domain="source") -> np.ndarray:
    """Distance (along x2) from each point to the domain's noise band; 0 inside it."""
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64).reshape(-1, 2)
    if domain == "source":
        r, band = pts[:, 1] - source_baseline(pts[:, 0]), SOURCE_BAND
    elif domain == "target":
        r, band = pts[:, 1] - target_baseline(pts[:, 0]), TARGET_BAND
    else:
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")
    return np.where(r < 0.0, -r, np.where(r > band, r - band, 0.0))


@dataclass
class ResidualStats:
    values: np.ndarray
    mean: float
    median: float


def manifold_residual(points, domain="source") -> ResidualStats:
    v = manifold_residual_values(points, domain)
    if v.size == 0:
        return ResidualStats(v, float("nan"), float("nan"))
    return ResidualStats(v, float(v.mean()), float(np.median(v)))


def raw_target_offset(points) -> np.ndarray:
    """``|y2 - 0.4 y1|``, the unsigned offset from the target baseline."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return np.abs(pts[:, 1] - target_baseline(pts[:, 0]))


def angle_between(a, b) -> np.ndarray:
    """Row-wise angle in degrees; NaN where either vector is zero."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.sum(a * b, axis=1) / (na * nb)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def score_angles(score_a, score_b, X) -> np.ndarray:
    """Angle between two estimators' drift directions at each point of ``X``.

    Under a shared noise stream this is the angle between the first cooling
    steps' deterministic parts.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return angle_between(as_score_fn(score_a)(X), as_score_fn(score_b)(X))


__all__ = [
    "ResidualStats",
    "angle_between",
    "fringe_score",
    "manifold_residual",
    "manifold_residual_values",
    "raw_target_offset",
    "score_angles",
]
