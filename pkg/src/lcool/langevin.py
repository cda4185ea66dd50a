"""Tempered Langevin updates, the cooling loop and fringe detection.

The update is the rejection-free Langevin step

    x <- x + alpha * score(x) + sqrt(delta_sq) * z,    z ~ N(0, I)

With ``delta_sq = 2 * alpha * T`` the chain targets ``p(x) ** (1 / T)``
(normalised), so ``T < 1`` concentrates mass and drags fringe samples
towards high-density regions. ``T = 0`` is plain gradient ascent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points
from .exceptions import DivergenceError, NumericalError
from .rng import Rng
from .score import DenoisingAutoencoder, as_score_fn

log = logging.getLogger(__name__)

SCORE_NORM_GUARD = 1e6


@dataclass(frozen=True)
class CoolingConfig:
    """Step size ``alpha``, temperature ``T``, step count and seed.

    The noise variance is always derived, never set: ``delta_sq = 2 alpha T``.
    """

    alpha: float = 0.005
    temperature: float = 0.001
    n_steps: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.temperature >= 0:
            raise ValueError(f"temperature must be non-negative, got {self.temperature}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be non-negative, got {self.n_steps}")

    @property
    def delta_sq(self) -> float:
        return 2.0 * self.alpha * self.temperature

    @property
    def beta(self) -> float:
        return math.inf if self.temperature == 0 else 1.0 / self.temperature

    @property
    def is_cooling(self) -> bool:
        """True iff ``2 alpha > delta_sq``, i.e. ``T < 1``."""
        return 2.0 * self.alpha > self.delta_sq

    def to_dict(self):
        return {**asdict(self), "delta_sq": self.delta_sq}


def effective_beta(alpha, delta_sq) -> float:
    """Inverse temperature ``2 alpha / delta_sq`` reached by the chain."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if delta_sq == 0:
        raise ValueError("delta_sq = 0 gives infinite beta; use temperature=0 (gradient ascent) instead")
    if not delta_sq > 0:
        raise ValueError(f"delta_sq must be positive, got {delta_sq}")
    beta = 2.0 * alpha / delta_sq
    if beta < 1.0:
        log.warning("beta = %g < 1: 2*alpha <= delta_sq, this heats rather than cools", beta)
    return beta


def mala_step(x, score, alpha, delta_sq, rng: Rng):
    """One rejection-free Langevin step for a point ``(L,)`` or batch ``(n, L)``.

    Noise is drawn even when ``delta_sq == 0`` so the stream position does not
    depend on the temperature.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not delta_sq >= 0:
        raise ValueError(f"delta_sq must be non-negative, got {delta_sq}")
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(as_score_fn(score)(x), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericalError("score estimator returned non-finite values")
    z = rng.normal(x.size).reshape(x.shape)
    return x + alpha * g + math.sqrt(delta_sq) * z


@dataclass
class Trail:
    """Trajectory of one sample: ``points[0]`` is the input, ``points[k]`` after k steps."""

    points: np.ndarray
    score_norms: np.ndarray
    config: CoolingConfig
    sample_index: int = 0

    @property
    def start(self):
        return self.points[0]

    @property
    def end(self):
        return self.points[-1]

    def __len__(self):
        return self.points.shape[0]


def cool(x, score, cfg: CoolingConfig, sample_index: int = 0) -> Trail:
    """Run ``cfg.n_steps`` Langevin steps from ``x``.

    The noise stream is the child ``sample_index`` of ``Rng(cfg.seed)``, so
    two providers cooled with the same config see identical perturbations.
    """
    fn = as_score_fn(score)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    rng = Rng(cfg.seed).child(sample_index)
    sd = math.sqrt(cfg.delta_sq)
    points = np.empty((cfg.n_steps + 1, x.size))
    norms = np.empty(cfg.n_steps)
    points[0] = x
    for k in range(cfg.n_steps):
        cur = points[k]
        g = np.asarray(fn(cur), dtype=np.float64).reshape(-1)
        norm = float(np.linalg.norm(g))
        if not np.isfinite(norm):
            raise NumericalError(f"score is non-finite at step {k} of sample {sample_index}")
        if norm > SCORE_NORM_GUARD:
            raise DivergenceError(
                f"score norm {norm:.3g} exceeds {SCORE_NORM_GUARD:g} at step {k} of sample {sample_index}"
            )
        norms[k] = norm
        points[k + 1] = cur + cfg.alpha * g + sd * rng.normal(x.size)
    return Trail(points, norms, cfg, sample_index)


def cool_many(X, score, cfg: CoolingConfig, indices=None) -> list[Trail]:
    """Cool each row of ``X`` with its own sub-seeded stream (index = row, or ``indices``)."""
    X = check_points(X)
    if indices is None:
        indices = range(X.shape[0])
    return [cool(x, score, cfg, int(i)) for x, i in zip(X, indices)]


@dataclass
class ChainMoments:
    """Pooled post-burn-in moments of a batch of chains, per coordinate."""

    mean: np.ndarray
    var: np.ndarray
    n_samples: int


def chain_moments(x0, score, alpha, delta_sq, n_steps, rng: Rng, burn_in=0.1) -> ChainMoments:
    """Run Langevin chains from ``x0`` and accumulate their moments.

    ``x0`` of shape ``(c, L)`` runs ``c`` independent chains in lockstep; the
    first ``floor(burn_in * n_steps)`` states of each are discarded.
    """
    x = np.array(x0, dtype=np.float64, ndmin=2)
    fn = as_score_fn(score)
    n_burn = int(math.floor(burn_in * n_steps))
    if n_steps - n_burn < 2:
        raise ValueError("chain too short to estimate a variance")
    shift = x.mean(axis=0)  # centre the running sums to limit cancellation
    s1 = np.zeros(x.shape[1])
    s2 = np.zeros(x.shape[1])
    sd = math.sqrt(delta_sq)
    for k in range(n_steps):
        x = x + alpha * fn(x) + sd * rng.normal(x.size).reshape(x.shape)
        if k % 256 == 0 and not np.all(np.abs(x) < SCORE_NORM_GUARD):
            raise DivergenceError(f"Langevin chain diverged by step {k}")
        if k >= n_burn:
            d = x - shift
            s1 += d.sum(axis=0)
            s2 += (d * d).sum(axis=0)
    if not np.all(np.abs(x) < SCORE_NORM_GUARD):
        raise DivergenceError("Langevin chain diverged")
    n = (n_steps - n_burn) * x.shape[0]
    m = s1 / n
    return ChainMoments(shift + m, (s2 / n - m * m) * n / (n - 1), n)


def fringe_score(score, x):
    """Euclidean norm of the score estimate; scalar for a point, vector for a batch."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(as_score_fn(score)(x), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericalError("score estimator returned non-finite values")
    return np.linalg.norm(g, axis=-1)


def _n_flagged(q, n):
    # round first so 0.6 * 5 = 3.0000000000000004 does not ceil to 4
    return min(n, math.ceil(round(q * n, 9)))


class FringeDetector(BaseEstimator):
    """Flag samples whose score norm exceeds a threshold.

    Give exactly one of ``threshold`` (explicit cut-off) or ``proportion``
    (fraction q in (0, 1] of samples to flag). In proportion mode
    :meth:`fit_predict` flags exactly ``ceil(q * n)`` samples, the largest
    scores first, ties resolved towards the lower index.

    Attributes
    ----------
    threshold_ : float
        Resolved cut-off; on tie-free input ``scores > threshold_`` reproduces
        the mask from :meth:`fit_predict`.
    """

    def __init__(self, threshold=None, proportion=None):
        self.threshold = threshold
        self.proportion = proportion

    def _check_params(self):
        if (self.threshold is None) == (self.proportion is None):
            raise ValueError("set exactly one of threshold or proportion")
        if self.threshold is not None and not self.threshold >= 0:
            raise ValueError(f"threshold must be non-negative, got {self.threshold}")
        if self.proportion is not None and not 0 < self.proportion <= 1:
            raise ValueError(f"proportion must lie in (0, 1], got {self.proportion}")

    def fit_predict(self, scores, y=None):
        self._check_params()
        s = np.asarray(scores, dtype=np.float64).reshape(-1)
        if s.size == 0:
            raise ValueError("cannot detect fringe samples in an empty score list")
        if self.threshold is not None:
            self.threshold_ = float(self.threshold)
            return s > self.threshold_
        n = s.size
        k = _n_flagged(self.proportion, n)
        order = np.argsort(-s, kind="stable")
        mask = np.zeros(n, dtype=bool)
        mask[order[:k]] = True
        if k < n:
            self.threshold_ = float(s[order[k]])
        else:
            lo = float(s.min())
            self.threshold_ = 0.0 if lo > 0 else float(np.nextafter(lo, -np.inf))
        return mask

    def fit(self, scores, y=None):
        self.fit_predict(scores)
        return self

    def predict(self, scores):
        check_is_fitted(self, "threshold_")
        return np.asarray(scores, dtype=np.float64) > self.threshold_


def detect_fringe(scores, detector: FringeDetector):
    """Return ``(mask, resolved_threshold)``."""
    det = clone(detector)
    mask = det.fit_predict(scores)
    return mask, det.threshold_


class LangevinCooler(TransformerMixin, BaseEstimator):
    """Move fringe samples towards high-density regions of the training data.

    ``fit`` trains the score estimator (a :class:`DenoisingAutoencoder` unless
    another estimator with ``fit`` and ``grad_log_density`` is given);
    ``transform`` flags fringe samples and replaces each by the end of its
    cooling trail. Unflagged samples pass through unchanged.

    Parameters
    ----------
    alpha : float, default=0.005
    temperature : float, default=0.001
    n_steps : int, default=100
    fringe_proportion : float or None, default=1.0
        Fraction of samples to cool; 1.0 cools all of them.
    fringe_threshold : float or None, default=None
        Explicit score-norm cut-off; overrides ``fringe_proportion``.
    score_estimator : estimator, default=None
    random_state : int, default=0
        Master seed of the cooling noise.
    """

    def __init__(
        self,
        alpha=0.005,
        temperature=0.001,
        n_steps=100,
        fringe_proportion=1.0,
        fringe_threshold=None,
        score_estimator=None,
        random_state=0,
    ):
        self.alpha = alpha
        self.temperature = temperature
        self.n_steps = n_steps
        self.fringe_proportion = fringe_proportion
        self.fringe_threshold = fringe_threshold
        self.score_estimator = score_estimator
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_points(X)
        est = DenoisingAutoencoder() if self.score_estimator is None else clone(self.score_estimator)
        self.score_estimator_ = est.fit(X)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def cooling_config(self) -> CoolingConfig:
        return CoolingConfig(self.alpha, self.temperature, self.n_steps, self.random_state)

    def _detector(self):
        if self.fringe_threshold is not None:
            return FringeDetector(threshold=self.fringe_threshold)
        return FringeDetector(proportion=self.fringe_proportion)

    def cool(self, X):
        """Return ``(cooled_points, fringe_mask, trails)``; trails is None for unflagged rows."""
        check_is_fitted(self, "score_estimator_")
        X = check_points(X, dim=self.n_features_in_)
        scores = fringe_score(self.score_estimator_, X)
        mask, _ = detect_fringe(scores, self._detector())
        cfg = self.cooling_config
        out = X.copy()
        trails = [None] * X.shape[0]
        for i in np.flatnonzero(mask):
            trails[i] = cool(X[i], self.score_estimator_, cfg, int(i))
            out[i] = trails[i].end
        return out, mask, trails

    def transform(self, X):
        return self.cool(X)[0]

    def grad_log_density(self, X):
        check_is_fitted(self, "score_estimator_")
        return self.score_estimator_.grad_log_density(X)
