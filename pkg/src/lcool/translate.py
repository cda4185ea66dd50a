"""Toy CycleGAN and the cool-then-translate pipeline."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points
from .exceptions import DimensionError, NumericalError
from .langevin import CoolingConfig, FringeDetector, Trail, cool, detect_fringe, fringe_score
from .nn import (
    AdamState,
    MlpModel,
    adam_step,
    backward,
    forward,
    init_mlp,
    model_from_dict,
    model_to_dict,
)
from .rng import Rng, as_rng
from .score import CycleScore, CycleScoreConfig
from .metrics import manifold_residual_values

log = logging.getLogger(__name__)


@dataclass
class ToyCycleGan:
    g: MlpModel
    f: MlpModel
    d_source: MlpModel
    d_target: MlpModel
    lambda_cycle: float = 10.0
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.g.input_dim != self.f.output_dim or self.g.output_dim != self.f.input_dim:
            raise DimensionError("G and F must be mutually inverse in shape")
        for d in (self.d_source, self.d_target):
            if d.output_dim != 1 or d.layers[-1].activation != "sigmoid":
                raise ValueError("discriminators must end in a single sigmoid unit")
        if not self.lambda_cycle > 0:
            raise ValueError("lambda_cycle must be positive")

    def to_dict(self):
        return {
            "lambda_cycle": self.lambda_cycle,
            "g": model_to_dict(self.g),
            "f": model_to_dict(self.f),
            "d_source": model_to_dict(self.d_source),
            "d_target": model_to_dict(self.d_target),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            model_from_dict(doc["g"]),
            model_from_dict(doc["f"]),
            model_from_dict(doc["d_source"]),
            model_from_dict(doc["d_target"]),
            float(doc["lambda_cycle"]),
        )

    def cycle_error(self, X):
        """Per-point ``||F(G(x)) - x||``."""
        X = check_points(X, dim=self.g.input_dim)
        return np.linalg.norm(forward(self.f, forward(self.g, X)) - X, axis=1)


def init_toy_cyclegan(rng: Rng, hidden=64, lambda_cycle=10.0, activation="relu") -> ToyCycleGan:
    gen = ([2, hidden, 2], [activation, "identity"])
    disc = ([2, hidden, 1], [activation, "sigmoid"])
    return ToyCycleGan(
        init_mlp(*gen, rng.child(0)),
        init_mlp(*gen, rng.child(1)),
        init_mlp(*disc, rng.child(2)),
        init_mlp(*disc, rng.child(3)),
        lambda_cycle,
    )


def _bce_logit_grad(p, label):
    # d/dlogit of mean BCE(sigmoid(logit), label)
    return (p - label) / p.shape[0]


def _bce(p, label):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-np.mean(label * np.log(p) + (1 - label) * np.log(1 - p)))


def _add(acc, grads):
    return grads if acc is None else [a + g for a, g in zip(acc, grads)]


def _check_finite(*vals, step):
    if not all(math.isfinite(v) for v in vals):
        raise NumericalError(f"non-finite CycleGAN loss at step {step}: {vals}")


def train_cyclegan_toy(
    source,
    target,
    steps=5000,
    lr=1e-3,
    lambda_cycle=10.0,
    rng=None,
    *,
    hidden=64,
    batch_size=64,
    log_every=500,
) -> ToyCycleGan:
    """Alternate discriminator and generator Adam updates, 1:1.

    Discriminators minimise binary cross-entropy on real vs translated points.
    Generators minimise the non-saturating adversarial loss plus
    ``lambda_cycle`` times the mean squared cycle reconstruction error in both
    directions.
    """
    Xs = check_points(getattr(source, "points", source), dim=2)
    Xt = check_points(getattr(target, "points", target), dim=2)
    if steps < 0:
        raise ValueError("steps must be non-negative")
    rng = as_rng(rng)
    model = init_toy_cyclegan(rng.child(0), hidden=hidden, lambda_cycle=lambda_cycle)
    G, F, Ds, Dt = model.g, model.f, model.d_source, model.d_target
    opts = {id(m): AdamState.for_model(m, learning_rate=lr) for m in (G, F, Ds, Dt)}
    batch_rng = rng.child(1)
    ones = np.ones((batch_size, 1))
    zeros = np.zeros((batch_size, 1))

    for step in range(steps):
        xs = Xs[batch_rng.generator.integers(0, Xs.shape[0], batch_size)]
        xt = Xt[batch_rng.generator.integers(0, Xt.shape[0], batch_size)]
        fake_t = forward(G, xs)
        fake_s = forward(F, xt)

        # discriminators
        d_losses = []
        for D, real, fake in ((Dt, xt, fake_t), (Ds, xs, fake_s)):
            p_real, p_fake = forward(D, real), forward(D, fake)
            d_losses.append(_bce(p_real, ones) + _bce(p_fake, zeros))
            grads = backward(D, real, _bce_logit_grad(p_real, ones), from_preactivation=True)
            grads = _add(grads, backward(D, fake, _bce_logit_grad(p_fake, zeros), from_preactivation=True))
            adam_step(D, opts[id(D)], grads)

        # generators: adversarial terms
        g_grads = f_grads = None
        adv = []
        for gen, D, inp, fake in ((G, Dt, xs, fake_t), (F, Ds, xt, fake_s)):
            p = forward(D, fake)
            adv.append(_bce(p, ones))
            _, d_fake = backward(D, fake, _bce_logit_grad(p, ones), from_preactivation=True, return_input_grad=True)
            gg = backward(gen, inp, d_fake)
            if gen is G:
                g_grads = _add(g_grads, gg)
            else:
                f_grads = _add(f_grads, gg)

        # cycle terms: x -> G -> F and y -> F -> G
        cyc = []
        for first, second, inp, mid in ((G, F, xs, fake_t), (F, G, xt, fake_s)):
            rec = forward(second, mid)
            diff = rec - inp
            cyc.append(float(np.mean(np.sum(diff * diff, axis=1))))
            d_rec = 2.0 * lambda_cycle * diff / batch_size
            sg, d_mid = backward(second, mid, d_rec, return_input_grad=True)
            fg = backward(first, inp, d_mid)
            if first is G:
                g_grads, f_grads = _add(g_grads, fg), _add(f_grads, sg)
            else:
                f_grads, g_grads = _add(f_grads, fg), _add(g_grads, sg)

        _check_finite(*d_losses, *adv, *cyc, step=step)
        adam_step(G, opts[id(G)], g_grads)
        adam_step(F, opts[id(F)], f_grads)

        if log_every and (step % log_every == 0 or step == steps - 1):
            rec = {"step": step, "d_target": d_losses[0], "d_source": d_losses[1],
                   "adv_g": adv[0], "adv_f": adv[1], "cycle_s": cyc[0], "cycle_t": cyc[1]}
            model.history.append(rec)
            log.debug("cyclegan %s", rec)
    return model


def cycle_consistency_loss(model: ToyCycleGan, xs, xt) -> float:
    """``mean ||F(G(x)) - x||^2 + mean ||G(F(y)) - y||^2`` over the two batches."""
    rs = forward(model.f, forward(model.g, xs)) - xs
    rt = forward(model.g, forward(model.f, xt)) - xt
    return float(np.mean(np.sum(rs * rs, axis=1)) + np.mean(np.sum(rt * rt, axis=1)))


def translate(model: ToyCycleGan, x):
    """Source -> target translation ``G(x)``."""
    return forward(model.g, x)


class CycleGanTranslator(TransformerMixin, BaseEstimator):
    """Unpaired 2D translator.

    ``fit(X, Y)`` takes source samples ``X`` and an *unpaired* set of target
    samples ``Y`` (they need not have the same length). ``transform`` maps
    source to target, ``inverse_transform`` target to source.
    """

    def __init__(self, steps=5000, learning_rate=1e-3, lambda_cycle=10.0, hidden=64, batch_size=64, random_state=0):
        self.steps = steps
        self.learning_rate = learning_rate
        self.lambda_cycle = lambda_cycle
        self.hidden = hidden
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X = check_points(X, dim=2)
        Y = check_points(y, dim=2)
        self.model_ = train_cyclegan_toy(
            X, Y, self.steps, self.learning_rate, self.lambda_cycle, Rng(self.random_state),
            hidden=self.hidden, batch_size=self.batch_size,
        )
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return translate(self.model_, check_points(X, dim=2))

    def inverse_transform(self, X):
        check_is_fitted(self, "model_")
        return forward(self.model_.f, check_points(X, dim=2))

    def cycle_score_provider(self, gamma=None) -> CycleScore:
        check_is_fitted(self, "model_")
        cfg = CycleScoreConfig() if gamma is None else CycleScoreConfig(gamma)
        return CycleScore(self.model_.g, self.model_.f, cfg)


# -- pipeline ---------------------------------------------------------------


@dataclass
class PipelineResult:
    sample_id: int
    original: np.ndarray
    cooled: np.ndarray
    fringe: bool
    fringe_score: float
    y_baseline: np.ndarray
    y_cooled: np.ndarray
    trail: Trail | None

    @property
    def src_residual_before(self):
        return float(manifold_residual_values(self.original, "source")[0])

    @property
    def src_residual_after(self):
        return float(manifold_residual_values(self.cooled, "source")[0])

    @property
    def tgt_residual_baseline(self):
        return float(manifold_residual_values(self.y_baseline, "target")[0])

    @property
    def tgt_residual_cooled(self):
        return float(manifold_residual_values(self.y_cooled, "target")[0])


def run_lcool_pipeline(model: ToyCycleGan, score, detector: FringeDetector, cfg: CoolingConfig, tests) -> list[PipelineResult]:
    """Score, gate, cool and translate every test sample.

    Fringe samples (per ``detector``) are cooled with ``score`` before
    translation; the rest are translated as is. The plain translation
    ``G(x)`` is always recorded as the baseline.
    """
    X = check_points(getattr(tests, "points", tests), dim=model.g.input_dim)
    scores = np.atleast_1d(fringe_score(score, X))
    mask, xi = detect_fringe(scores, detector)
    log.info("fringe threshold %.6g flags %d of %d samples", xi, int(mask.sum()), len(mask))
    y_base = translate(model, X)
    trails = [cool(x, score, cfg, i) if mask[i] else None for i, x in enumerate(X)]
    Xc = np.array([t.end if t is not None else x for t, x in zip(trails, X)])
    # same batched call as the baseline, so an unmoved point translates bit-identically
    y_cool = translate(model, Xc)
    return [
        PipelineResult(i, X[i].copy(), Xc[i].copy(), bool(mask[i]), float(scores[i]),
                       y_base[i].copy(), y_cool[i].copy(), trails[i])
        for i in range(len(X))
    ]


def run_lcool_cycle_pipeline(model: ToyCycleGan, cycle_cfg: CycleScoreConfig, detector, cfg, tests):
    """Same pipeline with the cycle reconstruction residual as the score."""
    return run_lcool_pipeline(model, CycleScore(model.g, model.f, cycle_cfg), detector, cfg, tests)


PIPELINE_COLUMNS = (
    "sample_id", "fringe_flag", "x1", "x2", "xc1", "xc2", "yb1", "yb2", "yc1", "yc2",
    "src_residual_before", "src_residual_after", "tgt_residual_baseline", "tgt_residual_cooled",
)


def _fmt(v):
    return f"{v:.17g}"


def write_pipeline_csv(results, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PIPELINE_COLUMNS)
        for r in results:
            w.writerow([
                r.sample_id, int(r.fringe),
                *map(_fmt, r.original), *map(_fmt, r.cooled),
                *map(_fmt, r.y_baseline), *map(_fmt, r.y_cooled),
                _fmt(r.src_residual_before), _fmt(r.src_residual_after),
                _fmt(r.tgt_residual_baseline), _fmt(r.tgt_residual_cooled),
            ])


def write_trail_csv(trail: Trail, path, sample_id=None):
    """One trail per file (``step,x1,x2,score_norm``), or with a leading
    ``sample_id`` column when ``sample_id`` is given. The final point has no
    score evaluation, so its ``score_norm`` cell is empty."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["step", "x1", "x2", "score_norm"]
        w.writerow(head if sample_id is None else ["sample_id", *head])
        _trail_rows(w, trail, sample_id)


def _trail_rows(w, trail, sample_id):
    for k, p in enumerate(trail.points):
        norm = _fmt(trail.score_norms[k]) if k < len(trail.score_norms) else ""
        row = [k, _fmt(p[0]), _fmt(p[1]), norm]
        w.writerow(row if sample_id is None else [sample_id, *row])


def write_trails_combined(trails, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "step", "x1", "x2", "score_norm"])
        for t in trails:
            _trail_rows(w, t, t.sample_index)
