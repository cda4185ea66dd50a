"""Estimators of the score, i.e. the gradient of the log density.

Three providers share one interface, ``grad_log_density(X) -> gradients``:

* :class:`DaeModel` -- a denoising autoencoder ``r``; the score estimate is
  ``(r(x) - x) / sigma_sq``.
* :class:`GaussianDensity` -- the analytic score of a Gaussian, used as an
  oracle.
* :class:`CycleScore` -- ``gamma * (F(G(x)) - x)`` built from a pair of
  translators, no extra training needed.

:class:`DenoisingAutoencoder` is the scikit-learn style front end for
training a :class:`DaeModel`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points
from .exceptions import DimensionError, NumericalError
from .nn import AdamState, MlpModel, adam_step, backward, forward, init_mlp, load_checkpoint, save_checkpoint
from .rng import Rng, as_rng

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 0.3


@dataclass
class DaeModel:
    body: MlpModel
    sigma_sq: float

    def __post_init__(self):
        if not self.sigma_sq > 0:
            raise ValueError(f"sigma_sq must be positive, got {self.sigma_sq}")
        if self.body.input_dim != self.body.output_dim:
            raise DimensionError("a DAE body must map R^L to R^L")

    @property
    def dim(self) -> int:
        return self.body.input_dim

    def reconstruct(self, X):
        return forward(self.body, X)

    def grad_log_density(self, X):
        return dae_score(self, X)

    def save(self, path):
        save_checkpoint(path, self.body, sigma_sq=self.sigma_sq)

    @classmethod
    def load(cls, path) -> "DaeModel":
        body, doc = load_checkpoint(path)
        if "sigma_sq" not in doc:
            raise ValueError(f"{path}: checkpoint has no sigma_sq field, not a DAE")
        return cls(body, float(doc["sigma_sq"]))


def dae_architecture(dim=2, hidden=64, activation="tanh"):
    return [dim, hidden, dim], [activation, "identity"]


def train_dae(
    data,
    sigma_sq=DEFAULT_SIGMA**2,
    epochs=200,
    learning_rate=3e-3,
    rng=None,
    *,
    hidden=64,
    activation="tanh",
    batch_size=64,
    final_lr_ratio=0.01,
    init: MlpModel | None = None,
) -> DaeModel:
    """Fit ``r`` by minimising ``E ||r(x + eps) - x||^2`` with ``eps ~ N(0, sigma_sq I)``.

    Noise is redrawn for every sample in every epoch; minibatches follow a
    fresh permutation per epoch. The learning rate decays geometrically to
    ``learning_rate * final_lr_ratio`` by the last epoch; the residual
    ``r(x) - x`` is small next to the minibatch noise, so a constant rate
    leaves a visibly jittery score field. Pass ``init`` to continue from an existing
    body (it is copied, not modified).
    """
    X = check_points(getattr(data, "points", data))
    if X.shape[0] == 0:
        raise ValueError("cannot train a DAE on an empty dataset")
    if not sigma_sq > 0:
        raise ValueError(f"sigma_sq must be positive, got {sigma_sq}")
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    rng = as_rng(rng)
    n, dim = X.shape
    if init is None:
        sizes, acts = dae_architecture(dim, hidden, activation)
        body = init_mlp(sizes, acts, rng.child(0))
    else:
        body = init.copy()
    opt = AdamState.for_model(body, learning_rate=learning_rate)
    noise_rng = rng.child(1)
    sigma = np.sqrt(sigma_sq)
    decay = final_lr_ratio ** (1.0 / max(epochs - 1, 1))
    for epoch in range(epochs):
        opt.learning_rate = learning_rate * decay**epoch
        order = noise_rng.permutation(n)
        noise = sigma * noise_rng.normal(n * dim).reshape(n, dim)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            clean = X[idx]
            out = forward(body, clean + noise[idx])
            resid = out - clean
            total += float(np.sum(resid * resid))
            grads = backward(body, clean + noise[idx], 2.0 * resid / len(idx))
            adam_step(body, opt, grads)
        if not np.isfinite(total):
            raise NumericalError(f"DAE loss became non-finite at epoch {epoch}")
        if epoch % 50 == 0 or epoch == epochs - 1:
            log.debug("dae epoch %d loss %.6g", epoch, total / n)
    return DaeModel(body, float(sigma_sq))


def dae_score(model: DaeModel, x):
    x = np.asarray(x, dtype=np.float64)
    return (forward(model.body, x) - x) / model.sigma_sq


@dataclass
class GaussianDensity:
    """Multivariate normal; ``covariance`` may be a full matrix or its diagonal."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.ndim == 1:
            if np.any(cov <= 0):
                raise ValueError("covariance diagonal entries must be positive")
            cov = np.diag(cov)
        if cov.shape != (self.mean.size, self.mean.size):
            raise DimensionError(f"covariance shape {cov.shape} does not match mean of size {self.mean.size}")
        if np.any(np.diag(cov) <= 0):
            raise ValueError("covariance diagonal entries must be positive")
        np.linalg.cholesky(cov)  # raises LinAlgError unless positive definite
        self.covariance = cov
        self._precision = np.linalg.inv(cov)

    @classmethod
    def standard(cls, dim=2):
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.mean.size

    def tempered(self, beta):
        """Normalised ``p**beta``: same mean, covariance divided by beta."""
        return GaussianDensity(self.mean, self.covariance / beta)

    def grad_log_density(self, X):
        return gaussian_score(self, X)

    def sample(self, n, rng):
        z = rng.normal(n * self.dim).reshape(n, self.dim)
        return self.mean + z @ np.linalg.cholesky(self.covariance).T


def gaussian_score(density: GaussianDensity, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != density.dim:
        raise DimensionError(f"expected points of dimension {density.dim}, got shape {x.shape}")
    return -(x - density.mean) @ density._precision.T


@dataclass(frozen=True)
class CycleScoreConfig:
    gamma: float = 1.0 / DEFAULT_SIGMA**2

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def cycle_score(g: MlpModel, f: MlpModel, cfg: CycleScoreConfig, x):
    if g.output_dim != f.input_dim or f.output_dim != g.input_dim:
        raise DimensionError(
            f"cycle needs G: {g.input_dim}->{g.output_dim} and F back to {g.input_dim}, "
            f"got F: {f.input_dim}->{f.output_dim}"
        )
    x = np.asarray(x, dtype=np.float64)
    return cfg.gamma * (forward(f, forward(g, x)) - x)


@dataclass
class CycleScore:
    g: MlpModel
    f: MlpModel
    cfg: CycleScoreConfig = CycleScoreConfig()

    def grad_log_density(self, X):
        return cycle_score(self.g, self.f, self.cfg, X)


def as_score_fn(provider):
    """Turn a provider object (or plain callable) into ``X -> grad log p(X)``."""
    fn = getattr(provider, "grad_log_density", None)
    if fn is not None:
        return fn
    if callable(provider):
        return provider
    raise TypeError(f"{type(provider).__name__} is not a score provider")


class DenoisingAutoencoder(BaseEstimator):
    """Denoising autoencoder whose residual estimates the score.

    Parameters
    ----------
    sigma : float, default=0.3
        Standard deviation of the training corruption noise.
    hidden : int, default=64
        Width of the single hidden layer.
    activation : str, default="tanh"
    epochs : int, default=200
    batch_size : int, default=64
    learning_rate : float, default=3e-3
        Initial Adam rate; decays to 1% of it over training.
    random_state : int, default=0

    Attributes
    ----------
    model_ : DaeModel
    n_features_in_ : int
    """

    def __init__(
        self,
        sigma=DEFAULT_SIGMA,
        hidden=64,
        activation="tanh",
        epochs=200,
        batch_size=64,
        learning_rate=3e-3,
        random_state=0,
    ):
        self.sigma = sigma
        self.hidden = hidden
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_points(X)
        self.model_ = train_dae(
            X,
            sigma_sq=float(self.sigma) ** 2,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            rng=Rng(self.random_state),
            hidden=self.hidden,
            activation=self.activation,
            batch_size=self.batch_size,
        )
        self.n_features_in_ = X.shape[1]
        return self

    def reconstruct(self, X):
        check_is_fitted(self, "model_")
        return self.model_.reconstruct(check_points(X, dim=self.n_features_in_))

    def grad_log_density(self, X):
        check_is_fitted(self, "model_")
        return self.model_.grad_log_density(np.asarray(X, dtype=np.float64))
