import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lcool.exceptions import DimensionError
from lcool.metrics import angle_between
from lcool.nn import Layer, MlpModel, forward, init_mlp
from lcool.rng import Rng
from lcool.score import (
    CycleScore,
    CycleScoreConfig,
    DaeModel,
    DenoisingAutoencoder,
    GaussianDensity,
    as_score_fn,
    cycle_score,
    dae_architecture,
    dae_score,
    gaussian_score,
    train_dae,
)

coord = st.floats(-5, 5, allow_nan=False)


def _linear(A, b=(0.0, 0.0)):
    return MlpModel([Layer(np.asarray(A, float), np.asarray(b, float), "identity")])


def optimal_denoiser(sigma_sq, mean=(0.0, 0.0)):
    """Posterior mean E[x | x + eps] for x ~ N(mean, I), eps ~ N(0, sigma_sq I)."""
    k = 1.0 / (1.0 + sigma_sq)
    return _linear(k * np.eye(2), sigma_sq * k * np.asarray(mean))


# -- DAE training -----------------------------------------------------------


def test_train_zero_epochs_returns_initialisation():
    X = Rng(0).normal(40).reshape(20, 2)
    m = train_dae(X, 0.09, 0, 1e-3, Rng(4))
    sizes, acts = dae_architecture()
    ref = init_mlp(sizes, acts, Rng(4).child(0))
    for p, q in zip(m.body.params(), ref.params()):
        np.testing.assert_array_equal(p, q)


def test_train_is_deterministic(tmp_path):
    X = Rng(1).normal(400).reshape(200, 2)
    a = train_dae(X, 0.09, 5, 1e-3, Rng(7))
    b = train_dae(X, 0.09, 5, 1e-3, Rng(7))
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_train_validation():
    with pytest.raises(ValueError):
        train_dae(np.empty((0, 2)), 0.09, 1)
    with pytest.raises(ValueError):
        train_dae(np.zeros((4, 2)), 0.0, 1)
    with pytest.raises(ValueError):
        train_dae(np.zeros((4, 2)), 0.09, -1)


def test_gaussian_dae_approximates_optimal_denoiser(gaussian_dae, grid_points):
    rstar = forward(optimal_denoiser(0.09), grid_points)
    err = np.linalg.norm(gaussian_dae.reconstruct(grid_points) - rstar, axis=1).mean()
    assert err < 0.05


def test_gaussian_dae_score_direction(gaussian_dae, grid_points):
    pts = grid_points[np.linalg.norm(grid_points, axis=1) > 0]
    ang = angle_between(dae_score(gaussian_dae, pts), -pts)
    assert np.median(ang) < 15.0


# -- dae_score --------------------------------------------------------------


def test_dae_score_identity_body_is_zero():
    m = DaeModel(_linear(np.eye(2)), 0.09)
    np.testing.assert_array_equal(dae_score(m, [[0.3, -1.0], [2.0, 5.0]]), 0.0)


def test_dae_score_optimal_gaussian_denoiser():
    m = DaeModel(optimal_denoiser(0.09), 0.09)
    np.testing.assert_allclose(dae_score(m, [2.0, 0.0]), [-2 / 1.09, 0.0], atol=1e-12)
    np.testing.assert_allclose(dae_score(m, [2.0, 0.0]), [-1.8349, 0.0], atol=5e-5)


@settings(max_examples=50, deadline=None)
@given(x1=coord, x2=coord, m1=coord, m2=coord, s=st.floats(0.01, 1.0))
def test_optimal_denoiser_score_is_shrunk_gaussian_score(x1, x2, m1, m2, s):
    x, mu = np.array([x1, x2]), np.array([m1, m2])
    dae = DaeModel(optimal_denoiser(s, mu), s)
    exact = gaussian_score(GaussianDensity(mu, [1.0, 1.0]), x)
    np.testing.assert_allclose(dae_score(dae, x), exact / (1 + s), rtol=1e-9, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(c=st.floats(-10, 10), x1=coord, x2=coord)
def test_dae_score_linear_in_residual(c, x1, x2):
    A, b = np.array([[0.8, 0.1], [-0.2, 0.9]]), np.array([0.05, -0.3])
    x = np.array([x1, x2])
    base = DaeModel(_linear(A, b), 0.09)
    # r_c(x) = x + c (r(x) - x)
    scaled = DaeModel(_linear(np.eye(2) + c * (A - np.eye(2)), c * b), 0.09)
    np.testing.assert_allclose(dae_score(scaled, x), c * dae_score(base, x), rtol=1e-9, atol=1e-8)


def test_dae_score_dimension_mismatch():
    with pytest.raises(DimensionError):
        dae_score(DaeModel(_linear(np.eye(2)), 0.09), [1.0, 2.0, 3.0])


def test_dae_model_validation():
    with pytest.raises(ValueError):
        DaeModel(_linear(np.eye(2)), 0.0)
    with pytest.raises(DimensionError):
        DaeModel(MlpModel([Layer(np.ones((3, 2)), np.zeros(3))]), 0.1)


def test_dae_checkpoint_roundtrip(tmp_path, toy_dae):
    toy_dae.save(tmp_path / "dae.json")
    back = DaeModel.load(tmp_path / "dae.json")
    assert back.sigma_sq == toy_dae.sigma_sq
    x = Rng(1).uniform(size=(50, 2))
    assert dae_score(back, x).tobytes() == dae_score(toy_dae, x).tobytes()


# -- gaussian_score ---------------------------------------------------------


@pytest.mark.parametrize("cov, x, expected", [
    ([1.0, 1.0], [0.0, 0.0], [0.0, 0.0]),
    ([1.0, 1.0], [1.0, -2.0], [-1.0, 2.0]),
    ([4.0, 1.0], [2.0, 1.0], [-0.5, -1.0]),
])
def test_gaussian_score_examples(cov, x, expected):
    np.testing.assert_allclose(gaussian_score(GaussianDensity([0.0, 0.0], cov), x), expected, atol=1e-15)


def test_gaussian_score_full_covariance_matches_finite_difference_of_logpdf():
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    mu = np.array([0.3, -0.1])
    prec = np.linalg.inv(cov)

    def logp(x):
        d = x - mu
        return -0.5 * d @ prec @ d

    x, h = np.array([1.2, 0.4]), 1e-6
    fd = [(logp(x + h * e) - logp(x - h * e)) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(gaussian_score(GaussianDensity(mu, cov), x), fd, rtol=1e-7)


def test_gaussian_density_validation():
    with pytest.raises(ValueError):
        GaussianDensity([0.0, 0.0], [1.0, -1.0])
    with pytest.raises(DimensionError):
        gaussian_score(GaussianDensity.standard(2), [1.0, 2.0, 3.0])


# -- cycle_score ------------------------------------------------------------


def test_cycle_score_perfect_cycle_is_zero():
    I = _linear(np.eye(2))
    np.testing.assert_array_equal(cycle_score(I, I, CycleScoreConfig(3.0), [0.4, 0.7]), 0.0)


def test_cycle_score_scaling():
    g = _linear(np.eye(2))
    f = _linear(np.eye(2), [0.1, -0.1])
    np.testing.assert_allclose(cycle_score(g, f, CycleScoreConfig(2.0), [0.5, 0.5]), [0.2, -0.2], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(x1=coord, x2=coord)
def test_cycle_score_zero_for_exact_inverse_pair(x1, x2):
    A = np.array([[2.0, 0.0], [0.0, 4.0]])  # exact inverse in binary floating point
    g, f = _linear(A, [1.0, -2.0]), _linear(np.linalg.inv(A), [-0.5, 0.5])
    np.testing.assert_allclose(cycle_score(g, f, CycleScoreConfig(), [x1, x2]), 0.0, atol=1e-12)


def test_cycle_score_dimension_chain():
    g = MlpModel([Layer(np.ones((3, 2)), np.zeros(3))])
    with pytest.raises(DimensionError):
        cycle_score(g, g, CycleScoreConfig(), [0.0, 0.0])


def test_cycle_config_gamma_positive():
    with pytest.raises(ValueError):
        CycleScoreConfig(0.0)
    assert CycleScoreConfig().gamma == pytest.approx(1 / 0.09)


def test_providers_share_one_interface(toy_dae):
    I = _linear(np.eye(2))
    X = np.array([[0.1, 0.2], [0.3, 0.4]])
    for provider in (toy_dae, GaussianDensity.standard(2), CycleScore(I, I)):
        assert as_score_fn(provider)(X).shape == X.shape
    assert as_score_fn(lambda x: -x)(X).shape == X.shape
    with pytest.raises(TypeError):
        as_score_fn(3)


# -- estimator --------------------------------------------------------------


def test_denoising_autoencoder_estimator_api():
    X = Rng(0).normal(200).reshape(100, 2)
    est = DenoisingAutoencoder(epochs=3, random_state=5)
    with pytest.raises(NotFittedError):
        est.grad_log_density(X)
    assert clone(est).get_params() == est.get_params()
    est.fit(X)
    direct = train_dae(X, 0.09, 3, est.learning_rate, Rng(5))
    np.testing.assert_array_equal(est.grad_log_density(X), dae_score(direct, X))
    assert est.n_features_in_ == 2
    with pytest.raises(DimensionError):
        est.reconstruct(np.zeros((2, 3)))
