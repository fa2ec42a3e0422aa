import time

import numpy as np
import pytest

from infuq import nets, nlm
from infuq.architecture import Architecture
from infuq.experiments import toy_dataset
from infuq.gp import Dataset, Provenance
from infuq.linalg_stats import SeededRng
from oracles import ridge_posterior

NO_TRAINING = nets.TrainingConfig(steps=0)


def identity_fit(x, y, alpha=1.0, beta=1.0):
    """Depth-0 network: its features are the raw inputs."""
    arch = Architecture(x.shape[1], (), "identity")
    data = Dataset(x, y, np.zeros((0, x.shape[1])))
    return nlm.nlm_fit(arch, data, nlm.NLMConfig(alpha, beta, NO_TRAINING), SeededRng(0))


def test_no_data_gives_prior():
    arch = Architecture(1, (12,), "erf")
    fit = nlm.nlm_fit(arch, Dataset(np.zeros((0, 1)), np.zeros(0), np.zeros((0, 1))), nlm.NLMConfig(3.0, 4.0))
    assert np.array_equal(fit.mean, np.zeros(12))
    assert np.array_equal(fit.cov, np.eye(12) / 4.0)


@pytest.mark.parametrize("alpha,beta", [(1.0, 1.0), (25.0, 0.5)])
def test_identity_features_match_ridge_oracle(alpha, beta):
    gen = np.random.default_rng(0)
    x, y = gen.standard_normal((12, 3)), gen.standard_normal(12)
    fit = identity_fit(x, y, alpha, beta)
    mean, cov = ridge_posterior(x, y, alpha, beta)
    np.testing.assert_allclose(fit.mean, mean, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(fit.cov, cov, rtol=1e-10, atol=1e-12)


def test_scalar_hand_example():
    fit = identity_fit(np.array([[1.0]]), np.array([1.0]))
    assert fit.mean[0] == pytest.approx(0.5, abs=1e-15)
    assert fit.cov[0, 0] == pytest.approx(0.5, abs=1e-15)
    mean, var = nlm.nlm_predict(fit, [2.0])
    assert mean == pytest.approx(1.0, abs=1e-15) and var == pytest.approx(2.0, abs=1e-15)
    _, noisy = nlm.nlm_predict(fit, [2.0], include_noise=True)
    assert noisy == pytest.approx(3.0, abs=1e-15)


def test_null_features_give_zero_prediction():
    fit = identity_fit(np.array([[1.0, 2.0]]), np.array([1.0]))
    assert nlm.nlm_predict(fit, [0.0, 0.0]) == (0.0, 0.0)
    assert nlm.nlm_predict(fit, [0.0, 0.0], include_noise=True) == (0.0, 1.0 / fit.alpha)


def test_posterior_dimension_is_last_width():
    arch = Architecture(1, (9, 6), "tanh", 1.3, 0.2)
    for n in (3, 30):
        data = toy_dataset(n, 1)
        fit = nlm.nlm_fit(arch, data, nlm.NLMConfig(feature_training=NO_TRAINING), SeededRng(2))
        assert fit.mean.shape == (6,) and fit.cov.shape == (6, 6)


def test_covariance_positive_definite_with_bound():
    arch = Architecture(1, (20,), "relu", 1.5, 0.5)
    data = toy_dataset(15, 3)
    fit = nlm.nlm_fit(arch, data, nlm.NLMConfig(50.0, 2.0, NO_TRAINING), SeededRng(1))
    phi = fit.features(data.train_x)
    bound = 1.0 / (50.0 * np.linalg.eigvalsh(phi.T @ phi)[-1] + 2.0)
    assert np.linalg.eigvalsh(fit.cov)[0] >= bound - 1e-12


def test_strong_prior_shrinks_mean():
    gen = np.random.default_rng(1)
    x, y = gen.standard_normal((10, 2)), gen.standard_normal(10)
    norms = [np.linalg.norm(identity_fit(x, y, 1.0, beta).mean) for beta in (1e2, 1e4, 1e6)]
    assert norms[0] > norms[1] > norms[2]


def test_predictive_is_joint_of_predict():
    arch = Architecture(1, (10,), "erf", 1.5, 0.3)
    data = toy_dataset(8, 0)
    fit = nlm.nlm_fit(arch, data, nlm.NLMConfig(feature_training=nets.TrainingConfig(steps=200)), SeededRng(5))
    xs = np.array([[-2.5], [0.0], [1.1]])
    joint = nlm.nlm_predictive(fit, xs)
    assert joint.provenance == Provenance.NLM
    for i, x in enumerate(xs):
        m, v = nlm.nlm_predict(fit, x)
        assert m == pytest.approx(joint.mean[i], rel=1e-12)
        assert v == pytest.approx(joint.cov[i, i], rel=1e-12)


def test_trained_features_fit_the_data():
    arch = Architecture(1, (64,), "relu", 1.5, 1.0)
    data = toy_dataset(8, 0)
    fit = nlm.nlm_fit(arch, data, nlm.NLMConfig(1e4, 1.0, nets.TrainingConfig(steps=3000)), SeededRng(6))
    pred = nlm.nlm_predictive(fit, data.train_x)
    assert fit.trace is not None and fit.trace.steps_taken == 3000
    assert np.max(np.abs(pred.mean - data.train_y)) < 0.05


def test_variance_larger_away_from_data():
    arch = Architecture(1, (32,), "relu", 1.5, 1.0)
    data = toy_dataset(8, 0)
    fit = nlm.nlm_fit(arch, data, nlm.NLMConfig(100.0, 1.0, nets.TrainingConfig(steps=2000)), SeededRng(7))
    train_var = nlm.nlm_predictive(fit, data.train_x).var
    far_var = nlm.nlm_predictive(fit, np.array([[-6.0], [6.0]])).var
    assert np.min(far_var) > np.max(train_var)


def test_stage_two_cost_is_width_bound():
    arch = Architecture(1, (64,), "erf", 1.5, 0.1)
    params = nets.init(arch, SeededRng(0))
    cfg = nlm.NLMConfig(feature_training=NO_TRAINING)
    times = []
    for n in (100, 1_000, 10_000):
        x = np.linspace(-3, 3, n)[:, None]
        data = Dataset(x, np.sin(x[:, 0]), np.zeros((0, 1)))
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            nlm.nlm_fit(arch, data, cfg, params=params)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    # a factor 100 in N may cost at most a factor 100 in time
    assert times[2] / times[0] <= 100.0


def test_config_validation():
    with pytest.raises(ValueError):
        nlm.NLMConfig(alpha=0.0)
    with pytest.raises(ValueError):
        nlm.NLMConfig(beta=-1.0)
