import numpy as np
import pytest

from spamtomo import partial_det as pd, spam_data
from spamtomo.noise_models import (
    CausalModel,
    GaussianCorrelationModel,
    UnphysicalModelError,
    causal_mean_S,
    fit_chi_isotropic,
    fit_chi_sigma,
    gaussian_mean_S,
    isotropic_joint_cov,
    isotropic_nabla_prediction,
    isotropic_template,
    random_uncorrelated_model,
    reference_model,
    sample_correlated_shot,
    sample_correlated_shots,
)
from spamtomo.partial_det import Partition
from spamtomo.spam_data import DataMatrix

DISJOINT8 = Partition(range(4), range(4, 8), range(4), range(4, 8))


def test_zero_correlation_is_product():
    P, W = reference_model()
    model = GaussianCorrelationModel(P, W, np.zeros((8, 8)))
    np.testing.assert_array_equal(gaussian_mean_S(model).S, P @ W)


def test_isotropic_shifts_diagonal():
    P, W = reference_model()
    model = GaussianCorrelationModel.isotropic(P, W, 0.02)
    diff = gaussian_mean_S(model).S - P @ W
    np.testing.assert_allclose(diff, 0.02 * np.eye(8), atol=1e-15)
    rect = GaussianCorrelationModel.isotropic(P[:6], W, 0.01)
    assert rect.X.shape == (6, 8) and rect.X[5, 5] == 0.01


def test_unphysical_mean_rejected():
    P, W = reference_model()
    with pytest.raises(UnphysicalModelError):
        GaussianCorrelationModel(P, W, np.full((8, 8), 2.0))


def test_joint_cov_is_psd_when_allowed():
    cov = isotropic_joint_cov(0.03, 0.1)
    assert np.linalg.eigvalsh(cov).min() >= -1e-15
    np.testing.assert_allclose(cov[:3, 3:], 0.01 * np.eye(3))
    P, W = reference_model()
    with pytest.raises(ValueError):
        GaussianCorrelationModel.isotropic(P, W, 0.05, sigma=0.1)


def _prediction_error(chi):
    P, W = reference_model()
    S0 = P @ W
    exact = pd.nabla(pd.extract_blocks(S0 + chi * np.eye(8), DISJOINT8))
    pred = isotropic_nabla_prediction(pd.extract_blocks(S0, DISJOINT8), chi)
    return np.max(np.abs(exact - pred)) / np.max(np.abs(exact)), exact, pred


def test_isotropic_prediction_first_order():
    err, _, _ = _prediction_error(1e-3)
    assert err < 5e-2
    diffs = []
    for chi in (1e-3, 5e-4):
        _, exact, pred = _prediction_error(chi)
        diffs.append(np.max(np.abs(exact - pred)))
    assert 3.5 <= diffs[0] / diffs[1] <= 4.5


def test_prediction_template_matches_derivative():
    # oracle: numerical derivative of nabla(S0 + chi 1) at chi = 0, computed via numpy det/inv
    P, W = reference_model()
    S0 = P @ W

    def nab(chi):
        S = S0 + chi * np.eye(8)
        A, B, C, D = S[:4, :4], S[:4, 4:], S[4:, :4], S[4:, 4:]
        return np.linalg.det(D) * (B @ np.linalg.inv(D) @ C - A)

    h = 1e-6
    numeric = (nab(h) - nab(-h)) / (2 * h)
    np.testing.assert_allclose(isotropic_template(pd.extract_blocks(S0, DISJOINT8)), numeric, atol=1e-7)


def test_minus_identity_variant_does_not_match():
    P, W = reference_model()
    S0 = P @ W
    b = pd.extract_blocks(S0, DISJOINT8)
    chi = 1e-3
    exact = pd.nabla(pd.extract_blocks(S0 + chi * np.eye(8), DISJOINT8))
    variant = -chi * np.linalg.det(b.D) * (b.A @ np.linalg.solve(b.B @ b.C, b.A) - np.eye(4))
    assert np.max(np.abs(exact - variant)) / np.max(np.abs(exact)) > 5e-2


def test_prediction_linear_in_chi():
    P, W = reference_model()
    b = pd.extract_blocks(P @ W, DISJOINT8)
    np.testing.assert_allclose(isotropic_nabla_prediction(b, 0.04), 2 * isotropic_nabla_prediction(b, 0.02))


def test_causal_model_rank_and_shape():
    rng = np.random.default_rng(5)
    P, W = random_uncorrelated_model(8, 8, rng)
    model = CausalModel(P, W, 0.1)
    S = causal_mean_S(model).S
    sv = np.linalg.svd(S, compute_uv=False)
    assert sv[4] / sv[0] > 1e-6
    assert sv[5] / sv[0] < 1e-10
    Y = S - P @ W
    np.testing.assert_allclose(Y, Y[:, :1] * np.ones((1, 8)), atol=1e-15)
    with pytest.raises(UnphysicalModelError):
        CausalModel(P, W, 0.9)


def test_causal_model_without_biases_stays_rank_four():
    rng = np.random.default_rng(5)
    P, W = random_uncorrelated_model(8, 8, rng)
    W[3] = 0.0
    S = causal_mean_S(CausalModel(P, W, 0.1)).S
    sv = np.linalg.svd(S, compute_uv=False)
    assert sv[4] / sv[0] < 1e-12
    assert np.max(np.abs(pd.nabla(pd.extract_blocks(S, DISJOINT8)))) < 1e-12


def test_fit_chi_exact_and_zero():
    P, W = reference_model()
    b = pd.extract_blocks(P @ W, DISJOINT8)
    chi, res = fit_chi_isotropic(isotropic_nabla_prediction(b, 0.03), b)
    assert chi == pytest.approx(0.03, rel=1e-12) and res < 1e-12
    chi, res = fit_chi_isotropic(np.zeros((4, 4)), b)
    assert chi == 0.0 and res == 0.0


def test_fit_chi_end_to_end():
    P, W = reference_model()
    chi_true = 0.02
    S = P @ W + chi_true * np.eye(8)
    shots = 10**6
    counts = spam_data.simulate_counts(S, shots, 11)
    data = spam_data.estimate(counts)
    b_obs = pd.extract_blocks(data.S, DISJOINT8)
    nabla_obs = pd.nabla(b_obs)
    chi, _ = fit_chi_isotropic(nabla_obs, b_obs)
    sigma = fit_chi_sigma(pd.nabla_jacobian(data.S, DISJOINT8), data.dS, b_obs)
    assert sigma > 0
    assert abs(chi - chi_true) < 3 * sigma + 0.1 * chi_true


def test_template_singular_bc_raises():
    b = pd.Blocks(np.eye(4), np.zeros((4, 4)), np.eye(4), np.eye(4))
    with pytest.raises(np.linalg.LinAlgError):
        isotropic_template(b)


def test_rejection_sampled_mean():
    P, W = reference_model(purity=0.6, w_length=0.5, bias=0.2)
    model = GaussianCorrelationModel.isotropic(P, W, 0.006, sigma=0.05)
    rng = np.random.default_rng(3)
    size = 40000
    p, u, w, rate = sample_correlated_shots(model, 2, 2, size, rng)
    assert p.shape == (size, 3) and rate < 0.5
    assert np.all(np.linalg.norm(p, axis=1) <= 1) and np.all(np.linalg.norm(w, axis=1) + np.abs(u) <= 1)
    S = np.sum(p * w, axis=1) + u
    target = (P @ W)[2, 2] + 0.006
    assert abs(S.mean() - target) < 4 * S.std() / np.sqrt(size) + 1e-4
    state, effect = sample_correlated_shot(model, 0, 1, rng)
    assert state.is_valid and effect.is_valid


def test_rejection_rate_too_high():
    P, W = reference_model(purity=0.99)
    model = GaussianCorrelationModel.isotropic(P, W, 0.0, sigma=0.5)
    with pytest.raises(UnphysicalModelError):
        sample_correlated_shots(model, 0, 0, 100, np.random.default_rng(0))


def test_reference_model_is_physical_and_conditioned():
    P, W = reference_model()
    assert np.all(np.linalg.norm(P[:, :3], axis=1) <= 1)
    assert np.all(np.linalg.norm(W[:3], axis=0) + np.abs(W[3]) <= 1)
    for part in pd.enumerate_partitions(8, 8, 4, "disjoint"):
        b = pd.extract_blocks(P @ W, part)
        assert np.linalg.cond(b.A) < 100 and np.linalg.cond(b.D) < 100


def test_random_uncorrelated_is_physical(rng):
    for _ in range(20):
        P, W = random_uncorrelated_model(8, 8, rng)
        assert np.all(np.abs(P @ W) <= 1)
        assert np.all(np.linalg.norm(W[:3], axis=0) + np.abs(W[3]) <= 1 + 1e-12)
        DataMatrix(P @ W)
