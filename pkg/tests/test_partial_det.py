import itertools
import json
from statistics import NormalDist

import numpy as np
import pytest

from spamtomo import gauge, partial_det as pd, spam_data
from spamtomo.noise_models import random_uncorrelated_model, reference_model
from spamtomo.partial_det import Partition
from spamtomo.spam_data import DataMatrix

DISJOINT8 = Partition(range(4), range(4, 8), range(4), range(4, 8))
OVERLAP5 = Partition(range(4), range(1, 5), range(4), range(1, 5))


def levi_civita():
    eps = np.zeros((3, 3, 3))
    for perm in itertools.permutations(range(3)):
        eps[perm] = np.linalg.det(np.eye(3)[list(perm)])
    return eps


def finite_difference_jacobian(S, part, step=1e-6):
    S = np.asarray(S, dtype=float)
    r = part.r
    out = np.zeros((r, r) + S.shape)
    for mu, i in itertools.product(range(S.shape[0]), range(S.shape[1])):
        up, dn = S.copy(), S.copy()
        up[mu, i] += step
        dn[mu, i] -= step
        out[:, :, mu, i] = (pd.nabla(pd.extract_blocks(up, part)) - pd.nabla(pd.extract_blocks(dn, part))) / (2 * step)
    return out


def uncorrelated(rng, M=8, N=8):
    P, W = random_uncorrelated_model(M, N, rng)
    return P @ W


def test_extract_blocks_corners(rng):
    S = rng.normal(size=(8, 8))
    b = pd.extract_blocks(S, DISJOINT8)
    np.testing.assert_array_equal(b.A, S[:4, :4])
    np.testing.assert_array_equal(b.B, S[:4, 4:])
    np.testing.assert_array_equal(b.C, S[4:, :4])
    np.testing.assert_array_equal(b.D, S[4:, 4:])


def test_extract_blocks_overlapping_and_small(rng):
    S = rng.normal(size=(5, 5))
    b = pd.extract_blocks(S, OVERLAP5)
    np.testing.assert_array_equal(b.D, S[1:, 1:])
    np.testing.assert_array_equal(b.B, S[:4, 1:])
    S6 = rng.normal(size=(6, 6))
    b = pd.extract_blocks(S6, Partition([0, 1, 2], [3, 4, 5], [0, 1, 2], [3, 4, 5]))
    assert b.A.shape == (3, 3)


def test_extract_blocks_bounds(rng):
    with pytest.raises(IndexError):
        pd.extract_blocks(rng.normal(size=(7, 8)), DISJOINT8)


def test_partition_validation():
    with pytest.raises(ValueError):
        Partition([0, 1], [2], [0, 1], [2, 3])
    with pytest.raises(ValueError):
        Partition([0, 0], [1, 2], [0, 1], [2, 3])


def test_delta_identity_on_uncorrelated(rng):
    for _ in range(50):
        dlt = pd.delta(pd.extract_blocks(uncorrelated(rng), DISJOINT8))
        assert np.max(np.abs(dlt - np.eye(4))) < 1e-10


def test_delta_singular_with_repeated_state(rng):
    P, W = random_uncorrelated_model(8, 8, rng)
    P[1] = P[0]
    with pytest.raises(pd.SingularPartitionError):
        pd.delta(pd.extract_blocks(P @ W, DISJOINT8))


def test_delta_singular_with_mixture(rng):
    P, W = random_uncorrelated_model(8, 8, rng)
    P[3] = 0.2 * P[0] + 0.3 * P[1] + 0.5 * P[2]
    with pytest.raises(pd.SingularPartitionError):
        pd.delta(pd.extract_blocks(P @ W, DISJOINT8))


def test_delta_first_order_in_chi():
    P, W = reference_model()
    S0 = P @ W
    dev = [np.max(np.abs(pd.delta(pd.extract_blocks(S0 + chi * np.eye(8), DISJOINT8)) - np.eye(4))) for chi in (1e-3, 5e-4)]
    assert dev[0] / dev[1] == pytest.approx(2.0, rel=0.02)


def test_cofactor_examples(rng):
    np.testing.assert_array_equal(pd.cofactor(np.eye(4)), np.eye(4))
    a, b, c = 2.0, 3.0, 5.0
    np.testing.assert_allclose(pd.cofactor(np.diag([a, b, c])), np.diag([b * c, a * c, a * b]))
    m = rng.normal(size=(4, 4))
    np.testing.assert_allclose(m @ pd.cofactor(m).T, np.linalg.det(m) * np.eye(4), atol=1e-10 * abs(np.linalg.det(m)) + 1e-13)
    with pytest.raises(ValueError):
        pd.cofactor(np.eye(2))


def test_cofactor_matches_inverse(rng):
    # independent route: cof(M) = det(M) inv(M)^T
    for r in (3, 4):
        m = rng.normal(size=(r, r))
        np.testing.assert_allclose(pd.cofactor(m), np.linalg.det(m) * np.linalg.inv(m).T, rtol=1e-10, atol=1e-12)


def test_nabla_vanishes_on_uncorrelated(rng):
    for _ in range(50):
        assert np.max(np.abs(pd.nabla(pd.extract_blocks(uncorrelated(rng), DISJOINT8)))) < 1e-10


def test_nabla_finite_for_singular_d(rng):
    S = rng.normal(size=(8, 8))
    S[7, 4:] = S[4, 4:]
    b = pd.extract_blocks(S, DISJOINT8)
    nab = pd.nabla(b)
    assert np.all(np.isfinite(nab))
    np.testing.assert_allclose(nab, b.B @ pd.cofactor(b.D).T @ b.C, atol=1e-12)


def test_nabla_delta_identity(rng):
    for _ in range(100):
        S = rng.uniform(-1, 1, size=(8, 8))
        b = pd.extract_blocks(S, DISJOINT8)
        if max(np.linalg.cond(b.A), np.linalg.cond(b.D)) > 1e6:
            continue
        lhs = pd.nabla(b)
        rhs = np.linalg.det(b.D) * b.A @ (pd.delta(b) - np.eye(4))
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * np.max(np.abs(rhs))


def test_nabla_gauge_invariant(rng):
    P, W = random_uncorrelated_model(8, 8, rng)
    S = P @ W + 0.03 * np.eye(8)
    G = gauge.random_gauge(0.5, 0.5, 7)
    S2 = gauge.apply_to_states(P, G) @ gauge.apply_to_detectors(W, G) + 0.03 * np.eye(8)
    for part in pd.enumerate_partitions(8, 8, 4, "random:10", seed=1):
        n1 = pd.nabla(pd.extract_blocks(S, part))
        n2 = pd.nabla(pd.extract_blocks(S2, part))
        assert np.max(np.abs(n1 - n2)) < 1e-10


def test_jacobian_a_derivative_is_minus_det_d(rng):
    S = rng.normal(size=(8, 8))
    jac = pd.nabla_jacobian(S, DISJOINT8)
    det_d = np.linalg.det(S[4:, 4:])
    expected = -det_d * np.einsum("ac,bd->abcd", np.eye(4), np.eye(4))
    np.testing.assert_allclose(jac[:, :, :4, :4], expected, atol=1e-13)


@pytest.mark.parametrize(
    "shape, part",
    [
        ((8, 8), DISJOINT8),
        ((5, 5), OVERLAP5),
        ((6, 6), Partition([0, 1, 2], [3, 4, 5], [0, 1, 2], [3, 4, 5])),
        ((4, 5), Partition([0, 1, 2], [1, 2, 3], [4, 0, 2], [1, 3, 2])),
    ],
)
def test_jacobian_against_finite_differences(rng, shape, part):
    S = rng.uniform(-1, 1, size=shape)
    analytic = pd.nabla_jacobian(S, part)
    numeric = finite_difference_jacobian(S, part)
    scale = np.max(np.abs(numeric))
    assert np.max(np.abs(analytic - numeric)) < 1e-5 * scale


def test_disjoint_jacobian_cells_feed_one_block(rng):
    S = rng.normal(size=(9, 9))
    jac = pd.nabla_jacobian(S, DISJOINT8)
    # row/column 8 is outside the partition
    assert np.all(jac[:, :, 8, :] == 0) and np.all(jac[:, :, :, 8] == 0)
    fd = finite_difference_jacobian(S, DISJOINT8)
    np.testing.assert_allclose(jac, fd, atol=1e-6 * np.max(np.abs(fd)))


def test_literal_epsilon_formulas_for_three_by_three(rng):
    """The published r = 3 index formulas: A and D terms exact, B and C twice the true derivative."""
    eps = levi_civita()
    A, B, C, D = rng.normal(size=(4, 3, 3))
    d_det = np.linalg.det(D)
    dA = -np.einsum("ac,bd->abcd", np.eye(3), np.eye(3)) * d_det
    dB = np.einsum("ac,ijk,dlm,ib,jl,km->abcd", np.eye(3), eps, eps, C, D, D)
    dC = np.einsum("bd,cij,klm,ak,il,jm->abcd", np.eye(3), eps, eps, B, D, D)
    dD = np.einsum("ijc,kld,ak,jl,ib->abcd", eps, eps, B, D, C) - 0.5 * np.einsum(
        "ijc,kld,ik,jl,ab->abcd", eps, eps, D, D, A
    )
    S = np.block([[A, B], [C, D]])
    part = Partition([0, 1, 2], [3, 4, 5], [0, 1, 2], [3, 4, 5])
    truth = finite_difference_jacobian(S, part)
    tol = 1e-6 * np.max(np.abs(truth))
    np.testing.assert_allclose(dA, truth[:, :, :3, :3], atol=tol)
    np.testing.assert_allclose(dD, truth[:, :, 3:, 3:], atol=tol)
    np.testing.assert_allclose(dB, 2 * truth[:, :, :3, 3:], atol=2 * tol)
    np.testing.assert_allclose(dC, 2 * truth[:, :, 3:, :3], atol=2 * tol)


def test_errorbars_zero_without_noise(rng):
    data = DataMatrix(uncorrelated(rng))
    assert np.all(pd.nabla_errorbars(data, DISJOINT8) == 0)


def test_errorbars_need_uncertainties(rng):
    with pytest.raises(ValueError):
        pd.nabla_errorbars(rng.normal(size=(8, 8)), DISJOINT8)


def test_errorbars_generic_equals_four_block_sum(rng):
    S = uncorrelated(rng)
    dS = rng.uniform(1e-3, 1e-2, size=S.shape)
    data = DataMatrix(S, dS)
    generic = pd.nabla_errorbars(data, DISJOINT8)
    blockwise = pd.four_block_errorbars(data, DISJOINT8)
    assert np.max(np.abs(generic - blockwise)) < 1e-12
    with pytest.raises(ValueError):
        pd.four_block_errorbars(data, OVERLAP5)


def test_errorbars_overlapping_sum_before_squaring(rng):
    S = rng.uniform(-1, 1, size=(5, 5))
    dS = np.full(S.shape, 1e-3)
    jac = finite_difference_jacobian(S, OVERLAP5)
    expected = np.sqrt(np.einsum("abmi,mi->ab", jac**2, dS**2))
    np.testing.assert_allclose(pd.nabla_errorbars(S, OVERLAP5, dS), expected, rtol=1e-5, atol=1e-9 * expected.max())


def test_errorbars_monte_carlo():
    P, W = reference_model()
    S = P @ W
    shots = 10**5
    part = DISJOINT8
    K = spam_data.simulate_counts_batch(S, shots, 500, 17)
    from spamtomo import kernels

    nab = kernels.nabla_batch(2 * K / shots - 1, part.rows1, part.rows2, part.cols1, part.cols2)
    predicted = pd.nabla_errorbars(S, part, spam_data.uncertainty(S, np.full(S.shape, shots)))
    ratio = nab.std(axis=0, ddof=1) / predicted
    assert np.sum(np.abs(ratio - 1) <= 0.15) >= 14


def test_structural_zeros_of_overlapping_partitions(rng):
    S = rng.normal(size=(6, 6))
    part = Partition([0, 1, 2, 3], [2, 3, 4, 5], [0, 1, 2, 3], [1, 2, 4, 5])
    mask = part.active
    np.testing.assert_array_equal(mask, np.outer([1, 1, 0, 0], [1, 0, 0, 1]).astype(bool))
    nab = pd.nabla(pd.extract_blocks(S, part))
    assert np.max(np.abs(nab[~mask])) < 1e-12
    assert np.min(np.abs(nab[mask])) > 1e-6


def test_enumerate_partitions_counts():
    assert pd.enumerate_partitions(8, 8, 4, "disjoint") == [DISJOINT8]
    sliding = pd.enumerate_partitions(5, 5, 4, "sliding")
    assert len(sliding) == 4
    assert OVERLAP5 in sliding
    assert len(pd.enumerate_partitions(8, 8, 4, "sliding")) == (5 * 4) ** 2
    assert len(pd.enumerate_partitions(6, 6, 3, "disjoint")) == 1


def test_enumerate_random_is_seeded():
    a = pd.enumerate_partitions(8, 8, 4, "random:10", seed=3)
    b = pd.enumerate_partitions(8, 8, 4, "random:10", seed=3)
    assert a == b and len(a) == 10
    assert a != pd.enumerate_partitions(8, 8, 4, "random:10", seed=4)
    assert all(p.active.any() for p in a)


def test_enumerate_errors():
    with pytest.raises(pd.PartitionTooSmallError):
        pd.enumerate_partitions(4, 8, 4, "sliding")
    with pytest.raises(pd.PartitionTooSmallError):
        pd.enumerate_partitions(5, 5, 4, "disjoint")
    with pytest.raises(ValueError):
        pd.enumerate_partitions(8, 8, 4, "bogus")
    with pytest.raises(ValueError):
        pd.enumerate_partitions(8, 8, 4, "random")


def test_zscores_examples():
    assert np.all(pd.zscores(np.zeros((4, 4)), np.ones((4, 4))) == 0)
    dn = np.full((4, 4), 0.2)
    np.testing.assert_allclose(pd.zscores(3 * dn, dn), 3.0)
    z = pd.zscores(np.array([[0.0, 1.0]]), np.array([[0.0, 0.0]]))
    assert z[0, 0] == 0 and z[0, 1] == np.inf


def test_bonferroni_threshold():
    expected = NormalDist().inv_cdf(1 - 0.05 / 32)
    assert pd.bonferroni_threshold(0.05, 16) == pytest.approx(expected, rel=1e-9)
    assert pd.bonferroni_threshold(0.05, 16) == pytest.approx(2.955, abs=1e-3)
    with pytest.raises(ValueError):
        pd.bonferroni_threshold(1.5, 3)


def test_rank_criterion(rng):
    S = uncorrelated(rng)
    for part in pd.enumerate_partitions(8, 8, 4, "sliding"):
        assert np.max(np.abs(pd.nabla(pd.extract_blocks(S, part)))) <= 1e-9
    sv = np.linalg.svd(S, compute_uv=False)
    assert sv[4] <= 1e-8 * sv[0]
    S5 = S + 1e-2 * np.outer(rng.normal(size=8), rng.normal(size=8))
    worst = max(np.max(np.abs(pd.nabla(pd.extract_blocks(S5, p)))) for p in pd.enumerate_partitions(8, 8, 4, "sliding"))
    assert worst > 1e-6


def test_evaluate_partition_flags_singular_d(rng):
    P, W = random_uncorrelated_model(8, 8, rng)
    P[5] = P[4]
    res = pd.evaluate_partition(DataMatrix(P @ W, np.full((8, 8), 1e-3)), DISJOINT8)
    assert not res.informative
    assert res.delta is None
    assert res.verdict(3.0) == "inconclusive"
    obj = json.loads(json.dumps(res.to_dict(3.0)))
    assert obj["verdict"] == "inconclusive"
    assert set(obj) >= {"partition", "nabla", "dnabla", "z", "det_D", "cond_A", "cond_D", "verdict"}


def test_detect_correlations_verdicts():
    P, W = reference_model()
    clean = DataMatrix(P @ W, np.full((8, 8), 1e-3))
    summary = pd.detect_correlations(clean)
    assert summary.verdict == "consistent"
    assert summary.statistic < 1e-6
    correlated = DataMatrix(P @ W + 0.05 * np.eye(8), np.full((8, 8), 1e-3))
    summary = pd.detect_correlations(correlated)
    assert summary.verdict == "correlated"
    assert summary.threshold == pytest.approx(pd.bonferroni_threshold(0.05, 16))


def test_noisy_singular_d_is_inconclusive():
    P, W = reference_model()
    P[5] = P[4]
    data = spam_data.estimate(spam_data.simulate_counts(P @ W, 10**5, 0))
    res = pd.evaluate_partition(data, DISJOINT8)
    assert res.cond_d < pd.COND_LIMIT
    assert not res.informative and "noise" in res.note
    P, W = reference_model()
    data = spam_data.estimate(spam_data.simulate_counts(P @ W, 10**5, 0))
    assert pd.evaluate_partition(data, DISJOINT8).informative


def test_detect_all_inconclusive(rng):
    S = np.zeros((8, 8))
    summary = pd.detect_correlations(DataMatrix(S, np.full((8, 8), 1e-3)))
    assert summary.verdict == "inconclusive"
