"""Ground-truth models with correlated preparation and measurement errors.

Gaussian model: Bloch vectors fluctuate shot to shot, ``p = p_o + f`` and
``w = w_o + g``, with zero-mean noise whose cross-correlation
``X[mu, i] = <f_mu . g_i>`` shifts the data to ``S = P_o W_o + X``.

Causal model: the detector responds to the prepared state,
``w_{i|mu} = w_io + chi p_mu``, so ``S = P W_o + Y`` with
``Y[mu, i] = chi |p_mu|^2``. With all detector biases zero the ones
column of ``P`` drops out and ``S`` stays rank 4, so the correlation is
invisible; nonzero biases make it rank 5.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from spamtomo.bloch_core import BlochState, Effect
from spamtomo.gauge import detector_matrix, state_matrix
from spamtomo.spam_data import DataMatrix

logger = logging.getLogger(__name__)

MAX_REJECTION_RATE = 0.5


class UnphysicalModelError(ValueError):
    pass


def _check_physical(S):
    worst = float(np.max(np.abs(S)))
    if worst > 1.0 + 1e-12:
        raise UnphysicalModelError(f"model predicts |S| = {worst:.6g} > 1")


def isotropic_joint_cov(x, sigma):
    """6x6 covariance of (f, g) with Var = sigma^2 * 1 and Cov(f, g) = (x/3) * 1."""
    cov = np.zeros((6, 6))
    cov[:3, :3] = cov[3:, 3:] = sigma**2 * np.eye(3)
    cov[:3, 3:] = cov[3:, :3] = (x / 3.0) * np.eye(3)
    return cov


@dataclass(frozen=True)
class GaussianCorrelationModel:
    P_o: np.ndarray
    W_o: np.ndarray
    X: np.ndarray
    sigma: float = None

    def __post_init__(self):
        P = np.asarray(self.P_o, dtype=float)
        W = np.asarray(self.W_o, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if P.ndim != 2 or P.shape[1] != 4 or W.ndim != 2 or W.shape[0] != 4:
            raise ValueError("need an M x 4 state matrix and a 4 x N detector matrix")
        if X.shape != (P.shape[0], W.shape[1]):
            raise ValueError(f"X must be {P.shape[0]} x {W.shape[1]}")
        if self.sigma is not None:
            if self.sigma < 0:
                raise ValueError("sigma must be non-negative")
            # the 6x6 joint covariance is PSD iff |X|/3 <= sigma^2
            if np.any(np.abs(X) / 3.0 > self.sigma**2 + 1e-15):
                raise ValueError("sigma too small for the requested cross-correlation")
        object.__setattr__(self, "P_o", P)
        object.__setattr__(self, "W_o", W)
        object.__setattr__(self, "X", X)
        _check_physical(P @ W + X)

    @classmethod
    def isotropic(cls, P_o, W_o, chi, sigma=None):
        """``X = chi * 1`` (rectangular identity)."""
        P_o = np.asarray(P_o, dtype=float)
        W_o = np.asarray(W_o, dtype=float)
        return cls(P_o, W_o, chi * np.eye(P_o.shape[0], W_o.shape[1]), sigma)

    def joint_cov(self, mu, i):
        if self.sigma is None:
            raise ValueError("model has no joint-fluctuation spec (sigma)")
        return isotropic_joint_cov(self.X[mu, i], self.sigma)


@dataclass(frozen=True)
class CausalModel:
    P: np.ndarray
    W_o: np.ndarray
    chi: float

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        W = np.asarray(self.W_o, dtype=float)
        if P.ndim != 2 or P.shape[1] != 4 or W.ndim != 2 or W.shape[0] != 4:
            raise ValueError("need an M x 4 state matrix and a 4 x N detector matrix")
        # conditioned detectors w_io + chi p_mu must stay physical
        w = W[:3].T[None, :, :] + float(self.chi) * P[:, None, :3]
        if np.any(np.linalg.norm(w, axis=2) + np.abs(W[3])[None, :] > 1.0 + 1e-12):
            raise UnphysicalModelError("conditioned detector leaves the physical set")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "W_o", W)
        object.__setattr__(self, "chi", float(self.chi))


def gaussian_mean_S(model):
    S = model.P_o @ model.W_o + model.X
    _check_physical(S)
    return DataMatrix(S)


def causal_mean_S(model):
    norms2 = np.sum(model.P[:, :3] ** 2, axis=1)
    S = model.P @ model.W_o + model.chi * norms2[:, None]
    _check_physical(S)
    return DataMatrix(S)


def isotropic_template(blocks):
    """First-order response of nabla to ``S -> S + chi * 1`` per unit chi.

    Evaluated on the uncorrelated blocks: ``-det(D) (A (BC)^-1 A + 1)``.
    With ``A = B D^-1 C`` this equals ``-det(D) (B D^-2 C + 1)``; the +1
    comes from differentiating ``det(D + chi) (A + chi)``.
    """
    A, B, C, D = blocks.A, blocks.B, blocks.C, blocks.D
    bc = B @ C
    if np.linalg.cond(bc) > 1e12:
        raise np.linalg.LinAlgError("B C is singular")
    return -np.linalg.det(D) * (A @ np.linalg.solve(bc, A) + np.eye(A.shape[0]))


def isotropic_nabla_prediction(blocks, chi):
    return chi * isotropic_template(blocks)


def fit_chi_isotropic(nabla_obs, blocks):
    """Least-squares ``chi`` with ``nabla_obs ~ chi * template``; returns ``(chi, relative residual)``."""
    template = isotropic_template(blocks)
    tt = float(np.sum(template**2))
    if tt == 0.0:
        raise ValueError("prediction template is zero")
    nabla_obs = np.asarray(nabla_obs, dtype=float)
    chi = float(np.sum(template * nabla_obs) / tt)
    norm = np.linalg.norm(nabla_obs)
    residual = 0.0 if norm == 0 else float(np.linalg.norm(nabla_obs - chi * template) / norm)
    return chi, residual


def fit_chi_sigma(jacobian, dS, blocks):
    """One-sigma error of the fitted chi by linear propagation through the nabla Jacobian."""
    template = isotropic_template(blocks)
    grad = np.einsum("ab,abmi->mi", template, jacobian) / np.sum(template**2)
    return float(np.sqrt(np.sum((grad * dS) ** 2)))


def sample_correlated_shots(model, mu, i, size, rng):
    """Draw ``size`` fluctuated (p, u, w) for cell (mu, i) by rejection sampling.

    Returns arrays ``p (size, 3)``, ``u (size,)``, ``w (size, 3)`` and the
    observed rejection rate. Biases are not fluctuated.
    """
    cov = model.joint_cov(mu, i)
    p0 = model.P_o[mu, :3]
    w0 = model.W_o[:3, i]
    u0 = model.W_o[3, i]
    if not np.any(cov):
        return np.tile(p0, (size, 1)), np.full(size, u0), np.tile(w0, (size, 1)), 0.0
    evals, evecs = np.linalg.eigh(cov)
    factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
    accepted_p, accepted_w = [], []
    need, drawn, kept = size, 0, 0
    while need > 0:
        batch = max(2 * need, 64)
        z = rng.standard_normal((batch, 6)) @ factor.T
        p = p0 + z[:, :3]
        w = w0 + z[:, 3:]
        ok = (np.linalg.norm(p, axis=1) <= 1.0) & (np.linalg.norm(w, axis=1) + abs(u0) <= 1.0)
        drawn += batch
        kept += int(ok.sum())
        accepted_p.append(p[ok][:need])
        accepted_w.append(w[ok][:need])
        need -= min(int(ok.sum()), need)
        rate = 1.0 - kept / drawn
        if drawn >= 1000 and rate > MAX_REJECTION_RATE:
            raise UnphysicalModelError(
                f"rejection rate {rate:.2f} for cell ({mu}, {i}); fluctuations too large"
            )
    rate = 1.0 - kept / drawn
    logger.info("cell (%d, %d): rejection rate %.4f over %d draws", mu, i, rate, drawn)
    return np.vstack(accepted_p), np.full(size, u0), np.vstack(accepted_w), rate


def sample_correlated_shot(model, mu, i, rng):
    p, u, w, _ = sample_correlated_shots(model, mu, i, 1, rng)
    return BlochState(p[0]), Effect(u[0], w[0])


_TETRAHEDRON = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) / np.sqrt(3)


def reference_model(purity=0.9, w_length=0.6, bias=0.3):
    """A fixed, well-conditioned 8-state / 8-detector uncorrelated model.

    States are two tetrahedra (one rotated); detectors are rotated
    tetrahedral directions with biases up to ``bias``. Every 4x4 corner is
    well-conditioned, which keeps first-order error propagation accurate
    at ~1e5 shots per cell.
    """
    rot = Rotation.from_rotvec([0.7, 0.3, -0.2]).as_matrix()
    p = np.vstack([purity * _TETRAHEDRON, purity * _TETRAHEDRON @ rot.T])
    w = np.vstack([w_length * _TETRAHEDRON @ rot.T @ rot.T, -w_length * _TETRAHEDRON @ rot.T])
    u = bias * np.array([1.0, -0.6, 0.8, -0.4, -1.0, 0.6, -0.8, 0.4])
    return state_matrix(p), detector_matrix(u, w)


def random_uncorrelated_model(M, N, rng, purity=(0.6, 1.0), w_max=0.9):
    """Random physical (P, W) with Bloch directions uniform on the sphere."""
    v = rng.normal(size=(M, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    p = v * rng.uniform(*purity, size=(M, 1))
    u = rng.uniform(-0.4, 0.4, size=N)
    g = rng.normal(size=(N, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    w = g * (rng.uniform(0.3, 1.0, size=(N, 1)) * np.minimum(w_max, 1 - np.abs(u))[:, None])
    return state_matrix(p), detector_matrix(u, w)
