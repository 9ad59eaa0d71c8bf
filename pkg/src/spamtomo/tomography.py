"""State and detector tomography as gauge fixing, and factorization up to gauge.

Knowing four fiducial states fixes the gauge and gives ``W = P^+ S``;
knowing detectors spanning the 4-dimensional parameter space gives
``P = S W^+``. Without fiducials, ``S`` can only be factored into some
``(P, W)`` on the gauge orbit of the truth. All inversions are linear;
unphysical outputs are flagged, not corrected.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from spamtomo.gauge import detectors_physical, states_physical
from spamtomo.spam_data import DataMatrix

PINV_RCOND = 1e-10
GAUGE_NOTE = "gauge representative, not unique: any (P G^-1, G W) fits equally well"


class FiducialRankError(ValueError):
    pass


class GaugeNormalizationError(ValueError):
    pass


def _matrix(S):
    return S.S if isinstance(S, DataMatrix) else np.asarray(S, dtype=float)


def _rank(m):
    sv = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(sv > PINV_RCOND * sv[0])) if sv.size and sv[0] > 0 else 0


@dataclass
class FactorizationResult:
    P_hat: np.ndarray
    W_hat: np.ndarray
    residual: float
    singular_values: np.ndarray
    gauge_note: str = GAUGE_NOTE

    def to_dict(self):
        return {
            "P": self.P_hat.tolist(),
            "W": self.W_hat.tolist(),
            "residual": self.residual,
            "singular_values": self.singular_values.tolist(),
            "gauge_note": self.gauge_note,
        }


def detector_tomography(S, P_known):
    """Recover ``W`` from data on known fiducial states."""
    S = _matrix(S)
    P = np.asarray(P_known, dtype=float)
    if P.ndim != 2 or P.shape[1] != 4 or P.shape[0] != S.shape[0]:
        raise ValueError(f"fiducial state matrix must be {S.shape[0]} x 4")
    if P.shape[0] < 4 or _rank(P) < 4:
        raise FiducialRankError("fiducial states are not informationally complete (rank < 4)")
    return np.linalg.pinv(P, rcond=PINV_RCOND) @ S


def state_tomography(S, W_known):
    """Recover ``P`` from data taken with known fiducial detectors.

    The last column of the result should come out as ones; its deviation is
    a consistency diagnostic.
    """
    S = _matrix(S)
    W = np.asarray(W_known, dtype=float)
    if W.ndim != 2 or W.shape[0] != 4 or W.shape[1] != S.shape[1]:
        raise ValueError(f"fiducial detector matrix must be 4 x {S.shape[1]}")
    if _rank(W) < 4:
        raise FiducialRankError("fiducial detectors do not span the parameter space (rank < 4)")
    return S @ np.linalg.pinv(W, rcond=PINV_RCOND)


def _maxvol_rows(L, r):
    # greedy max-volume row choice via column-pivoted QR of L^T
    _, _, piv = qr(L.T, pivoting=True, mode="economic")
    return np.sort(piv[:r])


def factorize(S, r=4):
    """Best rank-r factorization with the state factor's last column fixed to ones."""
    S = _matrix(S)
    M, N = S.shape
    if min(M, N) < r:
        raise ValueError(f"need min(M, N) >= {r}")
    U, sv, Vt = np.linalg.svd(S, full_matrices=False)
    L = U[:, :r] * sv[:r]
    rows = _maxvol_rows(L, r)
    # truncated solve: directions with ~zero singular value (rank(S) < r) are ignored
    x, *_ = np.linalg.lstsq(L[rows], np.ones(r), rcond=PINV_RCOND)
    if not np.all(np.isfinite(x)) or np.linalg.norm(L @ x) < 1e-8 * np.sqrt(M):
        raise GaugeNormalizationError("left factor is degenerate; cannot normalize the state column")
    # basis T whose last column is x; P_hat = L T then has last column L x ~ 1
    q, _ = np.linalg.qr(np.column_stack([x, np.eye(r)]))
    T = np.column_stack([q[:, 1:r], x])
    P_hat = L @ T
    P_hat[:, -1] = 1.0
    W_hat = np.linalg.pinv(P_hat, rcond=PINV_RCOND) @ S
    residual = float(np.max(np.abs(S - P_hat @ W_hat)))
    return FactorizationResult(P_hat, W_hat, residual, sv)


def physicality_report(P=None, W=None):
    out = {}
    if P is not None:
        flags = states_physical(P)
        out["states_physical"] = flags
        out["max_state_norm"] = float(np.max(np.linalg.norm(np.asarray(P)[:, :3], axis=1)))
    if W is not None:
        flags = detectors_physical(W)
        out["detectors_physical"] = flags
        Wa = np.asarray(W)
        out["max_detector_norm"] = float(np.max(np.linalg.norm(Wa[:3], axis=0) + np.abs(Wa[3])))
    return out
