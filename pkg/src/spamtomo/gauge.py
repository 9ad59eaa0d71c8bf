"""The affine gauge group of qubit SPAM tomography.

Data ``S = P W`` is unchanged by ``P -> P G^-1``, ``W -> G W`` for any

    G = [[H, 0],
         [a^T, 1]]

with ``H`` in GL(3) and ``a`` in R^3: twelve parameters no SPAM experiment
can determine. ``H = B R`` splits into a positive symmetric "blame" scaling
``B`` and an orthogonal frame choice ``R``; ``a`` trades state-detector
alignment for detector bias.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from spamtomo.bloch_core import validate_effect, validate_state


class SingularGaugeError(ValueError):
    pass


class GaugeNotIdentifiableError(ValueError):
    """The state matrix has rank < 4, so the gauge cannot be pinned down."""


class NotGaugeEquivalentError(ValueError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _check_invertible(h):
    scale = np.linalg.norm(h, 2)
    if not np.all(np.isfinite(h)) or abs(np.linalg.det(h)) <= 1e-10 * scale**3:
        raise SingularGaugeError(f"H is numerically singular (det = {np.linalg.det(h):.3g})")


@dataclass(frozen=True)
class GaugeTransform:
    H: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        h = np.array(self.H, dtype=float)
        a = np.array(self.a, dtype=float).reshape(-1)
        if h.shape != (3, 3) or a.shape != (3,):
            raise ValueError("GaugeTransform needs a 3x3 H and a 3-vector a")
        _check_invertible(h)
        object.__setattr__(self, "H", h)
        object.__setattr__(self, "a", a)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, g):
        g = np.asarray(g, dtype=float)
        if g.shape != (4, 4):
            raise ValueError("embedded gauge matrix must be 4x4")
        return cls(g[:3, :3], g[3, :3])

    @classmethod
    def scale(cls, g):
        return cls(g * np.eye(3), np.zeros(3))

    @classmethod
    def translation(cls, a):
        return cls(np.eye(3), a)

    @classmethod
    def rotation(cls, r):
        return cls(r, np.zeros(3))

    @property
    def matrix(self):
        g = np.zeros((4, 4))
        g[:3, :3] = self.H
        g[3, :3] = self.a
        g[3, 3] = 1.0
        return g

    def allclose(self, other, atol=1e-12):
        return bool(np.allclose(self.matrix, other.matrix, rtol=0, atol=atol))


@dataclass(frozen=True)
class PolarParts:
    B: np.ndarray
    R: np.ndarray

    @property
    def proper(self):
        """True when R is a rotation (det +1), i.e. a change of qubit basis."""
        return bool(np.linalg.det(self.R) > 0)

    @property
    def blame_scales(self):
        return np.linalg.eigvalsh(self.B)


def _state_matrix(P):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != 4:
        raise ValueError(f"state matrix must be M x 4, got {P.shape}")
    return P


def _detector_matrix(W):
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != 4:
        raise ValueError(f"detector matrix must be 4 x N, got {W.shape}")
    return W


def state_matrix(bloch_vectors):
    """Stack Bloch vectors as rows ``(p, 1)``."""
    p = np.atleast_2d(np.asarray(bloch_vectors, dtype=float))
    return np.hstack([p, np.ones((p.shape[0], 1))])


def detector_matrix(us, ws):
    """Columns ``(w_i, u_i)``."""
    ws = np.atleast_2d(np.asarray(ws, dtype=float))
    return np.vstack([ws.T, np.asarray(us, dtype=float).reshape(1, -1)])


def states_physical(P):
    return [validate_state(row[:3]) for row in _state_matrix(P)]


def detectors_physical(W):
    return [validate_effect(col[3], col[:3]) for col in _detector_matrix(W).T]


def apply_to_states(P, G):
    """``P G^-1``; the trailing column of ones is preserved."""
    P = _state_matrix(P)
    out = P @ invert(G).matrix
    out[:, 3] = P[:, 3]
    return out


def apply_to_detectors(W, G):
    return G.matrix @ _detector_matrix(W)


def compose(g1, g2):
    """Group product with embedded matrix ``g1.matrix @ g2.matrix``."""
    return GaugeTransform(g1.H @ g2.H, g1.a @ g2.H + g2.a)


def invert(g):
    h_inv = np.linalg.inv(g.H)
    return GaugeTransform(h_inv, -g.a @ h_inv)


def polar_decompose(H):
    """Split ``H = B R`` with ``B = sqrt(H H^T)`` and ``R = B^-1 H``.

    Computed from the SVD ``H = U s V^T`` as ``B = U s U^T``, ``R = U V^T``,
    which keeps R orthogonal to rounding. ``R`` may be an improper
    rotation; check ``PolarParts.proper``.
    """
    H = np.asarray(H, dtype=float)
    _check_invertible(H)
    U, s, Vt = np.linalg.svd(H)
    B = (U * s) @ U.T
    B = 0.5 * (B + B.T)
    return PolarParts(B, U @ Vt)


def gauge_count(N, M):
    """Number of undeterminable parameters for M states and N two-outcome detectors."""
    if N < 1 or M < 1:
        raise ValueError("need at least one state and one detector")
    if N < 3 or M < 4:
        return 3 * M + 4 * N - N * M
    return 12


def gauge_dim(d):
    """Maximal gauge dimension ``d^2 (d^2 - 1)`` for d-level systems with d-outcome detectors."""
    if d < 2:
        raise ValueError("dimension must be at least 2")
    return d * d * (d * d - 1)


def random_gauge(scale_spread, translation_spread, rng_seed=None):
    """``H = expm(K)`` with K entries uniform in [-scale_spread, scale_spread]; a uniform in a ball."""
    if scale_spread < 0 or translation_spread < 0:
        raise ValueError("spreads must be non-negative")
    rng = np.random.default_rng(rng_seed)
    K = rng.uniform(-scale_spread, scale_spread, size=(3, 3))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    a = translation_spread * rng.uniform() ** (1 / 3) * direction
    return GaugeTransform(expm(K), a)


def find_gauge(P1, W1, P2, W2, tol=1e-8):
    """Find G with ``P2 = P1 G^-1`` and ``W2 = G W1``.

    The structured inverse ``[[Hinv, 0], [c^T, 1]]`` is solved from the
    state equation by least squares, then both equations are checked
    against ``tol`` relative to the matrix norms.
    """
    P1, P2 = _state_matrix(P1), _state_matrix(P2)
    W1, W2 = _detector_matrix(W1), _detector_matrix(W2)
    if P1.shape != P2.shape or W1.shape != W2.shape:
        raise ValueError("parameter sets have different shapes")
    if P1.shape[0] < 4 or np.linalg.matrix_rank(P1, tol=1e-10 * np.linalg.norm(P1, 2)) < 4:
        raise GaugeNotIdentifiableError("state matrix has rank < 4; gauge not identifiable")
    top, *_ = np.linalg.lstsq(P1, P2[:, :3], rcond=None)
    g_inv = np.zeros((4, 4))
    g_inv[:, :3] = top
    g_inv[3, 3] = 1.0
    try:
        G = invert(GaugeTransform.from_matrix(g_inv))
    except SingularGaugeError as exc:
        raise NotGaugeEquivalentError(f"best-fit gauge is singular: {exc}", np.inf) from exc
    res_p = np.linalg.norm(P1 @ g_inv - P2) / max(np.linalg.norm(P2), 1.0)
    res_w = np.linalg.norm(G.matrix @ W1 - W2) / max(np.linalg.norm(W2), 1.0)
    residual = max(res_p, res_w)
    if residual > tol:
        raise NotGaugeEquivalentError(
            f"parameter sets are not gauge-equivalent (relative residual {residual:.3g} > {tol:g})",
            residual,
        )
    return G
