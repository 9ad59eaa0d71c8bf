"""Bloch-vector parameterization of qubit states and two-outcome detectors.

A state is ``rho = (1 + p.sigma)/2`` with ``|p| <= 1``. A detector with
effects ``E, not-E`` is summarized by the observable
``Sigma = E - notE = u*1 + w.sigma``, physical when ``|w| + |u| <= 1``.
The expectation ``Tr(rho Sigma) = p.w + u`` is computed on real parameters;
the 2x2 complex matrices exist only as an independent check.
"""
from dataclasses import dataclass

import numpy as np

TOL = 1e-12

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (PAULI_X, PAULI_Y, PAULI_Z)
IDENTITY = np.eye(2, dtype=complex)


def _vec3(x, name):
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {np.shape(x)}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries: {v}")
    return v


def _scalar(x, name):
    v = float(x)
    if not np.isfinite(v):
        raise ValueError(f"{name} is not finite: {x}")
    return v


@dataclass(frozen=True)
class BlochState:
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _vec3(self.p, "p"))

    @property
    def is_valid(self):
        return validate_state(self.p)

    @property
    def is_pure(self):
        return abs(np.linalg.norm(self.p) - 1.0) <= TOL


@dataclass(frozen=True)
class Effect:
    """Two-outcome detector as the observable ``u*1 + w.sigma``."""

    u: float
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", _scalar(self.u, "u"))
        object.__setattr__(self, "w", _vec3(self.w, "w"))

    @property
    def is_valid(self):
        return validate_effect(self.u, self.w)

    def effect_matrices(self):
        """Return ``(E, notE)`` as 2x2 complex matrices."""
        ws = sum(wk * s for wk, s in zip(self.w, PAULIS))
        e = 0.5 * ((1 + self.u) * IDENTITY + ws)
        return e, IDENTITY - e


@dataclass(frozen=True)
class HermitianPair:
    rho: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for name in ("rho", "sigma"):
            m = np.asarray(getattr(self, name), dtype=complex)
            if m.shape != (2, 2):
                raise ValueError(f"{name} must be 2x2")
            if np.max(np.abs(m - m.conj().T)) > TOL:
                raise ValueError(f"{name} is not Hermitian")
            object.__setattr__(self, name, m)
        if abs(np.trace(self.rho) - 1.0) > TOL:
            raise ValueError("rho must have unit trace")


def validate_state(p):
    """True iff ``|p| <= 1`` (to 1e-12)."""
    return bool(np.linalg.norm(_vec3(p, "p")) <= 1.0 + TOL)


def validate_effect(u, w):
    """True iff ``|w| + |u| <= 1`` (to 1e-12)."""
    return bool(np.linalg.norm(_vec3(w, "w")) + abs(_scalar(u, "u")) <= 1.0 + TOL)


def _as_state(p):
    return p if isinstance(p, BlochState) else BlochState(p)


def expectation(p, e):
    """``Tr(rho Sigma) = p.w + u`` from real Bloch parameters."""
    state = _as_state(p)
    if not state.is_valid:
        raise ValueError(f"unphysical state |p| = {np.linalg.norm(state.p):.6g}")
    if not e.is_valid:
        raise ValueError("unphysical effect: |w| + |u| > 1")
    return float(state.p @ e.w + e.u)


def to_matrices(p, e):
    state = _as_state(p)
    rho = 0.5 * (IDENTITY + sum(pk * s for pk, s in zip(state.p, PAULIS)))
    sigma = e.u * IDENTITY + sum(wk * s for wk, s in zip(e.w, PAULIS))
    return HermitianPair(rho, sigma)


def expectation_oracle(hp):
    """Real part of ``Tr(rho @ sigma)``; raises if the imaginary part is not negligible."""
    value = np.trace(hp.rho @ hp.sigma)
    if abs(value.imag) > TOL:
        raise ArithmeticError(f"trace has imaginary part {value.imag:.3g}")
    return float(value.real)


def random_state(rng, pure=False):
    """Uniform on the unit ball (or sphere when ``pure``)."""
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    radius = 1.0 if pure else rng.uniform() ** (1 / 3)
    return BlochState(radius * v)


def random_effect(rng):
    # u uniform on [-1, 1], then w uniform in the ball of radius 1 - |u|
    u = rng.uniform(-1.0, 1.0)
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    return Effect(u, (1.0 - abs(u)) * rng.uniform() ** (1 / 3) * v)
