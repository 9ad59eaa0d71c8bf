"""Partial determinants of SPAM data and their error bars.

Split rows into two ordered r-lists and columns likewise, giving blocks

    S ~ [[A, B],
         [C, D]]

If the data factor as ``S = P W`` (uncorrelated preparation and
measurement) and r = 4, then ``Delta = A^-1 B D^-1 C`` is the identity and
the polynomial witness ``nabla = B adj(D) C - det(D) A`` vanishes.
``nabla`` is computed from closed-form cofactors so it stays finite for
singular blocks. Errors propagate linearly through the exact Jacobian of
``nabla`` with respect to the cells of ``S``; cells shared by overlapping
blocks have their contributions summed before squaring.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from spamtomo import kernels
from spamtomo.spam_data import DataMatrix

COND_LIMIT = 1e8
DELTA_COND_LIMIT = 1.0 / math.sqrt(np.finfo(float).eps)
DET_REL_LIMIT = 1e-12
# D must stand clear of its own noise or first-order error bars break down
NOISE_SNR_LIMIT = 1.0


class SingularPartitionError(ValueError):
    pass


class PartitionTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    rows1: tuple
    rows2: tuple
    cols1: tuple
    cols2: tuple

    def __post_init__(self):
        for name in ("rows1", "rows2", "cols1", "cols2"):
            object.__setattr__(self, name, tuple(int(x) for x in getattr(self, name)))
        r = len(self.rows1)
        if r < 1 or any(len(getattr(self, n)) != r for n in ("rows2", "cols1", "cols2")):
            raise ValueError("all four index lists must have the same positive length")
        for name in ("rows1", "rows2", "cols1", "cols2"):
            idx = getattr(self, name)
            if len(set(idx)) != r:
                raise ValueError(f"{name} has repeated indices: {idx}")

    @property
    def r(self):
        return len(self.rows1)

    def check_bounds(self, shape):
        M, N = shape
        for name, bound in (("rows1", M), ("rows2", M), ("cols1", N), ("cols2", N)):
            idx = getattr(self, name)
            if min(idx) < 0 or max(idx) >= bound:
                raise IndexError(f"{name} {idx} out of range for size {bound}")

    @property
    def active(self):
        """Mask of nabla entries that are not identically zero.

        A row index shared by ``rows1`` and ``rows2`` makes that row of nabla
        vanish for every S (likewise for columns), so those entries carry no
        information and are excluded from tests.
        """
        row_ok = np.array([x not in self.rows2 for x in self.rows1])
        col_ok = np.array([x not in self.cols2 for x in self.cols1])
        return row_ok[:, None] & col_ok[None, :]

    @property
    def is_disjoint(self):
        return not (set(self.rows1) & set(self.rows2)) and not (set(self.cols1) & set(self.cols2))

    def to_dict(self):
        return {
            "rows1": list(self.rows1),
            "rows2": list(self.rows2),
            "cols1": list(self.cols1),
            "cols2": list(self.cols2),
        }


@dataclass(frozen=True)
class Blocks:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray


def _matrix(S):
    return S.S if isinstance(S, DataMatrix) else np.asarray(S, dtype=float)


def extract_blocks(S, part):
    S = _matrix(S)
    part.check_bounds(S.shape)
    r1, r2 = np.array(part.rows1), np.array(part.rows2)
    c1, c2 = np.array(part.cols1), np.array(part.cols2)
    return Blocks(
        S[np.ix_(r1, c1)].copy(),
        S[np.ix_(r1, c2)].copy(),
        S[np.ix_(r2, c1)].copy(),
        S[np.ix_(r2, c2)].copy(),
    )


def delta(blocks):
    """``A^-1 B D^-1 C``; raises SingularPartitionError for ill-conditioned A or D."""
    for name in ("A", "D"):
        cond = np.linalg.cond(getattr(blocks, name))
        if not np.isfinite(cond) or cond > DELTA_COND_LIMIT:
            raise SingularPartitionError(f"block {name} is singular (cond = {cond:.3g})")
    return np.linalg.solve(blocks.A, blocks.B @ np.linalg.solve(blocks.D, blocks.C))


def cofactor(m):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] not in (3, 4):
        raise ValueError("cofactor is defined here for 3x3 and 4x4 matrices")
    return kernels.cofactor(m)


def nabla(blocks):
    """Nonsingular partial determinant ``B cof(D)^T C - det(D) A``."""
    return kernels.nabla(blocks.A, blocks.B, blocks.C, blocks.D)


def nabla_jacobian(S, part):
    """``J[a, b, mu, i] = d nabla[a, b] / d S[mu, i]``, shape ``(r, r, M, N)``."""
    mat = _matrix(S)
    blocks = extract_blocks(mat, part)
    jb = kernels.nabla_block_jacobian(blocks.A, blocks.B, blocks.C, blocks.D)
    r = part.r
    jac = np.zeros((r, r) + mat.shape)
    layout = (
        (part.rows1, part.cols1),
        (part.rows1, part.cols2),
        (part.rows2, part.cols1),
        (part.rows2, part.cols2),
    )
    for blk, (rows, cols) in enumerate(layout):
        for p, mu in enumerate(rows):
            for q, i in enumerate(cols):
                jac[:, :, mu, i] += jb[blk, :, :, p, q]
    return jac


def nabla_errorbars(S, part, dS=None):
    """One-sigma errors of nabla assuming independent cells with errors ``dS``."""
    if dS is None:
        if not isinstance(S, DataMatrix):
            raise ValueError("uncertainties required: pass a DataMatrix or dS")
        dS = S.dS
    dS = np.asarray(dS, dtype=float)
    jac = nabla_jacobian(S, part)
    if dS.shape != jac.shape[2:]:
        raise ValueError("dS does not match the data shape")
    return np.sqrt(np.einsum("abmi,mi->ab", jac**2, dS**2))


def four_block_errorbars(S, part, dS=None):
    """Per-block error sum; valid only when the four blocks share no cells."""
    if not part.is_disjoint:
        raise ValueError("the four-block sum assumes disjoint blocks")
    if dS is None:
        dS = S.dS
    blocks = extract_blocks(S, part)
    dblocks = extract_blocks(np.asarray(dS, dtype=float), part)
    jb = kernels.nabla_block_jacobian(blocks.A, blocks.B, blocks.C, blocks.D)
    total = np.zeros((part.r, part.r))
    for blk, err in enumerate((dblocks.A, dblocks.B, dblocks.C, dblocks.D)):
        total += np.einsum("abcd,cd->ab", jb[blk] ** 2, err**2)
    return np.sqrt(total)


def parse_policy(policy):
    """Normalize ``disjoint``, ``sliding``, ``random:<k>`` to ``(name, k)``."""
    name, _, arg = str(policy).partition(":")
    aliases = {
        "disjoint": "disjoint",
        "disjoint-canonical": "disjoint",
        "sliding": "sliding",
        "sliding-window": "sliding",
        "random": "random",
        "random-k": "random",
    }
    if name not in aliases:
        raise ValueError(f"unknown partition policy {policy!r}")
    name = aliases[name]
    k = None
    if name == "random":
        if not arg:
            raise ValueError("random policy needs a count, e.g. random:10")
        k = int(arg)
        if k < 1:
            raise ValueError("random policy count must be positive")
    return name, k


def enumerate_partitions(M, N, r=4, policy="disjoint", seed=0):
    """Partitions of an M x N matrix into r x r blocks.

    ``disjoint`` pairs consecutive non-overlapping windows (one partition
    for 8 x 8 with r = 4); ``sliding`` takes every ordered pair of distinct
    contiguous windows; ``random:<k>`` draws k partitions from ``seed``.
    """
    name, k = parse_policy(policy)
    if M < r + 1 or N < r + 1:
        raise PartitionTooSmallError(f"{M} x {N} data is too small for r = {r} blocks (need {r + 1} x {r + 1})")
    if name == "disjoint":
        if M < 2 * r or N < 2 * r:
            raise PartitionTooSmallError(f"disjoint r = {r} blocks need at least {2 * r} x {2 * r} data")
        row_pairs = [(range(2 * j * r, (2 * j + 1) * r), range((2 * j + 1) * r, (2 * j + 2) * r)) for j in range(M // (2 * r))]
        col_pairs = [(range(2 * j * r, (2 * j + 1) * r), range((2 * j + 1) * r, (2 * j + 2) * r)) for j in range(N // (2 * r))]
        return [Partition(r1, r2, c1, c2) for r1, r2 in row_pairs for c1, c2 in col_pairs]
    if name == "sliding":
        row_windows = [range(s, s + r) for s in range(M - r + 1)]
        col_windows = [range(s, s + r) for s in range(N - r + 1)]
        row_pairs = [(a, b) for a in row_windows for b in row_windows if a != b]
        col_pairs = [(a, b) for a in col_windows for b in col_windows if a != b]
        return [Partition(r1, r2, c1, c2) for r1, r2 in row_pairs for c1, c2 in col_pairs]
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < k:
        r1 = rng.choice(M, r, replace=False)
        r2 = rng.choice(M, r, replace=False)
        c1 = rng.choice(N, r, replace=False)
        c2 = rng.choice(N, r, replace=False)
        if set(r1) == set(r2) or set(c1) == set(c2):
            continue
        out.append(Partition(r1, r2, c1, c2))
    return out


def zscores(nabla_values, dnabla):
    """Elementwise ``nabla / dnabla``; 0/0 -> 0, x/0 -> +inf."""
    nv = np.asarray(nabla_values, dtype=float)
    dn = np.asarray(dnabla, dtype=float)
    out = np.empty_like(nv)
    pos = dn > 0
    out[pos] = nv[pos] / dn[pos]
    out[~pos & (nv == 0)] = 0.0
    out[~pos & (nv != 0)] = np.inf
    return out


def bonferroni_threshold(alpha, m):
    """Two-sided per-entry z threshold controlling family-wise error ``alpha`` over ``m`` tests."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if m < 1:
        raise ValueError("need at least one test")
    return float(stats.norm.isf(alpha / (2 * m)))


def _json_float(x):
    x = float(x)
    if math.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


def _json_matrix(m):
    if m is None:
        return None
    return [[_json_float(v) for v in row] for row in np.asarray(m)]


@dataclass
class PdResult:
    partition: Partition
    delta: np.ndarray
    nabla: np.ndarray
    dnabla: np.ndarray
    zscores: np.ndarray
    det_d: float
    cond_a: float
    cond_d: float
    informative: bool
    note: str = ""

    @property
    def active(self):
        return self.partition.active

    @property
    def n_active(self):
        return int(self.active.sum())

    @property
    def max_abs_z(self):
        if not self.n_active:
            return 0.0
        return float(np.max(np.abs(self.zscores[self.active])))

    def verdict(self, threshold):
        if not self.informative:
            return "inconclusive"
        return "correlated" if self.max_abs_z > threshold else "consistent"

    def to_dict(self, threshold):
        return {
            "partition": self.partition.to_dict(),
            "nabla": _json_matrix(self.nabla),
            "dnabla": _json_matrix(self.dnabla),
            "z": _json_matrix(self.zscores),
            "delta": _json_matrix(self.delta),
            "det_D": _json_float(self.det_d),
            "cond_A": _json_float(self.cond_a),
            "cond_D": _json_float(self.cond_d),
            "active": self.active.astype(int).tolist(),
            "verdict": self.verdict(threshold),
            "note": self.note,
        }


def evaluate_partition(data, part):
    """Nabla, its error bars and z-scores for one partition of ``data``."""
    blocks = extract_blocks(data, part)
    nab = nabla(blocks)
    dnab = nabla_errorbars(data, part)
    det_d = kernels.det(blocks.D)
    cond_a = float(np.linalg.cond(blocks.A))
    cond_d = float(np.linalg.cond(blocks.D))
    notes = []
    informative = True
    if not (cond_a <= COND_LIMIT and cond_d <= COND_LIMIT):
        informative = False
        notes.append("ill-conditioned A or D")
    scale = max(np.max(np.abs(blocks.D)), 1e-300) ** part.r
    if abs(det_d) <= DET_REL_LIMIT * scale:
        informative = False
        notes.append("det(D) vanishes; nabla = 0 would be uninformative")
    dS = data.dS if isinstance(data, DataMatrix) else None
    if dS is not None:
        noise_d = float(np.sqrt(np.sum(dS[np.ix_(part.rows2, part.cols2)] ** 2)))
        smin_d = float(np.linalg.svd(blocks.D, compute_uv=False)[-1])
        if noise_d > 0 and smin_d < NOISE_SNR_LIMIT * noise_d:
            informative = False
            notes.append("D is singular within its statistical noise")
    try:
        dlt = delta(blocks)
    except SingularPartitionError:
        dlt = None
    z = np.where(part.active, zscores(nab, dnab), 0.0)
    return PdResult(part, dlt, nab, dnab, z, det_d, cond_a, cond_d, informative, "; ".join(notes))


@dataclass
class DetectionSummary:
    results: list
    alpha: float
    threshold: float
    statistic: float
    verdict: str
    chi2: float
    chi2_dof: int
    chi2_pvalue: float
    extras: dict = field(default_factory=dict)

    @property
    def informative(self):
        return [res for res in self.results if res.informative]


def detect_correlations(data, r=4, policy="disjoint", alpha=0.05, seed=0, partitions=None):
    """Evaluate every partition and apply a Bonferroni max-|z| test.

    The threshold corrects over the active entries of all informative
    partitions.
    Returns verdict ``correlated`` when the largest |z| exceeds it,
    ``consistent`` otherwise, ``inconclusive`` when no partition is usable.
    The chi-square sum of z^2 is reported as secondary evidence; it ignores
    correlations between entries.
    """
    if partitions is None:
        partitions = enumerate_partitions(data.shape[0], data.shape[1], r, policy, seed)
    results = [evaluate_partition(data, part) for part in partitions]
    usable = [res for res in results if res.informative]
    if not usable:
        return DetectionSummary(results, alpha, math.inf, 0.0, "inconclusive", 0.0, 0, 1.0)
    threshold = bonferroni_threshold(alpha, sum(res.n_active for res in usable))
    statistic = max(res.max_abs_z for res in usable)
    z = np.concatenate([res.zscores[res.active] for res in usable])
    chi2 = float(np.sum(z**2))
    dof = int(z.size)
    verdict = "correlated" if statistic > threshold else "consistent"
    return DetectionSummary(results, alpha, threshold, statistic, verdict, chi2, dof, float(stats.chi2.sf(chi2, dof)))
