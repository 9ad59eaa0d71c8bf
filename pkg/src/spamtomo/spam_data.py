"""Count tables, expectation-value matrices and binomial sampling.

Each (state, detector) cell is an independent binomial experiment: ``k``
clicks in ``n`` trials. The maximum-likelihood expectation value is
``S = 2k/n - 1`` with variance ``(1 - S^2)/n``.
"""
import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np


class CountsFormatError(ValueError):
    """Malformed count-table file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class IncompleteExperimentError(ValueError):
    pass


def _labels(labels, count, prefix):
    if labels is None:
        return tuple(f"{prefix}{i}" for i in range(count))
    labels = tuple(str(x) for x in labels)
    if len(labels) != count:
        raise ValueError(f"expected {count} {prefix} labels, got {len(labels)}")
    return labels


@dataclass(frozen=True)
class CountsTable:
    n: np.ndarray
    k: np.ndarray
    rows: tuple = None
    cols: tuple = None

    def __post_init__(self):
        n = np.asarray(self.n)
        k = np.asarray(self.k)
        if n.shape != k.shape or n.ndim != 2:
            raise ValueError("n and k must be matrices of one shape")
        if not (np.issubdtype(n.dtype, np.integer) and np.issubdtype(k.dtype, np.integer)):
            raise ValueError("counts must be integers")
        if np.any(k < 0) or np.any(k > n):
            raise ValueError("need 0 <= k <= n in every cell")
        object.__setattr__(self, "n", n.astype(np.int64))
        object.__setattr__(self, "k", k.astype(np.int64))
        object.__setattr__(self, "rows", _labels(self.rows, n.shape[0], "s"))
        object.__setattr__(self, "cols", _labels(self.cols, n.shape[1], "d"))

    @property
    def shape(self):
        return self.n.shape


@dataclass(frozen=True)
class DataMatrix:
    """Expectation values ``S`` (M states x N detectors) with one-sigma errors ``dS``."""

    S: np.ndarray
    dS: np.ndarray = None
    rows: tuple = None
    cols: tuple = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        S = np.array(self.S, dtype=float)
        if S.ndim != 2:
            raise ValueError("S must be a matrix")
        dS = np.zeros_like(S) if self.dS is None else np.array(self.dS, dtype=float)
        if dS.shape != S.shape:
            raise ValueError("dS must match S")
        if np.any(np.abs(S) > 1 + 1e-12):
            raise ValueError("expectation values must lie in [-1, 1]")
        if np.any(dS < 0):
            raise ValueError("uncertainties must be non-negative")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "dS", dS)
        object.__setattr__(self, "rows", _labels(self.rows, S.shape[0], "s"))
        object.__setattr__(self, "cols", _labels(self.cols, S.shape[1], "d"))

    @property
    def shape(self):
        return self.S.shape

    def to_dict(self):
        return {
            "rows": list(self.rows),
            "cols": list(self.cols),
            "S": self.S.tolist(),
            "dS": self.dS.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, obj):
        return cls(np.array(obj["S"]), np.array(obj["dS"]), obj.get("rows"), obj.get("cols"))


def uncertainty(S_hat, n):
    """One-sigma error of ``S_hat`` from ``n`` trials.

    Plug-in binomial rule with ``S`` clamped to ``|S| <= 1 - 1/n`` and a
    variance floor of ``1/n^2`` so that all-or-nothing cells keep a
    nonzero error bar. Vectorized over arrays.
    """
    S_hat = np.asarray(S_hat, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise ValueError("n must be >= 1")
    s_clip = np.clip(S_hat, -1 + 1 / n, 1 - 1 / n)
    var = np.maximum((1 - s_clip**2) / n, 1 / n**2)
    out = np.sqrt(var)
    return float(out) if out.ndim == 0 else out


def estimate(counts):
    if np.any(counts.n == 0):
        mu, i = np.argwhere(counts.n == 0)[0]
        raise IncompleteExperimentError(
            f"no trials for state {counts.rows[mu]!r} / detector {counts.cols[i]!r}"
        )
    S = 2.0 * counts.k / counts.n - 1.0
    return DataMatrix(S, uncertainty(S, counts.n), counts.rows, counts.cols)


def build_S(P, W, rows=None, cols=None):
    """Noise-free data ``S = P W``."""
    P = np.asarray(P, dtype=float)
    W = np.asarray(W, dtype=float)
    if P.ndim != 2 or W.ndim != 2 or P.shape[1] != W.shape[0]:
        raise ValueError(f"incompatible shapes {P.shape} and {W.shape}")
    return DataMatrix(P @ W, None, rows, cols)


def cell_generators(seed, shape):
    """One independent generator per cell, spawned from a single seed in row-major order."""
    children = np.random.SeedSequence(seed).spawn(int(np.prod(shape)))
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def simulate_counts(S_true, shots, rng_seed):
    """Binomial counts with click probability ``(1 + S)/2`` per cell.

    Cell (mu, i) draws from its own substream, so results do not depend on
    the order cells are visited.
    """
    data = S_true if isinstance(S_true, DataMatrix) else DataMatrix(S_true)
    if int(shots) < 1:
        raise ValueError("shots must be >= 1")
    probs = np.clip((1.0 + data.S) / 2.0, 0.0, 1.0)
    n = np.full(data.shape, int(shots), dtype=np.int64)
    gens = cell_generators(rng_seed, data.shape)
    k = np.array([g.binomial(int(shots), p) for g, p in zip(gens, probs.ravel())], dtype=np.int64)
    return CountsTable(n, k.reshape(data.shape), data.rows, data.cols)


def simulate_counts_batch(S_true, shots, n_runs, rng_seed):
    """``n_runs`` independent count matrices ``k`` of shape ``(n_runs, M, N)``.

    Faster path for Monte-Carlo studies; cell ``j`` of every run comes from
    substream ``j`` of ``rng_seed``.
    """
    data = S_true if isinstance(S_true, DataMatrix) else DataMatrix(S_true)
    probs = np.clip((1.0 + data.S) / 2.0, 0.0, 1.0).ravel()
    gens = cell_generators(rng_seed, data.shape)
    k = np.stack([g.binomial(int(shots), p, size=n_runs) for g, p in zip(gens, probs)], axis=-1)
    return k.reshape((n_runs,) + data.shape)


def write_counts_csv(counts, fh):
    """Write ``counts`` to an open text file or to a path."""
    if isinstance(fh, (str, os.PathLike)):
        with open(fh, "w", encoding="utf-8", newline="") as out:
            return write_counts_csv(counts, out)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["state", "detector", "n", "k"])
    M, N = counts.shape
    for mu in range(M):
        for i in range(N):
            writer.writerow([counts.rows[mu], counts.cols[i], int(counts.n[mu, i]), int(counts.k[mu, i])])


def counts_to_csv(counts):
    buf = io.StringIO()
    write_counts_csv(counts, buf)
    return buf.getvalue()


def read_counts_csv(fh):
    """Parse ``state,detector,n,k`` rows from a text file or path; labels keep first-appearance order."""
    if isinstance(fh, (str, os.PathLike)):
        with open(fh, encoding="utf-8", newline="") as src:
            return read_counts_csv(src)
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise CountsFormatError("empty file", 1) from None
    if [h.strip() for h in header] != ["state", "detector", "n", "k"]:
        raise CountsFormatError(f"expected header state,detector,n,k, got {','.join(header)}", 1)
    rows, cols, cells = {}, {}, {}
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not x.strip() for x in rec):
            continue
        if len(rec) != 4:
            raise CountsFormatError(f"expected 4 fields, got {len(rec)}", lineno)
        state, det, n_str, k_str = (x.strip() for x in rec)
        try:
            n, k = int(n_str), int(k_str)
        except ValueError:
            raise CountsFormatError(f"non-integer count in {rec}", lineno) from None
        if n < 0 or k < 0 or k > n:
            raise CountsFormatError(f"need 0 <= k <= n, got n={n}, k={k}", lineno)
        rows.setdefault(state, len(rows))
        cols.setdefault(det, len(cols))
        key = (rows[state], cols[det])
        if key in cells:
            raise CountsFormatError(f"duplicate cell ({state}, {det})", lineno)
        cells[key] = (n, k)
    if not cells:
        raise CountsFormatError("no data rows")
    n_mat = np.zeros((len(rows), len(cols)), dtype=np.int64)
    k_mat = np.zeros_like(n_mat)
    for (mu, i), (n, k) in cells.items():
        n_mat[mu, i] = n
        k_mat[mu, i] = k
    if len(cells) != n_mat.size:
        raise CountsFormatError(f"table is incomplete: {len(cells)} of {n_mat.size} cells present")
    return CountsTable(n_mat, k_mat, tuple(rows), tuple(cols))
