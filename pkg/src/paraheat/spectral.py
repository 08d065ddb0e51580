"""Orthonormal polynomials on a parameter interval and total-degree bases.

The univariate family is orthonormal with respect to the unit-mass constant
weight on E = (lo, hi), so the constant polynomial is identically one and the
three-term recurrence reads

    x phi_r = b_{r+1} phi_{r+1} + c phi_r + b_r phi_{r-1},
    b_r = h r / sqrt(4 r^2 - 1),

with c the midpoint and h the half-width of E.  P-variate basis functions are
tensor products whose univariate degrees are the rows of a degree matrix.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ParameterInterval",
    "DegreeMatrix",
    "legendre_eval",
    "recurrence_coefficient",
    "total_degree_indices",
    "nnz_lambda",
    "assemble_Y",
    "assemble_Y_all",
    "offdiag",
    "eval_phi",
    "eval_basis_jacobian",
]

_MAX_ENTRIES = 2**31  # guard against runaway degree-matrix allocations


@dataclass(frozen=True)
class ParameterInterval:
    """Open interval E = (lo, hi) of admissible parameter values."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"empty parameter interval ({self.lo}, {self.hi})")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def contains(self, theta, tol: float = 0.0) -> bool:
        theta = np.asarray(theta)
        return bool(np.all(theta >= self.lo - tol) and np.all(theta <= self.hi + tol))

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lo, self.hi)

    def midpoint_vector(self, size: int) -> np.ndarray:
        return np.full(size, self.midpoint)


def recurrence_coefficient(interval: ParameterInterval, r: int) -> float:
    """Off-diagonal recurrence coefficient b_r of the orthonormal family."""
    if r == 0:
        return 0.0
    return interval.half_width * r / math.sqrt(4.0 * r * r - 1.0)


def _legendre_tables(interval: ParameterInterval, rmax: int, x: np.ndarray):
    """Values and derivatives of phi_0..phi_rmax at the points x."""
    x = np.asarray(x, dtype=float)
    c = interval.midpoint
    vals = np.zeros((rmax + 1,) + x.shape)
    ders = np.zeros_like(vals)
    vals[0] = 1.0
    if rmax >= 1:
        b1 = recurrence_coefficient(interval, 1)
        vals[1] = (x - c) / b1
        ders[1] = 1.0 / b1
    for r in range(1, rmax):
        bn = recurrence_coefficient(interval, r + 1)
        br = recurrence_coefficient(interval, r)
        vals[r + 1] = ((x - c) * vals[r] - br * vals[r - 1]) / bn
        ders[r + 1] = (vals[r] + (x - c) * ders[r] - br * ders[r - 1]) / bn
    return vals, ders


def legendre_eval(interval: ParameterInterval, r: int, x):
    """Value and derivative of the orthonormal polynomial of degree r at x."""
    if r < 0:
        raise ValueError("polynomial degree must be nonnegative")
    arr = np.asarray(x, dtype=float)
    vals, ders = _legendre_tables(interval, r, np.atleast_1d(arr))
    if arr.ndim == 0:
        return float(vals[r][0]), float(ders[r][0])
    return vals[r], ders[r]


# ---------------------------------------------------------------------------
# total-degree index sets
# ---------------------------------------------------------------------------

@dataclass
class DegreeMatrix:
    """N x P table of univariate degrees defining the P-variate basis.

    Rows are in graded order (total degree ascending, ascending lexicographic
    within each degree), so the first row is the constant polynomial.
    """

    lam: np.ndarray
    total_degree: int

    def __post_init__(self):
        self.lam = np.ascontiguousarray(self.lam, dtype=np.int32)
        if self.lam.ndim != 2:
            raise ValueError("degree matrix must be two-dimensional")
        if np.any(self.lam[0] != 0):
            raise ValueError("first row of the degree matrix must be all zeros")

    @property
    def num_terms(self) -> int:
        return self.lam.shape[0]

    @property
    def num_parameters(self) -> int:
        return self.lam.shape[1]

    @cached_property
    def row_sums(self) -> np.ndarray:
        return self.lam.sum(axis=1)

    @cached_property
    def compressed(self):
        """CSR-style (indptr, columns, degrees) of the nonzero entries."""
        mask = self.lam != 0
        counts = mask.sum(axis=1)
        indptr = np.zeros(self.num_terms + 1, dtype=np.int32)
        np.cumsum(counts, out=indptr[1:])
        rows, cols = np.nonzero(mask)
        return indptr, cols.astype(np.int32), self.lam[rows, cols]

    @cached_property
    def _row_lookup(self) -> dict:
        arr = np.ascontiguousarray(self.lam)
        return {arr[j].tobytes(): j for j in range(arr.shape[0])}

    @cached_property
    def groups(self):
        """Rows grouped by nonzero count as (count, rows, flat positions)."""
        indptr, _, _ = self.compressed
        counts = np.diff(indptr)
        out = []
        for c in range(1, int(counts.max(initial=0)) + 1):
            rows = np.nonzero(counts == c)[0]
            if len(rows):
                pos = indptr[rows][:, None] + np.arange(c)[None, :]
                out.append((c, rows, pos))
        return out

    def row_index(self, row: np.ndarray):
        """Index of an exact row, or None when absent."""
        key = np.ascontiguousarray(row, dtype=np.int32).tobytes()
        return self._row_lookup.get(key)

    def nnz(self) -> int:
        return int(np.count_nonzero(self.lam))

    def select_rows(self, rows: np.ndarray) -> "DegreeMatrix":
        return DegreeMatrix(self.lam[rows], self.total_degree)


def _degree_block(P: int, d: int) -> np.ndarray:
    """All exponent rows of total degree d, ascending lexicographic order."""
    if d == 0:
        return np.zeros((1, P), dtype=np.int32)
    combos = list(itertools.combinations_with_replacement(range(P), d))
    combos.reverse()
    flat = np.array(combos, dtype=np.int64)
    block = np.zeros((len(combos), P), dtype=np.int32)
    np.add.at(block, (np.repeat(np.arange(len(combos)), d), flat.ravel()), 1)
    return block


def total_degree_indices(P: int, n: int) -> DegreeMatrix:
    """Degree matrix of the full total-degree space: all row sums <= n."""
    if P < 1:
        raise ValueError("need at least one parameter")
    if n < 0:
        raise ValueError("total degree must be nonnegative")
    N = math.comb(P + n, n)
    if N * P > _MAX_ENTRIES:
        raise OverflowError(
            f"degree matrix with N={N}, P={P} exceeds {_MAX_ENTRIES} entries"
        )
    lam = np.vstack([_degree_block(P, d) for d in range(n + 1)])
    return DegreeMatrix(lam, n)


def nnz_lambda(P: int, n: int) -> int:
    """Closed-form nonzero count of the full total-degree matrix."""
    if n == 0:
        return 0
    return P * math.comb(P + n - 1, n - 1)


# ---------------------------------------------------------------------------
# triple-product matrices
# ---------------------------------------------------------------------------

def _offdiag_pairs(degmat: DegreeMatrix, p: int, interval: ParameterInterval):
    """Coupled row pairs (j, l) and entries for coordinate p.

    A pair couples rows that agree everywhere except coordinate p, where the
    degrees differ by one; the entry is the recurrence coefficient b_{r+1}.
    """
    lam = degmat.lam
    maxdeg = int(degmat.row_sums.max(initial=0))
    cand = np.nonzero(degmat.row_sums < maxdeg)[0]
    rows, cols, vals = [], [], []
    bump = np.empty(lam.shape[1], dtype=np.int32)
    for j in cand:
        np.copyto(bump, lam[j])
        bump[p] += 1
        l = degmat.row_index(bump)
        if l is not None:
            rows.append(j)
            cols.append(l)
            vals.append(recurrence_coefficient(interval, int(lam[j, p]) + 1))
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals)


def assemble_Y(p: int, degmat: DegreeMatrix, interval: ParameterInterval) -> sp.csr_matrix:
    """Symmetric N x N matrix of coordinate-p products (x_p phi_j, phi_l).

    The diagonal equals the interval midpoint; off-diagonal entries couple
    basis functions whose degree in coordinate p differs by exactly one.
    Coordinates are indexed from zero.
    """
    if not 0 <= p < degmat.num_parameters:
        raise ValueError(f"coordinate index {p} out of range")
    N = degmat.num_terms
    rows, cols, vals = _offdiag_pairs(degmat, p, interval)
    diag = np.arange(N, dtype=np.int64)
    r = np.concatenate([diag, rows, cols])
    c = np.concatenate([diag, cols, rows])
    v = np.concatenate([np.full(N, interval.midpoint), vals, vals])
    mat = sp.coo_matrix((v, (r, c)), shape=(N, N)).tocsr()
    mat.sort_indices()
    return mat


def assemble_Y_all(degmat: DegreeMatrix, interval: ParameterInterval) -> list:
    """Triple-product matrices for every coordinate (shared row lookup)."""
    return [assemble_Y(p, degmat, interval) for p in range(degmat.num_parameters)]


def offdiag(mat: sp.spmatrix) -> sp.csr_matrix:
    """Copy with the diagonal removed from the stored pattern."""
    coo = mat.tocoo()
    keep = coo.row != coo.col
    out = sp.coo_matrix(
        (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=mat.shape
    ).tocsr()
    out.sort_indices()
    return out


# ---------------------------------------------------------------------------
# basis evaluation
# ---------------------------------------------------------------------------

def eval_phi(degmat: DegreeMatrix, interval: ParameterInterval, theta) -> np.ndarray:
    """Vector of all N basis polynomials at theta; first entry is always 1."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (degmat.num_parameters,):
        raise ValueError(f"theta must have length {degmat.num_parameters}")
    vals, _ = _legendre_tables(interval, degmat.total_degree, theta)
    _, cols, degs = degmat.compressed
    entry = vals[degs, cols]
    phi = np.ones(degmat.num_terms)
    for c, rows, pos in degmat.groups:
        if c == 1:
            phi[rows] = entry[pos[:, 0]]
        elif c == 2:
            phi[rows] = entry[pos[:, 0]] * entry[pos[:, 1]]
        else:
            phi[rows] = entry[pos].prod(axis=1)
    return phi


def eval_basis_jacobian(degmat: DegreeMatrix, interval: ParameterInterval,
                        theta) -> sp.csr_matrix:
    """Sparse N x P Jacobian of the basis vector; pattern equals the degree matrix."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (degmat.num_parameters,):
        raise ValueError(f"theta must have length {degmat.num_parameters}")
    vals, ders = _legendre_tables(interval, degmat.total_degree, theta)
    indptr, cols, degs = degmat.compressed
    ventry = vals[degs, cols]
    dentry = ders[degs, cols]
    data = np.empty(len(cols))
    for c, rows, pos in degmat.groups:
        if c == 1:
            flat = pos[:, 0]
            data[flat] = dentry[flat]
        elif c == 2:
            a, b = pos[:, 0], pos[:, 1]
            data[a] = dentry[a] * ventry[b]
            data[b] = dentry[b] * ventry[a]
        else:
            block = ventry[pos]                      # (len(rows), c)
            left = np.ones_like(block)
            right = np.ones_like(block)
            np.cumprod(block[:, :-1], axis=1, out=left[:, 1:])
            np.cumprod(block[:, :0:-1], axis=1, out=right[:, -2::-1])
            data[pos.ravel()] = (dentry[pos] * left * right).ravel()
    return sp.csr_matrix(
        (data, cols, indptr), shape=(degmat.num_terms, degmat.num_parameters)
    )
