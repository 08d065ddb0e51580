"""Uniform B-splines and tensor-product partitions of unity on the unit box.

The diffusivity is a(x; theta) = sum_p theta_p psi_p(x) where the psi_p are
tensor products of univariate B-splines on clamped uniform knot vectors, so
they are nonnegative, locally supported and sum to one everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import mesh_fem

__all__ = [
    "SplineBasis",
    "bspline_value",
    "build_partition",
    "evaluate_diffusivity",
    "sample_field_error",
    "spline_stiffness_matrices",
]


def bspline_value(s: int, x) -> np.ndarray:
    """Standard uniform B-spline b_s evaluated at x.

    b_0 is the indicator of [0, 1); higher degrees follow the Cox-de Boor
    recurrence on the integer knots 0, 1, ..., s+1 (equivalent to repeated
    convolution with b_0).  Values vanish outside [0, s+1].
    """
    if s < 0:
        raise ValueError("spline degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    # b[j] holds B_{j,deg}(x) on integer knots, for j = 0..s-deg... iterate up
    vals = [np.where((j <= x) & (x < j + 1), 1.0, 0.0) for j in range(s + 1)]
    for deg in range(1, s + 1):
        nxt = []
        for j in range(s + 1 - deg):
            left = (x - j) / deg * vals[j]
            right = (j + deg + 1 - x) / deg * vals[j + 1]
            nxt.append(left + right)
        vals = nxt
    out = vals[0]
    return float(out[0]) if scalar else out


def _clamped_knots(m: int, s: int) -> np.ndarray:
    """Clamped (open) uniform knot vector producing m basis functions on [0,1]."""
    interior = np.linspace(0.0, 1.0, m - s + 1)
    return np.concatenate([np.zeros(s), interior, np.ones(s)])


def _basis_values_1d(knots: np.ndarray, m: int, s: int, x: np.ndarray) -> np.ndarray:
    """All m clamped B-splines at the points x, dense (len(x), m) table."""
    x = np.asarray(x, dtype=float)
    spans = np.clip((x * (m - s)).astype(np.int64), 0, m - s - 1) + s
    # de Boor basis-function algorithm, vectorized over points
    n = len(x)
    table = np.zeros((n, s + 1))
    table[:, 0] = 1.0
    left = np.empty((n, s + 1))
    right = np.empty((n, s + 1))
    for j in range(1, s + 1):
        left[:, j] = x - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - x
        saved = np.zeros(n)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = np.where(denom != 0.0, table[:, r] / np.where(denom == 0, 1, denom), 0.0)
            table[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        table[:, j] = saved
    out = np.zeros((n, m))
    cols = spans[:, None] - s + np.arange(s + 1)
    np.put_along_axis(out, cols, table, axis=1)
    return out


@dataclass(frozen=True)
class SplineBasis:
    """Tensor-product partition of unity {psi_p} on [0,1]^dim.

    Index p runs in C order over the per-axis function indices, axis 1
    slowest.  P = per_axis_count ** dim.
    """

    dim: int
    degree: int
    per_axis_count: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if self.per_axis_count < self.degree + 1:
            raise ValueError(
                f"need at least degree+1 = {self.degree + 1} functions per axis, "
                f"got {self.per_axis_count}"
            )

    @property
    def size(self) -> int:
        return self.per_axis_count ** self.dim

    @cached_property
    def knots(self) -> np.ndarray:
        return _clamped_knots(self.per_axis_count, self.degree)

    def axis_values(self, x) -> np.ndarray:
        """Univariate basis table of shape (len(x), per_axis_count)."""
        return _basis_values_1d(self.knots, self.per_axis_count, self.degree,
                                np.atleast_1d(np.asarray(x, dtype=float)))

    def values(self, points: np.ndarray) -> np.ndarray:
        """All P basis functions at the given points, shape (n, P)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tabs = [self.axis_values(pts[:, a]) for a in range(self.dim)]
        out = tabs[0]
        for t in tabs[1:]:
            out = np.einsum("ni,nj->nij", out, t).reshape(len(pts), -1)
        return out

    def multi_index(self, p: int) -> tuple:
        """Per-axis function indices of psi_p (axis 1 slowest)."""
        m = self.per_axis_count
        idx = []
        for _ in range(self.dim):
            p, r = divmod(p, m)
            idx.append(r)
        return tuple(reversed(idx))

    def support_box(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned closure of supp(psi_p), a product of knot spans."""
        s, knots = self.degree, self.knots
        lo, hi = [], []
        for i in self.multi_index(p):
            lo.append(knots[i])
            hi.append(knots[i + s + 1])
        return np.array(lo), np.array(hi)

    def function(self, p: int) -> Callable:
        """Vectorized callable psi_p over (n, dim) point arrays."""
        idx = self.multi_index(p)

        def psi(points):
            pts = np.atleast_2d(np.asarray(points, dtype=float))
            out = np.ones(len(pts))
            for a, i in enumerate(idx):
                out *= self.axis_values(pts[:, a])[:, i]
            return out

        return psi


def build_partition(dim: int, m: int, s: int) -> SplineBasis:
    """Partition of unity of m^dim tensor B-splines of degree s on [0,1]^dim."""
    return SplineBasis(dim=dim, degree=s, per_axis_count=m)


def evaluate_diffusivity(basis: SplineBasis, theta: np.ndarray, points) -> np.ndarray:
    """Pointwise diffusivity a(x; theta) = sum_p theta_p psi_p(x)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.size,):
        raise ValueError(f"theta must have length {basis.size}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m = basis.per_axis_count
    grid = theta.reshape((m,) * basis.dim)
    tabs = [basis.axis_values(pts[:, a]) for a in range(basis.dim)]
    if basis.dim == 1:
        return np.einsum("ni,i->n", tabs[0], grid)
    if basis.dim == 2:
        return np.einsum("ni,nj,ij->n", tabs[0], tabs[1], grid)
    return np.einsum("ni,nj,nk,ijk->n", tabs[0], tabs[1], tabs[2], grid)


def diffusivity_function(basis: SplineBasis, theta: np.ndarray) -> Callable:
    """Vectorized callable x -> a(x; theta) for assembly and data generation."""
    theta = np.asarray(theta, dtype=float).copy()

    def a(points):
        return evaluate_diffusivity(basis, theta, points)

    return a


def sample_field_error(basis: SplineBasis, theta: np.ndarray, target: Callable,
                       sample_points: np.ndarray) -> float:
    """Relative discrete L2 distance between a(.; theta) and the target field."""
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    approx = evaluate_diffusivity(basis, theta, pts)
    exact = np.asarray(target(pts), dtype=float)
    denom = np.sqrt(np.sum(exact**2))
    if denom == 0.0:
        raise ValueError("target field vanishes on the sample grid")
    return float(np.sqrt(np.sum((approx - exact) ** 2)) / denom)


def spline_stiffness_matrices(mesh: mesh_fem.Mesh, basis: SplineBasis) -> list:
    """Stiffness matrices weighted by every psi_p, quadrature exact to degree s+2."""
    if mesh.dim != basis.dim:
        raise ValueError("mesh and spline basis dimensions differ")
    degree = basis.degree + 2
    return [
        mesh_fem.assemble_stiffness(
            mesh, basis.function(p), quad_degree=degree, support=basis.support_box(p)
        )
        for p in range(basis.size)
    ]
