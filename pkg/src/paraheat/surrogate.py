"""Boundary-trace surrogate U(theta) = V phi(theta) and its Jacobian.

V collects the parametric finite element solution evaluated at every
measurement coordinate, one row per (time, boundary point) pair in time-major
order, one column per polynomial basis function.  Once V is extracted, both
the predicted measurements and their derivatives with respect to the spline
coefficients cost a single (sparse-aware) matrix product, independent of the
spatial and temporal discretizations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .mesh_fem import Mesh, point_evaluation_matrix
from .spectral import DegreeMatrix, ParameterInterval, eval_basis_jacobian, eval_phi
from .splines import SplineBasis
from .stepper import SolutionSnapshots

__all__ = [
    "ParametricSurrogate",
    "MeasurementSet",
    "ExtrapolationWarning",
    "boundary_grid",
    "extract_surrogate",
    "eval_U",
    "eval_JU",
    "truncate",
    "add_noise",
]

LAYOUT_TIME_MAJOR = "time-major"


class ExtrapolationWarning(UserWarning):
    """Raised when the surrogate is evaluated outside the parameter box."""


@dataclass
class ParametricSurrogate:
    """Dense Q x N trace matrix with everything needed to evaluate it."""

    V: np.ndarray
    degrees: DegreeMatrix
    interval: ParameterInterval
    points: np.ndarray            # (Q_s, dim) boundary coordinates
    times: np.ndarray             # (Q_t,) measurement times
    spline_dim: int
    spline_degree: int
    spline_count: int             # functions per axis
    provenance: dict = field(default_factory=dict)
    layout: str = LAYOUT_TIME_MAJOR

    def __post_init__(self):
        self.V = np.ascontiguousarray(self.V, dtype=float)
        q_expected = len(self.points) * len(self.times)
        if self.V.shape != (q_expected, self.degrees.num_terms):
            raise ValueError(
                f"V has shape {self.V.shape}, expected ({q_expected}, {self.degrees.num_terms})"
            )
        if self.spline_count ** self.spline_dim != self.degrees.num_parameters:
            raise ValueError("spline metadata does not match the degree matrix width")

    @property
    def num_measurements(self) -> int:
        return self.V.shape[0]

    @property
    def num_terms(self) -> int:
        return self.V.shape[1]

    @property
    def num_parameters(self) -> int:
        return self.degrees.num_parameters

    @cached_property
    def spline_basis(self) -> SplineBasis:
        return SplineBasis(
            dim=self.spline_dim, degree=self.spline_degree,
            per_axis_count=self.spline_count,
        )

    @cached_property
    def _vt(self) -> np.ndarray:
        # contiguous transpose so sparse right-products avoid a copy per call
        return np.ascontiguousarray(self.V.T)

    def coordinates(self) -> np.ndarray:
        """Full (Q, dim+1) table of (x, t) rows in storage order."""
        qs = len(self.points)
        rows = np.empty((self.num_measurements, self.points.shape[1] + 1))
        for it, t in enumerate(self.times):
            rows[it * qs:(it + 1) * qs, :-1] = self.points
            rows[it * qs:(it + 1) * qs, -1] = t
        return rows


@dataclass
class MeasurementSet:
    """Boundary temperature readings with their noise bookkeeping."""

    points: np.ndarray
    times: np.ndarray
    values: np.ndarray            # (Q,) in time-major order
    sigma: float = 0.0
    sigma0: float = 0.0
    seed: Optional[int] = None
    layout: str = LAYOUT_TIME_MAJOR

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.points) * len(self.times),):
            raise ValueError("measurement vector does not match the coordinate layout")
        if self.sigma < 0:
            raise ValueError("noise level must be nonnegative")


def boundary_grid(dim: int, count: int) -> np.ndarray:
    """Uniform boundary measurement points, corners included exactly once.

    In 2D ``count`` must equal 4*(k-1) for a per-side resolution k; in 3D it
    must equal 6k^2 - 12k + 8, the surface nodes of a k^3 grid.
    """
    if dim == 2:
        if count % 4 or count < 4:
            raise ValueError(f"2D boundary grid needs a positive multiple of 4 points, got {count}")
        k = count // 4 + 1
        ticks = np.linspace(0.0, 1.0, k)
        fwd, bwd = ticks[:-1], ticks[1:][::-1]
        # counterclockwise walk: bottom, right, top, left; each corner once
        return np.concatenate(
            [
                np.column_stack([fwd, np.zeros(k - 1)]),
                np.column_stack([np.ones(k - 1), fwd]),
                np.column_stack([bwd, np.ones(k - 1)]),
                np.column_stack([np.zeros(k - 1), bwd]),
            ]
        )
    if dim == 3:
        k = round(1 + math.sqrt(max(count - 2, 0) / 6))
        if 6 * k * k - 12 * k + 8 != count or k < 2:
            raise ValueError(f"no cube surface grid has {count} points")
        ticks = np.linspace(0.0, 1.0, k)
        zz, yy, xx = np.meshgrid(ticks, ticks, ticks, indexing="ij")
        grid = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
        on_boundary = np.any((grid == 0.0) | (grid == 1.0), axis=1)
        return grid[on_boundary]
    raise ValueError("boundary grids exist for dim 2 and 3 only")


def extract_surrogate(
    snapshots: SolutionSnapshots,
    mesh: Mesh,
    points: np.ndarray,
    times: Sequence[float],
    degrees: DegreeMatrix,
    interval: ParameterInterval,
    basis: SplineBasis,
    provenance: Optional[dict] = None,
) -> ParametricSurrogate:
    """Fill V by point evaluation of every parametric column at every (x, t).

    Snapshot tables must either be full (M, N) states or already reduced to
    point values (Q_s, N) by the matching observer.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    times = np.asarray(times, dtype=float)
    available = {float(t): i for i, t in enumerate(snapshots.times)}
    evaluator = None if snapshots.observed else point_evaluation_matrix(mesh, points)

    qs, qt = len(points), len(times)
    V = np.empty((qs * qt, degrees.num_terms))
    for it, t in enumerate(times):
        idx = available.get(float(t))
        if idx is None:
            close = np.nonzero(np.abs(snapshots.times - t) <= 1e-12)[0]
            if len(close) == 0:
                raise ValueError(f"time {t} is not among the stored snapshots")
            idx = int(close[0])
        table = snapshots.tables[idx]
        if snapshots.observed:
            if table.shape != (qs, degrees.num_terms):
                raise ValueError("observed snapshots do not match the measurement layout")
            V[it * qs:(it + 1) * qs] = table
        else:
            V[it * qs:(it + 1) * qs] = evaluator @ table
    return ParametricSurrogate(
        V=V,
        degrees=degrees,
        interval=interval,
        points=points,
        times=times,
        spline_dim=basis.dim,
        spline_degree=basis.degree,
        spline_count=basis.per_axis_count,
        provenance=dict(provenance or {}),
    )


def _check_box(surrogate: ParametricSurrogate, theta: np.ndarray):
    interval = surrogate.interval
    if theta.min() < interval.lo - 1e-12 or theta.max() > interval.hi + 1e-12:
        warnings.warn(
            "evaluating the surrogate outside the parameter box (extrapolation)",
            ExtrapolationWarning,
            stacklevel=3,
        )


def eval_U(surrogate: ParametricSurrogate, theta) -> np.ndarray:
    """Predicted boundary values V phi(theta); cost O(N Q)."""
    theta = np.asarray(theta, dtype=float)
    _check_box(surrogate, theta)
    phi = eval_phi(surrogate.degrees, surrogate.interval, theta)
    return surrogate.V @ phi


def eval_JU(surrogate: ParametricSurrogate, theta) -> np.ndarray:
    """Dense Q x P Jacobian V J_phi(theta) using the sparse basis Jacobian."""
    theta = np.asarray(theta, dtype=float)
    _check_box(surrogate, theta)
    j_phi = eval_basis_jacobian(surrogate.degrees, surrogate.interval, theta)
    return (j_phi.T @ surrogate._vt).T


def truncate(surrogate: ParametricSurrogate, keep: int) -> ParametricSurrogate:
    """Keep the columns of V with the largest Euclidean norms.

    Ties break toward the earlier (lower graded-lexicographic) column, and the
    constant column is always retained.  Column order is preserved.
    """
    n = surrogate.num_terms
    if not 1 <= keep <= n:
        raise ValueError(f"keep must lie in [1, {n}]")
    norms = np.linalg.norm(surrogate.V, axis=0)
    order = np.argsort(-norms, kind="stable")
    chosen = set(order[:keep].tolist())
    if 0 not in chosen:
        chosen.discard(int(order[keep - 1]))
        chosen.add(0)
    rows = np.array(sorted(chosen), dtype=np.int64)
    return replace(
        surrogate,
        V=surrogate.V[:, rows].copy(),
        degrees=surrogate.degrees.select_rows(rows),
    )


def add_noise(values: np.ndarray, sigma0: float, seed: int):
    """Additive i.i.d. Gaussian noise with sigma = sigma0 * max(values).

    Returns the noisy vector and the realized standard deviation; the
    generator is fully determined by the seed.
    """
    if sigma0 < 0:
        raise ValueError("sigma0 must be nonnegative")
    values = np.asarray(values, dtype=float)
    sigma = float(sigma0 * values.max()) if sigma0 > 0 else 0.0
    if sigma == 0.0:
        return values.copy(), 0.0
    rng = np.random.default_rng(seed)
    return values + rng.normal(0.0, sigma, size=values.shape), sigma
