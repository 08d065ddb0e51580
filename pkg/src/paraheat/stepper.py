"""Time integration of the parametric semi-discrete diffusion system.

The coupled system has mass I (x) B and stiffness sum_p Y_p (x) A_p, split as
D + S with D = mu I (x) A_ref absorbing the constant Y diagonals (mu is the
parameter-interval midpoint) and S the strictly off-diagonal Kronecker
remainder.  One semi-implicit Euler step treats D implicitly and S explicitly,
so the only linear solves are with the M x M matrix B + delta*mu*A_ref, reused
across the N right-hand-side columns in matricized form.

A plain Crank-Nicolson solver for a fixed diffusivity is included for
synthetic data generation and consistency diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh_fem import Mesh, ProblemSpec, assemble_boundary_load, assemble_interior_load
from .spectral import offdiag

__all__ = [
    "ParametricOperator",
    "SolutionSnapshots",
    "StabilityReport",
    "assemble_S",
    "build_operator",
    "rhs_mean",
    "semi_implicit_solve",
    "semi_implicit_direct",
    "crank_nicolson_solve",
    "stability_probe",
]

_DENSE_SOLVE_CUTOFF = 4096      # below this, factor B + delta*mu*A densely
_EXPLICIT_S_CUTOFF = 80_000_000  # max stored nonzeros for an explicit S


class SpdFactorization:
    """Reusable factorization of a symmetric positive-definite sparse matrix."""

    def __init__(self, mat: sp.spmatrix):
        n = mat.shape[0]
        if n <= _DENSE_SOLVE_CUTOFF:
            self._chol = la.cho_factor(mat.toarray(), lower=True, check_finite=False)
            self._lu = None
        else:
            self._chol = None
            self._lu = spla.splu(mat.tocsc())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._chol is not None:
            return la.cho_solve(self._chol, rhs, check_finite=False)
        return self._lu.solve(rhs)


@dataclass
class ParametricOperator:
    """Assembled matrices of the coupled space-parameter system."""

    mass: sp.csr_matrix                 # M x M
    stiffness_ref: sp.csr_matrix        # M x M, unit-coefficient
    mu: float                           # parameter-interval midpoint
    n_terms: int                        # N, number of polynomial basis functions
    S: Optional[sp.csr_matrix] = None   # explicit MN x MN coupling
    couplings: Optional[list] = None    # [(offdiag Y_p, A_p)] when S is factored

    @property
    def m_nodes(self) -> int:
        return self.mass.shape[0]

    @property
    def nnz_S(self) -> int:
        if self.S is not None:
            return self.S.nnz
        return sum(y.nnz * a.nnz for y, a in self.couplings)

    def apply_S(self, u_flat: np.ndarray) -> np.ndarray:
        """Product S u for a flat state vector (spatial index fastest)."""
        if self.S is not None:
            return self.S @ u_flat
        m, n = self.m_nodes, self.n_terms
        u_mat = u_flat.reshape((m, n), order="F")
        out = np.zeros((m, n))
        for y_off, a_p in self.couplings:
            out += (y_off @ (a_p @ u_mat).T).T
        return out.ravel(order="F")

    def factorize(self, delta: float) -> SpdFactorization:
        return SpdFactorization(self.mass + (delta * self.mu) * self.stiffness_ref)


def assemble_S(y_list: Sequence[sp.spmatrix], a_list: Sequence[sp.spmatrix]) -> sp.csr_matrix:
    """Explicit coupling matrix sum_p offdiag(Y_p) (x) A_p.

    Off-diagonal Y patterns are disjoint across p, so the stored nonzero count
    is exactly the sum of the per-coordinate Kronecker counts.
    """
    if len(y_list) != len(a_list):
        raise ValueError("need one spatial matrix per parameter coordinate")
    if not y_list:
        raise ValueError("empty coupling list")
    n = y_list[0].shape[0]
    m = a_list[0].shape[0]
    rows, cols, vals = [], [], []
    for y_p, a_p in zip(y_list, a_list):
        if y_p.shape != (n, n) or a_p.shape != (m, m):
            raise ValueError("inconsistent coupling dimensions")
        block = sp.kron(offdiag(y_p), a_p, format="coo")
        if block.nnz:
            rows.append(block.row.astype(np.int64))
            cols.append(block.col.astype(np.int64))
            vals.append(block.data)
    mn = m * n
    if not rows:
        return sp.csr_matrix((mn, mn))
    out = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mn, mn),
    ).tocsr()
    out.sort_indices()
    return out


def build_operator(
    mass: sp.csr_matrix,
    stiffness_ref: sp.csr_matrix,
    stiffness_list: Sequence[sp.spmatrix],
    y_list: Sequence[sp.spmatrix],
    mu: float,
    s_format: str = "auto",
) -> ParametricOperator:
    """Bundle the assembled matrices into a stepping operator.

    ``s_format`` picks between an explicit sparse S ("explicit"), a factored
    Kronecker form ("factored"), or a size-based choice ("auto").
    """
    n = y_list[0].shape[0]
    predicted = sum(offdiag(y).nnz * a.nnz for y, a in zip(y_list, stiffness_list))
    if s_format == "auto":
        s_format = "explicit" if predicted <= _EXPLICIT_S_CUTOFF else "factored"
    if s_format == "explicit":
        s_mat = assemble_S(y_list, stiffness_list)
        return ParametricOperator(mass, stiffness_ref, mu, n, S=s_mat)
    if s_format == "factored":
        couplings = [(offdiag(y), a.tocsr()) for y, a in zip(y_list, stiffness_list)]
        return ParametricOperator(mass, stiffness_ref, mu, n, couplings=couplings)
    raise ValueError(f"unknown s_format {s_format!r}")


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------

def _load_vector(problem: ProblemSpec, t: float) -> np.ndarray:
    out = assemble_boundary_load(problem.mesh, problem.g, t)
    if problem.f is not None:
        out += assemble_interior_load(problem.mesh, problem.f, t)
    return out

# 3-point Gauss-Legendre on [0, 1]
_GAUSS3_NODES = np.array([0.5 - np.sqrt(15) / 10, 0.5, 0.5 + np.sqrt(15) / 10])
_GAUSS3_WEIGHTS = np.array([5 / 18, 8 / 18, 5 / 18])


def rhs_mean(problem: ProblemSpec, k: int, delta: float) -> np.ndarray:
    """Time average of the load vector over step k (spatial block only).

    All parametric blocks beyond the constant polynomial vanish by
    orthogonality, so the mean is returned as an M-vector.  For data linear
    in time the average is the exact midpoint value; otherwise a 3-point
    Gauss rule in time is used.
    """
    if k < 0:
        raise ValueError("step index must be nonnegative")
    t0 = k * delta
    if problem.rhs_time_linear:
        return _load_vector(problem, t0 + 0.5 * delta)
    out = np.zeros(problem.mesh.num_nodes)
    for node, weight in zip(_GAUSS3_NODES, _GAUSS3_WEIGHTS):
        out += weight * _load_vector(problem, t0 + node * delta)
    return out


# ---------------------------------------------------------------------------
# semi-implicit Euler, matricized
# ---------------------------------------------------------------------------

@dataclass
class SolutionSnapshots:
    """Matricized parametric states at selected times.

    ``tables[i]`` is mat(u) at ``times[i]``, of shape (M, N), or the result of
    the observer applied to it when one was supplied to the solver.
    """

    times: np.ndarray
    tables: list
    observed: bool = False


@dataclass
class StabilityReport:
    times: np.ndarray
    max_norms: np.ndarray

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.max_norms)))


def _step_index(t: float, delta: float, what: str) -> int:
    k = round(t / delta)
    if abs(t - k * delta) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"{what} {t} is not a multiple of the step size {delta}")
    return k


def semi_implicit_solve(
    operator: ParametricOperator,
    problem: ProblemSpec,
    delta: float,
    final_time: Optional[float] = None,
    snapshot_times: Sequence[float] = (),
    observer: Optional[Callable] = None,
    monitor: Optional[Callable] = None,
) -> SolutionSnapshots:
    """March the coupled system to the final time with step size delta.

    Each step computes Xi = B mat(u), subtracts delta * S u and adds the
    averaged load, then solves (B + delta*mu*A_ref) Ups = mat(xi) column by
    column through one precomputed factorization.  Only a single state vector
    is kept between steps; snapshots are copies (or observer reductions) taken
    at the requested times.  ``monitor(k, t, u_mat)`` is called after every
    step when given.
    """
    if delta <= 0:
        raise ValueError("step size must be positive")
    T = problem.final_time if final_time is None else final_time
    n_steps = _step_index(T, delta, "final time")
    if n_steps < 1:
        raise ValueError("final time must allow at least one step")
    snap_steps = {}
    for t in snapshot_times:
        if t < 0 or t > T + 1e-12:
            raise ValueError(f"snapshot time {t} outside [0, {T}]")
        snap_steps.setdefault(_step_index(t, delta, "snapshot time"), []).append(t)

    m, n = operator.m_nodes, operator.n_terms
    mass = operator.mass
    solver = operator.factorize(delta)

    u = np.zeros((m, n), order="F")
    u[:, 0] = problem.initial_vector()

    times, tables = [], []

    def record(step: int):
        for t in snap_steps.get(step, ()):
            times.append(t)
            tables.append(observer(u) if observer is not None else u.copy())

    record(0)
    for k in range(n_steps):
        xi = (mass @ u).ravel(order="F")
        u_flat = u.ravel(order="F")
        xi -= delta * operator.apply_S(u_flat)
        xi[:m] += delta * rhs_mean(problem, k, delta)
        u = solver.solve(xi.reshape((m, n), order="F"))
        if monitor is not None:
            monitor(k + 1, (k + 1) * delta, u)
        record(k + 1)

    order = np.argsort(times)
    return SolutionSnapshots(
        times=np.array(times)[order],
        tables=[tables[i] for i in order],
        observed=observer is not None,
    )


def semi_implicit_direct(
    mass: sp.csr_matrix,
    stiffness_a: sp.csr_matrix,
    stiffness_ref: sp.csr_matrix,
    mu: float,
    problem: ProblemSpec,
    delta: float,
    snapshot_times: Sequence[float],
    final_time: Optional[float] = None,
) -> np.ndarray:
    """Semi-implicit Euler for one fixed diffusivity (non-parametric).

    Splits A_a = mu*A_ref + (A_a - mu*A_ref), treating the reference part
    implicitly; this is the scalar counterpart of the parametric scheme and
    serves as the surrogate-fidelity oracle.  Returns (n_times, M) values.
    """
    T = problem.final_time if final_time is None else final_time
    n_steps = _step_index(T, delta, "final time")
    snap_steps = {_step_index(t, delta, "snapshot time"): i
                  for i, t in enumerate(snapshot_times)}
    solver = SpdFactorization(mass + (delta * mu) * stiffness_ref)
    s_part = (stiffness_a - mu * stiffness_ref).tocsr()

    u = problem.initial_vector()
    out = np.zeros((len(snapshot_times), mass.shape[0]))
    if 0 in snap_steps:
        out[snap_steps[0]] = u
    for k in range(n_steps):
        rhs = mass @ u - delta * (s_part @ u) + delta * rhs_mean(problem, k, delta)
        u = solver.solve(rhs)
        if k + 1 in snap_steps:
            out[snap_steps[k + 1]] = u
    return out


def crank_nicolson_solve(
    mesh: Mesh,
    diffusivity: Callable,
    problem: ProblemSpec,
    delta: float,
    snapshot_times: Sequence[float],
    final_time: Optional[float] = None,
    quad_degree: int = 4,
) -> np.ndarray:
    """Second-order trapezoidal stepping for one fixed diffusivity.

    Assembles the weighted stiffness from the callable and solves
    (B + delta/2 A) u+ = (B - delta/2 A) u + delta*(r_k + r_{k+1})/2.
    Used to generate synthetic measurement data on fine meshes and for the
    approximation-error diagnostic.  Returns (n_times, M) nodal values.
    """
    from .mesh_fem import assemble_mass, assemble_stiffness

    T = problem.final_time if final_time is None else final_time
    n_steps = _step_index(T, delta, "final time")
    snap_steps = {_step_index(t, delta, "snapshot time"): i
                  for i, t in enumerate(snapshot_times)}

    mass = assemble_mass(mesh)
    stiff = assemble_stiffness(mesh, diffusivity, quad_degree=quad_degree)
    solver = SpdFactorization((mass + 0.5 * delta * stiff).tocsr())
    lhs_explicit = (mass - 0.5 * delta * stiff).tocsr()

    u = problem.initial_vector()
    load = _load_vector(problem, 0.0)
    out = np.zeros((len(snapshot_times), mesh.num_nodes))
    if 0 in snap_steps:
        out[snap_steps[0]] = u
    for k in range(n_steps):
        load_next = _load_vector(problem, (k + 1) * delta)
        rhs = lhs_explicit @ u + 0.5 * delta * (load + load_next)
        u = solver.solve(rhs)
        load = load_next
        if k + 1 in snap_steps:
            out[snap_steps[k + 1]] = u
    return out


def stability_probe(
    operator: ParametricOperator,
    problem: ProblemSpec,
    delta_large: float,
    final_time: Optional[float] = None,
) -> StabilityReport:
    """Run with a deliberately large time step and record max-norm history."""
    norms, times = [], []

    def monitor(k, t, u_mat):
        norms.append(float(np.max(np.abs(u_mat))))
        times.append(t)

    semi_implicit_solve(
        operator, problem, delta_large, final_time=final_time, monitor=monitor
    )
    return StabilityReport(times=np.array(times), max_norms=np.array(norms))
