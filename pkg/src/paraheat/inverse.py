"""Tikhonov-regularized Gauss-Newton reconstruction of spline coefficients.

Each iteration linearizes the surrogate around the current iterate and solves
the stacked least-squares problem

    min || [J_U; lam*G] step + [U - data; lam*G theta] ||_2

by a QR decomposition of the (Q+P) x P stacked matrix, follows with a
backtracking line search on the regularized objective, and projects the
iterate back onto the admissible parameter box.  The regularization weight
can be chosen automatically by the Morozov discrepancy principle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .mesh_fem import build_mesh, face_flux_problem, point_evaluation_matrix
from .splines import diffusivity_function
from .stepper import crank_nicolson_solve
from .surrogate import ParametricSurrogate, eval_JU, eval_U

__all__ = [
    "Regularizer",
    "ReconstructionResult",
    "MorozovSelection",
    "IllPosedStepError",
    "MorozovWarning",
    "build_laplacian",
    "gauss_newton",
    "morozov_select",
    "approximation_error",
]


class IllPosedStepError(RuntimeError):
    """The unregularized linearized subproblem is rank deficient."""


class MorozovWarning(UserWarning):
    """Discrepancy-principle bookkeeping could not be satisfied as requested."""


def build_laplacian(grid_dims: Sequence[int]) -> sp.csr_matrix:
    """Discrete Laplacian on the spline-coefficient grid.

    Tensor sum of the 1D second-difference matrix with stencil (-1, 2, -1);
    boundary rows keep the plain tridiagonal form (2 on the diagonal, one -1
    neighbor), so interior rows annihilate constants and the matrix is
    symmetric positive definite.
    """
    dims = [int(m) for m in grid_dims]
    if any(m < 1 for m in dims):
        raise ValueError("grid dimensions must be positive")

    def one_dim(m):
        return sp.diags_array(
            [np.full(m - 1, -1.0), np.full(m, 2.0), np.full(m - 1, -1.0)],
            offsets=[-1, 0, 1],
        ).tocsr()

    total = None
    for axis, m in enumerate(dims):
        factor = one_dim(m)
        for other_axis, other_m in enumerate(dims):
            if other_axis < axis:
                factor = sp.kron(sp.identity(other_m), factor)
            elif other_axis > axis:
                factor = sp.kron(factor, sp.identity(other_m))
        total = factor if total is None else total + factor
    out = total.tocsr()
    out.sort_indices()
    return out


@dataclass(frozen=True)
class Regularizer:
    """Penalty matrix and weight of the Tikhonov term lam^2 ||G theta||^2."""

    matrix: sp.csr_matrix
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("regularization weight must be nonnegative")

    def with_lambda(self, lam: float) -> "Regularizer":
        return replace(self, lam=lam)


@dataclass
class ReconstructionResult:
    """Minimizer, convergence bookkeeping and diagnostics of one inversion."""

    theta: np.ndarray
    residual_history: list            # stacked residual norms, non-increasing
    misfit: float                     # ||U(theta) - data||_2
    lam: float
    iterations: int
    converged: bool
    stop_reason: str
    diagnostics: dict = field(default_factory=dict)


def _objective(surrogate, data, reg, theta):
    resid = eval_U(surrogate, theta) - data
    penalty = reg.lam * (reg.matrix @ theta)
    return resid, penalty, float(resid @ resid + penalty @ penalty)


def _qr_step(stacked: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    """Least-squares step by QR of the stacked (Q+P) x P matrix."""
    q, r = np.linalg.qr(stacked)
    rdiag = np.abs(np.diag(r))
    if rdiag.size and rdiag.min() <= np.finfo(float).eps * max(stacked.shape) * rdiag.max():
        if lam == 0.0:
            raise IllPosedStepError("rank-deficient Gauss-Newton step; add regularization")
        raise IllPosedStepError("stacked least-squares matrix is numerically singular")
    return la.solve_triangular(r, q.T @ rhs, check_finite=False)


def gauss_newton(
    surrogate: ParametricSurrogate,
    data: np.ndarray,
    regularizer: Regularizer,
    theta0: Optional[np.ndarray] = None,
    max_iterations: int = 50,
    step_tol: Optional[float] = None,
    objective_tol: float = 1e-10,
    max_halvings: int = 20,
) -> ReconstructionResult:
    """Box-constrained Gauss-Newton minimization of the Tikhonov functional.

    Starts from the midpoint vector unless ``theta0`` is given.  Trial points
    follow the projection arc of the backtracked step, so every iterate stays
    inside the closed parameter box and accepted steps never increase the
    regularized objective.  When the full step stalls against the box, the
    step is recomputed with the outward-pushing bound-active coordinates
    frozen, falling back to the projected gradient before giving up.
    """
    interval = surrogate.interval
    P = surrogate.num_parameters
    data = np.asarray(data, dtype=float)
    if data.shape != (surrogate.num_measurements,):
        raise ValueError("data vector does not match the surrogate layout")
    if regularizer.matrix.shape != (P, P):
        raise ValueError("regularizer dimension does not match the parameter count")
    if step_tol is None:
        step_tol = 1e-8 * np.sqrt(P)

    theta = interval.clip(theta0 if theta0 is not None else interval.midpoint_vector(P))
    lam = regularizer.lam
    g_dense = (lam * regularizer.matrix).toarray() if lam > 0 else np.zeros((P, P))

    resid, penalty, obj = _objective(surrogate, data, regularizer, theta)
    history = [np.sqrt(obj)]
    stop_reason = "max_iterations"
    converged = False
    iterations = 0

    def backtrack(step, obj):
        alpha = 1.0
        for _ in range(max_halvings + 1):
            trial = interval.clip(theta + alpha * step)
            t_resid, t_penalty, t_obj = _objective(surrogate, data, regularizer, trial)
            if t_obj < obj:
                return trial, t_resid, t_penalty, t_obj
            alpha *= 0.5
        return None

    for _ in range(max_iterations):
        jac = eval_JU(surrogate, theta)
        stacked = np.vstack([jac, g_dense])
        rhs = -np.concatenate([resid, penalty])
        step = _qr_step(stacked, rhs, lam)
        if np.linalg.norm(step) < step_tol:
            stop_reason, converged = "step_tolerance", True
            break

        hit = backtrack(step, obj)
        if hit is None:
            # full step pushes against the box; freeze the offending bounds
            active = ((theta <= interval.lo) & (step < 0)) | (
                (theta >= interval.hi) & (step > 0)
            )
            if active.any() and not active.all():
                free = ~active
                reduced = _qr_step(stacked[:, free], rhs, lam)
                step_red = np.zeros(P)
                step_red[free] = reduced
                hit = backtrack(step_red, obj)
        if hit is None:
            # projected gradient with a Cauchy-type initial scale
            grad = stacked.T @ np.concatenate([resid, penalty])
            curv = float(np.linalg.norm(stacked @ grad) ** 2)
            if curv > 0 and np.linalg.norm(grad) > 0:
                hit = backtrack(-(grad @ grad) / curv * grad, obj)
        if hit is None:
            stop_reason = "line_search_failed"
            break

        trial, t_resid, t_penalty, t_obj = hit
        step_norm = float(np.linalg.norm(trial - theta))
        rel_drop = (obj - t_obj) / obj if obj > 0 else 0.0
        theta, resid, penalty, obj = trial, t_resid, t_penalty, t_obj
        history.append(np.sqrt(obj))
        iterations += 1

        if step_norm < step_tol:
            stop_reason, converged = "step_tolerance", True
            break
        if rel_drop < objective_tol:
            stop_reason, converged = "objective_stalled", True
            break
    else:
        converged = iterations > 0

    return ReconstructionResult(
        theta=theta,
        residual_history=history,
        misfit=float(np.linalg.norm(resid)),
        lam=lam,
        iterations=iterations,
        converged=converged,
        stop_reason=stop_reason,
    )


@dataclass
class MorozovSelection:
    """Outcome of the discrepancy-principle search over the weight lambda."""

    lam: float
    result: ReconstructionResult
    target: float                     # sqrt(Q) * sigma
    probes: list                      # (lambda, misfit) pairs in probe order
    satisfied: bool


def _check_probe_monotonicity(probes, slack=0.05):
    ordered = sorted(probes)
    for (lam_a, mis_a), (lam_b, mis_b) in zip(ordered, ordered[1:]):
        if mis_b < mis_a * (1.0 - slack):
            warnings.warn(
                f"misfit decreased from {mis_a:.3e} (lambda={lam_a:.3e}) to "
                f"{mis_b:.3e} (lambda={lam_b:.3e}); discrepancy curve not monotone",
                MorozovWarning,
                stacklevel=3,
            )
            return False
    return True


def morozov_select(
    surrogate: ParametricSurrogate,
    data: np.ndarray,
    sigma: float,
    regularizer: Regularizer,
    theta0: Optional[np.ndarray] = None,
    log10_range: tuple = (-6.0, 2.0),
    band: tuple = (0.9, 1.1),
    max_probes: int = 24,
    **gn_options,
) -> MorozovSelection:
    """Pick lambda so the converged misfit matches the noise magnitude.

    Walks log10(lambda) down from the large end of the range, warm-starting
    every reconstruction from the previous minimizer (the misfit shrinks along
    the way), then bisects inside the bracketing decade until
    ``||U(theta*) - data||`` lies in ``band * sqrt(Q) * sigma``.  If the whole
    range sits on one side of the band the better endpoint is returned with a
    warning.  The probe sequence is checked for the expected monotone growth
    of the misfit in lambda.
    """
    if sigma <= 0:
        raise ValueError("the discrepancy principle needs a positive noise level")
    target = float(np.sqrt(surrogate.num_measurements) * sigma)
    lo, hi = log10_range
    probes = []
    warm = theta0

    def probe(log_lam, start):
        result = gauss_newton(
            surrogate, data, regularizer.with_lambda(10.0 ** log_lam),
            theta0=start, **gn_options,
        )
        probes.append((10.0 ** log_lam, result.misfit))
        return result

    def finish(result, log_lam, satisfied):
        _check_probe_monotonicity(probes)
        return MorozovSelection(10.0 ** log_lam, result, target, probes, satisfied)

    # downward sweep in whole decades, warm-started
    upper = None                      # (log_lam, result) with misfit above band
    res = None
    log_lam = hi
    while True:
        res = probe(log_lam, warm)
        warm = res.theta
        if band[0] * target <= res.misfit <= band[1] * target:
            return finish(res, log_lam, satisfied=True)
        if res.misfit < band[0] * target:
            break
        upper = (log_lam, res)
        if log_lam <= lo:
            warnings.warn(
                f"misfit {res.misfit:.3e} at the smallest lambda exceeds "
                f"{band[1]:.2f} * sqrt(Q)*sigma = {band[1] * target:.3e}; "
                "the model cannot reach the noise level",
                MorozovWarning,
            )
            return finish(res, log_lam, satisfied=False)
        log_lam = max(log_lam - 1.0, lo)
    if upper is None:
        warnings.warn(
            f"misfit {res.misfit:.3e} at the largest lambda is below "
            f"{band[0]:.2f} * sqrt(Q)*sigma = {band[0] * target:.3e}; "
            "no bracketing interval found",
            MorozovWarning,
        )
        return finish(res, log_lam, satisfied=False)

    # bisect between the last low probe and its upper neighbor
    low_log, high_log = log_lam, upper[0]
    best = (res, low_log) if abs(res.misfit - target) < abs(upper[1].misfit - target) \
        else upper
    for _ in range(max(max_probes - len(probes), 0)):
        mid = 0.5 * (low_log + high_log)
        res_mid = probe(mid, warm)
        warm = res_mid.theta
        if abs(res_mid.misfit - target) < abs(best[0].misfit - target):
            best = (res_mid, mid)
        if band[0] * target <= res_mid.misfit <= band[1] * target:
            return finish(res_mid, mid, satisfied=True)
        if res_mid.misfit < band[0] * target:
            low_log = mid
        else:
            high_log = mid

    warnings.warn(
        "discrepancy bisection exhausted its probe budget; returning the best probe",
        MorozovWarning,
    )
    result, log_best = best
    in_band = band[0] * target <= result.misfit <= band[1] * target
    return finish(result, log_best, satisfied=in_band)


def approximation_error(
    surrogate: ParametricSurrogate,
    theta: np.ndarray,
    fine_nodes_per_side: int,
    fine_delta: float,
    flux_magnitude: Optional[float] = None,
    final_time: Optional[float] = None,
) -> float:
    """Distance between the surrogate prediction and a fine re-simulation.

    Re-solves the forward problem for the fixed diffusivity a(.; theta) with
    Crank-Nicolson on a fine mesh, samples the noiseless boundary values at
    the surrogate's measurement coordinates and returns the Euclidean norm of
    the difference.  Flux magnitude and final time default to the surrogate's
    recorded provenance.
    """
    theta = np.asarray(theta, dtype=float)
    prov = surrogate.provenance
    if flux_magnitude is None:
        flux_magnitude = prov.get("flux_magnitude")
        if flux_magnitude is None:
            raise ValueError("flux magnitude neither given nor recorded in provenance")
    if final_time is None:
        final_time = prov.get("final_time", float(surrogate.times.max()))

    dim = surrogate.points.shape[1]
    mesh = build_mesh(dim, fine_nodes_per_side)
    problem = face_flux_problem(mesh, flux_magnitude, final_time=final_time)
    a_fun = diffusivity_function(surrogate.spline_basis, theta)
    nodal = crank_nicolson_solve(mesh, a_fun, problem, fine_delta, surrogate.times)
    evaluator = point_evaluation_matrix(mesh, surrogate.points)
    fine_values = np.concatenate([evaluator @ row for row in nodal])
    return float(np.linalg.norm(eval_U(surrogate, theta) - fine_values))
