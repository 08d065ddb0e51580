"""Structured simplicial meshes on the unit square/cube and P1 finite elements.

Meshes are uniform tensor grids whose cells are split into two triangles
(fixed diagonal) in 2D or six tetrahedra (Kuhn subdivision) in 3D.  All
matrices are assembled in coordinate form and finalized to CSR with duplicates
summed, so the stored sparsity pattern is deterministic; explicit zeros that
arise from cancellation are kept because the nonzero-count diagnostics are
defined on the stored pattern.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Mesh",
    "ProblemSpec",
    "build_mesh",
    "face_flux_problem",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_boundary_load",
    "assemble_interior_load",
    "evaluate_fem",
    "point_evaluation_matrix",
    "compute_eta",
    "simplex_rule",
]

# Permutations driving the Kuhn subdivision of a cube; odd ones get their last
# two tetrahedron vertices swapped to keep all signed volumes positive.
_KUHN_PERMS = tuple(itertools.permutations(range(3)))
_KUHN_ODD = (False, True, True, False, False, True)


@dataclass
class Mesh:
    """Simplicial mesh of the unit square or cube with P1 nodes at grid points.

    Attributes
    ----------
    dim : 2 or 3
    nodes_per_side : grid resolution per axis (number of nodes)
    nodes : (M, dim) vertex coordinates
    elements : (n_elem, dim+1) vertex indices, positively oriented
    boundary_facets : (n_facet, dim) vertex indices, outward oriented
    """

    dim: int
    nodes_per_side: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @cached_property
    def _edge_matrices(self) -> np.ndarray:
        verts = self.nodes[self.elements]            # (n_e, d+1, d)
        return verts[:, 1:, :] - verts[:, :1, :]     # (n_e, d, d)

    @cached_property
    def element_volumes(self) -> np.ndarray:
        """Signed simplex volumes; positive for a well-formed mesh."""
        return np.linalg.det(self._edge_matrices) / math.factorial(self.dim)

    @cached_property
    def element_gradients(self) -> np.ndarray:
        """Constant P1 shape-function gradients, shape (n_elem, dim+1, dim)."""
        inv = np.linalg.inv(self._edge_matrices)     # (n_e, d, d)
        grads = np.empty((self.elements.shape[0], self.dim + 1, self.dim))
        grads[:, 1:, :] = np.transpose(inv, (0, 2, 1))
        grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
        return grads

    @cached_property
    def element_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding boxes of the elements (min, max arrays)."""
        verts = self.nodes[self.elements]
        return verts.min(axis=1), verts.max(axis=1)


@dataclass
class ProblemSpec:
    """Initial/boundary data of the diffusion problem on a given mesh.

    ``f`` and ``g`` are vectorized callables ``(points, t) -> values`` over
    (n, dim) point arrays; ``u0`` is a callable over points or a nodal vector.
    ``rhs_time_linear`` declares that f and g are (at most) linear in t, which
    lets the stepper take exact time averages at the step midpoint.
    """

    mesh: Mesh
    u0: object = None
    f: Optional[Callable] = None
    g: Optional[Callable] = None
    final_time: float = 0.5
    rhs_time_linear: bool = False
    face_fluxes: Optional[dict] = None

    def __post_init__(self):
        if self.final_time <= 0:
            raise ValueError("final_time must be positive")
        if self.u0 is not None and not callable(self.u0):
            u0 = np.asarray(self.u0, dtype=float)
            if u0.shape != (self.mesh.num_nodes,):
                raise ValueError(
                    f"u0 vector has length {u0.shape}, expected ({self.mesh.num_nodes},)"
                )
            self.u0 = u0

    def initial_vector(self) -> np.ndarray:
        """Nodal interpolation of the initial condition."""
        if self.u0 is None:
            return np.zeros(self.mesh.num_nodes)
        if callable(self.u0):
            return np.asarray(self.u0(self.mesh.nodes), dtype=float)
        return self.u0.copy()


def build_mesh(dim: int, nodes_per_side: int) -> Mesh:
    """Uniform simplicial mesh of [0,1]^dim with nodes_per_side^dim nodes.

    Grid squares are split into 2 triangles along the (0,0)-(1,1) diagonal;
    grid cubes into 6 tetrahedra by the Kuhn subdivision.
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if nodes_per_side < 2:
        raise ValueError("nodes_per_side must be at least 2")

    q = nodes_per_side
    c = q - 1
    axes = [np.linspace(0.0, 1.0, q)] * dim

    if dim == 2:
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="xy")
        nodes = np.column_stack([xx.ravel(), yy.ravel()])
        ix, iy = np.meshgrid(np.arange(c), np.arange(c), indexing="xy")
        n00 = (iy * q + ix).ravel()
        n10 = n00 + 1
        n01 = n00 + q
        n11 = n01 + 1
        tri0 = np.column_stack([n00, n10, n11])
        tri1 = np.column_stack([n00, n11, n01])
        elements = np.vstack([tri0, tri1]).astype(np.int64)
    else:
        zz, yy, xx = np.meshgrid(axes[0], axes[1], axes[2], indexing="ij")
        nodes = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
        iz, iy, ix = np.meshgrid(np.arange(c), np.arange(c), np.arange(c), indexing="ij")
        base = ((iz * q + iy) * q + ix).ravel()
        stride = np.array([1, q, q * q])
        tets = []
        for rank, perm in enumerate(_KUHN_PERMS):
            v0 = base
            v1 = v0 + stride[perm[0]]
            v2 = v1 + stride[perm[1]]
            v3 = v2 + stride[perm[2]]
            if _KUHN_ODD[rank]:
                v2, v3 = v3, v2
            tets.append(np.column_stack([v0, v1, v2, v3]))
        # interleave so element id = cell id * 6 + permutation rank
        elements = np.stack(tets, axis=1).reshape(-1, 4).astype(np.int64)

    mesh = Mesh(dim, q, nodes, elements, np.empty((0, dim), dtype=np.int64))
    mesh.boundary_facets = _extract_boundary_facets(elements, dim)
    return mesh


def _extract_boundary_facets(elements: np.ndarray, dim: int) -> np.ndarray:
    """Facets occurring in exactly one element, kept in outward orientation."""
    if dim == 2:
        patterns = [(0, 1), (1, 2), (2, 0)]
    else:
        patterns = [(0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3)]
    faces = np.concatenate([elements[:, p] for p in patterns], axis=0)
    key = np.sort(faces, axis=1)
    order = np.lexsort(key.T[::-1])
    key_sorted = key[order]
    new_group = np.ones(len(key_sorted), dtype=bool)
    new_group[1:] = np.any(key_sorted[1:] != key_sorted[:-1], axis=1)
    group_id = np.cumsum(new_group) - 1
    counts = np.bincount(group_id)
    boundary = counts[group_id] == 1
    return faces[order][boundary]


def face_flux_problem(mesh: Mesh, magnitude: float, final_time: float = 0.5) -> ProblemSpec:
    """Heating configuration with flux -magnitude*t on the face x1=0,
    +magnitude*t on x1=1, insulated elsewhere, and zero initial data."""
    tol = 1e-12

    def g(points, t):
        x1 = points[:, 0]
        out = np.zeros(len(points))
        out[x1 < tol] = -magnitude * t
        out[x1 > 1.0 - tol] = magnitude * t
        return out

    return ProblemSpec(
        mesh=mesh,
        u0=None,
        f=None,
        g=g,
        final_time=final_time,
        rhs_time_linear=True,
        face_fluxes={"x1=0": -magnitude, "x1=1": magnitude},
    )


# ---------------------------------------------------------------------------
# quadrature on reference simplices (barycentric points, weights sum to 1)
# ---------------------------------------------------------------------------

def _orbit(coords: Sequence[float]) -> np.ndarray:
    return np.array(sorted(set(itertools.permutations(coords))), dtype=float)


_TRI_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (_orbit((2 / 3, 1 / 6, 1 / 6)), np.full(3, 1 / 3)),
    4: (
        np.vstack(
            [
                _orbit((0.816847572980459, 0.091576213509771, 0.091576213509771)),
                _orbit((0.108103018168070, 0.445948490915965, 0.445948490915965)),
            ]
        ),
        np.concatenate([np.full(3, 0.109951743655322), np.full(3, 0.223381589678011)]),
    ),
    5: (
        np.vstack(
            [
                np.array([[1 / 3, 1 / 3, 1 / 3]]),
                _orbit((0.059715871789770, 0.470142064105115, 0.470142064105115)),
                _orbit((0.797426985353087, 0.101286507323456, 0.101286507323456)),
            ]
        ),
        np.concatenate(
            [np.array([0.225]), np.full(3, 0.132394152788506), np.full(3, 0.125939180544827)]
        ),
    ),
}

_TET_RULES = {
    1: (np.array([[0.25, 0.25, 0.25, 0.25]]), np.array([1.0])),
    2: (
        _orbit((0.585410196624969, 0.138196601125011, 0.138196601125011, 0.138196601125011)),
        np.full(4, 0.25),
    ),
    5: (
        np.vstack(
            [
                _orbit((0.0673422422100983, 0.3108859192633005, 0.3108859192633005, 0.3108859192633005)),
                _orbit((0.7217942490673264, 0.0927352503108912, 0.0927352503108912, 0.0927352503108912)),
                _orbit((0.4544962958743506, 0.4544962958743506, 0.0455037041256494, 0.0455037041256494)),
            ]
        ),
        np.concatenate(
            [
                np.full(4, 0.1126879257180162),
                np.full(4, 0.0734930431163619),
                np.full(6, 0.0425460207770812),
            ]
        ),
    ),
}


def simplex_rule(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Positive-weight quadrature rule exact to the requested polynomial degree."""
    rules = _TRI_RULES if dim == 2 else _TET_RULES
    for deg in sorted(rules):
        if degree <= deg:
            return rules[deg]
    raise ValueError(f"no simplex rule of degree {degree} in {dim}D")


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _to_csr(rows, cols, vals, m: int) -> sp.csr_matrix:
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()
    mat.sort_indices()
    return mat


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Mass matrix of P1 hat functions, (phi_i, phi_k); symmetric positive definite."""
    d = mesh.dim
    local = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    vols = mesh.element_volumes
    vals = vols[:, None, None] * local
    idx = mesh.elements
    rows = np.broadcast_to(idx[:, :, None], vals.shape)
    cols = np.broadcast_to(idx[:, None, :], vals.shape)
    return _to_csr(rows.ravel(), cols.ravel(), vals.ravel(), mesh.num_nodes)


def _integrated_weights(mesh, weight, elems, quad_degree):
    """Per-element integrals of the weight over the selected elements."""
    points, wq = simplex_rule(mesh.dim, quad_degree)
    verts = mesh.nodes[mesh.elements[elems]]             # (n, d+1, d)
    qpts = np.einsum("qa,nad->nqd", points, verts)       # (n, nq, d)
    flat = qpts.reshape(-1, mesh.dim)
    wvals = np.asarray(weight(flat), dtype=float).reshape(len(elems), len(wq))
    return mesh.element_volumes[elems] * (wvals @ wq)


def assemble_stiffness(
    mesh: Mesh,
    weight: Optional[Callable] = None,
    quad_degree: int = 4,
    support: Optional[tuple] = None,
) -> sp.csr_matrix:
    """Weighted stiffness matrix (weight * grad phi_i, grad phi_k).

    With ``weight=None`` the unit-coefficient matrix is assembled exactly.
    P1 gradients are elementwise constant, so only the weight is integrated,
    with a rule exact to ``quad_degree`` on each simplex.  ``support`` is an
    optional axis-aligned box (min, max) outside which the weight vanishes;
    elements not intersecting it are skipped, and elements whose integrated
    weight is exactly zero are dropped from the stored pattern.
    """
    n_elem = mesh.elements.shape[0]
    if weight is None and support is None:
        elems = np.arange(n_elem)
        w = mesh.element_volumes
    else:
        if support is not None:
            lo, hi = support
            bmin, bmax = mesh.element_bounds
            margin = 1e-12
            inside = np.all(bmax >= np.asarray(lo) - margin, axis=1)
            inside &= np.all(bmin <= np.asarray(hi) + margin, axis=1)
            elems = np.nonzero(inside)[0]
        else:
            elems = np.arange(n_elem)
        if weight is None:
            w = mesh.element_volumes[elems]
        else:
            w = _integrated_weights(mesh, weight, elems, quad_degree)
            keep = w != 0.0
            elems, w = elems[keep], w[keep]

    grads = mesh.element_gradients[elems]
    vals = np.einsum("e,eid,ekd->eik", w, grads, grads)
    idx = mesh.elements[elems]
    rows = np.broadcast_to(idx[:, :, None], vals.shape)
    cols = np.broadcast_to(idx[:, None, :], vals.shape)
    return _to_csr(rows.ravel(), cols.ravel(), vals.ravel(), mesh.num_nodes)


def _facet_rule(dim: int) -> tuple[np.ndarray, np.ndarray]:
    if dim == 2:
        a = 0.5 - 0.5 / np.sqrt(3.0)
        pts = np.array([[1 - a, a], [a, 1 - a]])
        return pts, np.full(2, 0.5)
    return _TRI_RULES[2]


def _facet_measures(mesh: Mesh) -> np.ndarray:
    verts = mesh.nodes[mesh.boundary_facets]
    if mesh.dim == 2:
        return np.linalg.norm(verts[:, 1] - verts[:, 0], axis=1)
    cross = np.cross(verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def assemble_boundary_load(mesh: Mesh, g: Callable, t: float) -> np.ndarray:
    """Boundary-flux load vector with entries <g(t), phi_k> over the boundary."""
    out = np.zeros(mesh.num_nodes)
    if g is None:
        return out
    facets = mesh.boundary_facets
    pts, wq = _facet_rule(mesh.dim)                      # (nq, d), barycentric
    verts = mesh.nodes[facets]                           # (n_f, d, dim)
    qpts = np.einsum("qa,nad->nqd", pts, verts)
    gvals = np.asarray(g(qpts.reshape(-1, mesh.dim), t), dtype=float).reshape(
        len(facets), len(wq)
    )
    measures = _facet_measures(mesh)
    # contribution of facet n to node slot a: |F_n| * sum_q w_q g_nq lambda_aq
    contrib = np.einsum("n,nq,qa->na", measures, gvals * wq, pts)
    np.add.at(out, facets.ravel(), contrib.ravel())
    return out


def assemble_interior_load(mesh: Mesh, f: Callable, t: float) -> np.ndarray:
    """Source load vector with entries (f(t), phi_k), degree-2 quadrature."""
    out = np.zeros(mesh.num_nodes)
    if f is None:
        return out
    pts, wq = simplex_rule(mesh.dim, 2)
    verts = mesh.nodes[mesh.elements]
    qpts = np.einsum("qa,nad->nqd", pts, verts)
    fvals = np.asarray(f(qpts.reshape(-1, mesh.dim), t), dtype=float).reshape(
        len(mesh.elements), len(wq)
    )
    contrib = np.einsum("n,nq,qa->na", mesh.element_volumes, fvals * wq, pts)
    np.add.at(out, mesh.elements.ravel(), contrib.ravel())
    return out


# ---------------------------------------------------------------------------
# point location / evaluation
# ---------------------------------------------------------------------------

def locate_points(mesh: Mesh, points: np.ndarray, tol: float = 1e-9):
    """Containing element and barycentric weights for each point.

    Relies on the structured layout produced by :func:`build_mesh`.  Points
    more than ``tol`` outside the closed unit box raise ``ValueError``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != mesh.dim:
        raise ValueError(f"points must have {mesh.dim} columns")
    if np.any(pts < -tol) or np.any(pts > 1.0 + tol):
        bad = pts[np.any((pts < -tol) | (pts > 1.0 + tol), axis=1)][0]
        raise ValueError(f"point {bad} lies outside the unit domain")
    pts = np.clip(pts, 0.0, 1.0)

    c = mesh.nodes_per_side - 1
    scaled = pts * c
    cell = np.clip(scaled.astype(np.int64), 0, c - 1)
    local = scaled - cell                                # in [0, 1]^dim

    n = len(pts)
    if mesh.dim == 2:
        cell_id = cell[:, 1] * c + cell[:, 0]
        lower = local[:, 0] >= local[:, 1]
        elem = np.where(lower, cell_id, cell_id + c * c)
        lam = np.empty((n, 3))
        x, y = local[:, 0], local[:, 1]
        lam[lower] = np.column_stack([1 - x, x - y, y])[lower]
        lam[~lower] = np.column_stack([1 - y, x, y - x])[~lower]
    else:
        cell_id = (cell[:, 2] * c + cell[:, 1]) * c + cell[:, 0]
        order = np.argsort(-local, axis=1, kind="stable")  # descending coords
        ranks = np.array([_KUHN_PERMS.index(tuple(o)) for o in order])
        srt = np.take_along_axis(local, order, axis=1)
        lam = np.column_stack([1 - srt[:, 0], srt[:, 0] - srt[:, 1],
                               srt[:, 1] - srt[:, 2], srt[:, 2]])
        odd = np.array([_KUHN_ODD[r] for r in ranks])
        lam[odd] = lam[odd][:, [0, 1, 3, 2]]
        elem = cell_id * 6 + ranks
    return elem, lam


def point_evaluation_matrix(mesh: Mesh, points: np.ndarray) -> sp.csr_matrix:
    """Sparse operator mapping nodal vectors to values at the given points."""
    elem, lam = locate_points(mesh, points)
    idx = mesh.elements[elem]
    rows = np.repeat(np.arange(len(elem)), mesh.dim + 1)
    mat = sp.coo_matrix(
        (lam.ravel(), (rows, idx.ravel())), shape=(len(elem), mesh.num_nodes)
    )
    return mat.tocsr()


def evaluate_fem(mesh: Mesh, coefficients: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation of a nodal vector; exact at nodes."""
    coeffs = np.asarray(coefficients, dtype=float)
    if coeffs.shape[0] != mesh.num_nodes:
        raise ValueError("coefficient vector does not match mesh size")
    elem, lam = locate_points(mesh, points)
    return np.einsum("na,na->n", lam, coeffs[mesh.elements[elem]])


def compute_eta(stiffness_list: Sequence[sp.spmatrix], reference: sp.spmatrix) -> float:
    """Sparsity quantity: sum of stored nonzeros over the reference's count."""
    for mat in stiffness_list:
        if mat.shape != reference.shape:
            raise ValueError("stiffness matrices must share the reference dimension")
    return sum(mat.nnz for mat in stiffness_list) / reference.nnz
