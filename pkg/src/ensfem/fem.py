"""Lagrange P1/P2 elements on triangle meshes: assembly, projection, lifting, error norms.

Coefficient, source, and boundary data are plain callables ``f(x, y, t)`` that
broadcast over numpy arrays ``x`` and ``y`` (scalar ``t``); gradients are
callables returning an ``(fx, fy)`` pair. They are always evaluated directly at
physical quadrature points, never interpolated onto the element space.

Two rules are attached to each space: an assembly rule of order ``2*degree``
(exact for the mass matrix) and a data rule of order ``2*degree + 2`` used for
loads, projections, and error norms, so that measured errors are not polluted
by quadrature error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import sparse
from .mesh import BoundaryTag, Mesh
from .quadrature import QuadratureRule, shape_functions, triangle_rule

#: scalar field on the space-time cylinder, vectorized over x/y arrays
Field = Callable[[np.ndarray, np.ndarray, float], "np.ndarray | float"]
#: gradient field returning an (fx, fy) pair
GradientField = Callable[[np.ndarray, np.ndarray, float], tuple]


def constant_field(value: float) -> Field:
    def f(x, y, t):
        return np.broadcast_to(np.float64(value), np.shape(x))
    return f


zero_field = constant_field(0.0)


@dataclass
class _Tabulation:
    phi: np.ndarray      # (nq, nl) basis values
    grad: np.ndarray     # (nt, nq, nl, 2) physical gradients
    xq: np.ndarray       # (nt, nq) physical quadrature x
    yq: np.ndarray       # (nt, nq)
    weights: np.ndarray  # (nq,)


@dataclass
class FeSpace:
    """Lagrange element space of degree 1 or 2 with deterministic DOF numbering.

    DOFs are the mesh vertices, followed (degree 2) by one DOF per unique edge,
    edges sorted lexicographically by their vertex index pair.
    """

    mesh: Mesh
    degree: int
    dof_count: int
    dof_coords: np.ndarray              # (ndof, 2)
    cell_dofs: np.ndarray               # (nt, nl)
    boundary_dofs: dict[BoundaryTag, np.ndarray]
    assembly_rule: QuadratureRule
    data_rule: QuadratureRule
    areas: np.ndarray = field(repr=False, default=None)
    _inv_jt: np.ndarray = field(repr=False, default=None)
    _tabs: dict[int, _Tabulation] = field(repr=False, default_factory=dict)

    @property
    def interior_dofs(self) -> np.ndarray:
        mask = np.ones(self.dof_count, dtype=bool)
        for dofs in self.boundary_dofs.values():
            mask[dofs] = False
        return np.nonzero(mask)[0]

    def tagged_dofs(self, tags: Iterable[BoundaryTag]) -> np.ndarray:
        """Sorted union of the DOF sets of the given boundary tags."""
        sets = [self.boundary_dofs[t] for t in tags]
        if not sets:
            return np.array([], dtype=np.int64)
        return np.unique(np.concatenate(sets))

    def tabulation(self, rule: QuadratureRule) -> _Tabulation:
        tab = self._tabs.get(rule.order)
        if tab is None:
            phi, dref = shape_functions(self.degree, rule.points)
            grad = np.einsum("tij,qaj->tqai", self._inv_jt, dref)
            verts = self.mesh.vertices[self.mesh.triangles]  # (nt, 3, 2)
            pts = np.einsum("ql,tlk->tqk", rule.points, verts)
            tab = _Tabulation(phi=phi, grad=grad, xq=pts[..., 0], yq=pts[..., 1],
                              weights=rule.weights)
            self._tabs[rule.order] = tab
        return tab


def build_space(mesh: Mesh, degree: int) -> FeSpace:
    """Build the element space; degree must be 1 or 2."""
    if degree not in (1, 2):
        raise ValueError(f"unsupported element degree {degree} (expected 1 or 2)")
    tris = mesh.triangles
    nv = mesh.num_vertices

    if degree == 1:
        cell_dofs = tris.copy()
        dof_coords = mesh.vertices.copy()
        edge_dof: dict[tuple[int, int], int] = {}
    else:
        local_edges = ((0, 1), (1, 2), (2, 0))
        pairs = np.sort(
            np.concatenate([tris[:, [i, j]] for i, j in local_edges], axis=0), axis=1)
        keys = pairs[:, 0] * np.int64(nv) + pairs[:, 1]
        unique_keys, inverse = np.unique(keys, return_inverse=True)
        edges = np.column_stack([unique_keys // nv, unique_keys % nv])
        nt = tris.shape[0]
        cell_dofs = np.concatenate(
            [tris, nv + inverse.reshape(3, nt).T], axis=1).astype(np.int64)
        midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
        dof_coords = np.concatenate([mesh.vertices, midpoints], axis=0)
        edge_dof = {(int(i), int(j)): nv + k for k, (i, j) in enumerate(edges)}

    boundary: dict[BoundaryTag, list[int]] = {tag: [] for tag in BoundaryTag}
    for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        boundary[tag].extend((int(i), int(j)))
        if degree == 2:
            key = (int(i), int(j)) if i < j else (int(j), int(i))
            boundary[tag].append(edge_dof[key])
    boundary_dofs = {tag: np.unique(np.array(ids, dtype=np.int64))
                     for tag, ids in boundary.items() if ids}

    verts = mesh.vertices[tris]
    d1 = verts[:, 1] - verts[:, 0]
    d2 = verts[:, 2] - verts[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 0):
        raise ValueError("mesh contains a non-counterclockwise triangle")
    inv_jt = np.empty((tris.shape[0], 2, 2))  # inverse-transpose of [d1 | d2]
    inv_jt[:, 0, 0] = d2[:, 1]
    inv_jt[:, 0, 1] = -d1[:, 1]
    inv_jt[:, 1, 0] = -d2[:, 0]
    inv_jt[:, 1, 1] = d1[:, 0]
    inv_jt /= det[:, None, None]

    return FeSpace(mesh=mesh, degree=degree, dof_count=dof_coords.shape[0],
                   dof_coords=dof_coords, cell_dofs=cell_dofs,
                   boundary_dofs=boundary_dofs,
                   assembly_rule=triangle_rule(2 * degree),
                   data_rule=triangle_rule(2 * degree + 2),
                   areas=0.5 * det, _inv_jt=inv_jt)


def _evaluate(fn: Field, xq: np.ndarray, yq: np.ndarray, t: float) -> np.ndarray:
    vals = np.asarray(fn(xq, yq, float(t)), dtype=float)
    return np.broadcast_to(vals, xq.shape)


def _scatter_matrix(space: FeSpace, local: np.ndarray) -> sp.csr_matrix:
    nl = space.cell_dofs.shape[1]
    rows = np.repeat(space.cell_dofs, nl, axis=1).ravel()
    cols = np.tile(space.cell_dofs, (1, nl)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(space.dof_count, space.dof_count)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def assemble_mass(space: FeSpace) -> sp.csr_matrix:
    """Mass matrix, entry (i, j) = integral of phi_i * phi_j."""
    tab = space.tabulation(space.assembly_rule)
    local_ref = np.einsum("qa,qb,q->ab", tab.phi, tab.phi, tab.weights)
    local = space.areas[:, None, None] * local_ref[None, :, :]
    return _scatter_matrix(space, local)


def assemble_stiffness(space: FeSpace, coeff: Field, t: float) -> sp.csr_matrix:
    """Weighted stiffness matrix, entry (i, j) = integral of coeff * grad phi_i . grad phi_j."""
    tab = space.tabulation(space.assembly_rule)
    c = _evaluate(coeff, tab.xq, tab.yq, t)
    if not np.isfinite(c).all():
        bad = int(np.nonzero(~np.isfinite(c).all(axis=1))[0][0])
        raise ValueError(f"coefficient evaluated non-finite on element {bad} at t={t}")
    local = np.einsum("tqai,tqbi,tq,q,t->tab", tab.grad, tab.grad, c, tab.weights,
                      space.areas, optimize=True)
    return _scatter_matrix(space, local)


def assemble_load(space: FeSpace, f: Field, t: float) -> np.ndarray:
    """Load vector, entry i = integral of f * phi_i (data-rule quadrature)."""
    tab = space.tabulation(space.data_rule)
    fv = _evaluate(f, tab.xq, tab.yq, t)
    if not np.isfinite(fv).all():
        bad = int(np.nonzero(~np.isfinite(fv).all(axis=1))[0][0])
        raise ValueError(f"source evaluated non-finite on element {bad} at t={t}")
    local = np.einsum("tq,qa,q,t->ta", fv, tab.phi, tab.weights, space.areas)
    return np.bincount(space.cell_dofs.ravel(), weights=local.ravel(),
                       minlength=space.dof_count)


def l2_project(space: FeSpace, g: Field, t: float = 0.0) -> np.ndarray:
    """Element of the space whose inner product with every basis function matches g."""
    m = assemble_mass(space)
    b = assemble_load(space, g, t)
    return sparse.spd_factorize(m).solve(b)


def at_quadrature(space: FeSpace, u: np.ndarray) -> np.ndarray:
    """Values of the FE function at the data-rule quadrature points, shape (nt, nq)."""
    tab = space.tabulation(space.data_rule)
    return np.einsum("qa,ta->tq", tab.phi, u[space.cell_dofs])


def integrate(space: FeSpace, u: np.ndarray) -> float:
    """Integral of the FE function over the domain."""
    tab = space.tabulation(space.data_rule)
    uh = at_quadrature(space, u)
    return float(np.einsum("tq,q,t->", uh, tab.weights, space.areas))


def error_l2(space: FeSpace, u: np.ndarray, exact: Field | None, t: float = 0.0,
             rule: QuadratureRule | None = None) -> float:
    """L2 norm of (u_h - exact); pass exact=None for the plain L2 norm of u_h."""
    tab = space.tabulation(rule if rule is not None else space.data_rule)
    d = np.einsum("qa,ta->tq", tab.phi, u[space.cell_dofs])
    if exact is not None:
        d = d - _evaluate(exact, tab.xq, tab.yq, t)
    return float(np.sqrt(np.einsum("tq,q,t->", d * d, tab.weights, space.areas)))


def error_h1_semi(space: FeSpace, u: np.ndarray, exact_gradient: GradientField | None,
                  t: float = 0.0, rule: QuadratureRule | None = None) -> float:
    """H1 seminorm of (u_h - exact); pass exact_gradient=None for |u_h|_H1."""
    tab = space.tabulation(rule if rule is not None else space.data_rule)
    g = np.einsum("tqai,ta->tqi", tab.grad, u[space.cell_dofs])
    if exact_gradient is not None:
        gx, gy = exact_gradient(tab.xq, tab.yq, float(t))
        g = g - np.stack([np.broadcast_to(gx, tab.xq.shape),
                          np.broadcast_to(gy, tab.xq.shape)], axis=-1)
    sq = g[..., 0] ** 2 + g[..., 1] ** 2
    return float(np.sqrt(np.einsum("tq,q,t->", sq, tab.weights, space.areas)))


def l2_norm(space: FeSpace, u: np.ndarray) -> float:
    return error_l2(space, u, None)


def h1_semi_norm(space: FeSpace, u: np.ndarray) -> float:
    return error_h1_semi(space, u, None)


class DirichletConstraint:
    """Symmetric elimination of tagged boundary DOFs from one assembled system.

    The constrained matrix keeps the full dimension: tagged rows and columns are
    zeroed with a unit diagonal, so it stays SPD, and the dropped couplings are
    moved into each right-hand-side column by `lift`.
    """

    def __init__(self, matrix: sp.csr_matrix, space: FeSpace,
                 tags: Sequence[BoundaryTag]):
        self.space = space
        self.bdofs = space.tagged_dofs(tags)
        n = space.dof_count
        free = np.ones(n)
        free[self.bdofs] = 0.0
        pinned = np.zeros(n)
        pinned[self.bdofs] = 1.0
        d_free = sp.diags(free)
        self.coupling = matrix[:, self.bdofs].tocsr()
        self.matrix = (d_free @ matrix @ d_free + sp.diags(pinned)).tocsr()
        self.matrix.sort_indices()

    def boundary_values(self, g: Field, t: float) -> np.ndarray:
        xb = self.space.dof_coords[self.bdofs, 0]
        yb = self.space.dof_coords[self.bdofs, 1]
        return np.broadcast_to(np.asarray(g(xb, yb, float(t)), dtype=float),
                               xb.shape).copy()

    def lift(self, rhs: np.ndarray, gvals: np.ndarray) -> np.ndarray:
        """Move boundary values into the rhs; rhs may be (n,) or (n, J) with (nb, J) gvals."""
        out = rhs - self.coupling @ gvals
        out[self.bdofs] = gvals
        return out


def apply_dirichlet(system: sp.csr_matrix, rhs: np.ndarray, space: FeSpace, g: Field,
                    t: float, tags: Sequence[BoundaryTag]) -> tuple[sp.csr_matrix, np.ndarray]:
    """Pin tagged boundary DOFs to g(., t), returning the constrained system and lifted rhs."""
    constraint = DirichletConstraint(system, space, tags)
    gvals = constraint.boundary_values(g, t)
    if rhs.ndim == 2:
        gvals = np.repeat(gvals[:, None], rhs.shape[1], axis=1)
    return constraint.matrix, constraint.lift(np.asarray(rhs, dtype=float), gvals)
