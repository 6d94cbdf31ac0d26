"""P1 displacement problem: residual, consistent Jacobian, damped Newton and
reaction forces.

Displacements are stored as an (N_v, 2) array; the global dof of vertex j,
component c is ``2 j + c``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import (SQRT2, MaterialParams, SplitModel, Strain2, split_energy,
                           apply_itcbc, stress_and_tangent_mandel)
from .mesh import TriMesh

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DirichletBC:
    """Prescribed component ``component`` (0 = x, 1 = y) on one side.

    The value is ``offset + load_factor * U`` for the current load parameter U.
    """

    side: str
    component: int
    load_factor: float = 0.0
    offset: float = 0.0

    def value(self, U: float) -> float:
        return self.offset + self.load_factor * U


@dataclass(frozen=True)
class TractionBC:
    side: str
    traction: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class BoundaryConditions:
    dirichlet: tuple[DirichletBC, ...] = ()
    traction: tuple[TractionBC, ...] = ()
    body_force: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class NewtonSettings:
    rtol: float = 1e-8
    atol: float = 1e-12
    max_iter: int = 50
    backtrack: float = 0.5
    max_backtracks: int = 10

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


class NewtonReport(NamedTuple):
    converged: bool
    iterations: int
    residuals: list


def dirichlet_dofs(mesh: TriMesh, bcs: BoundaryConditions, U: float = 0.0):
    """Constrained dof indices and their values; later conditions win on overlap."""
    vals: dict[int, float] = {}
    for bc in bcs.dirichlet:
        for j in mesh.side_vertices(bc.side):
            vals[2 * int(j) + bc.component] = bc.value(U)
    dofs = np.array(sorted(vals), dtype=np.int64)
    return dofs, np.array([vals[k] for k in dofs], dtype=float)


def apply_dirichlet(mesh: TriMesh, u, bcs: BoundaryConditions, U: float) -> np.ndarray:
    u = np.array(u, dtype=float).reshape(-1)
    dofs, vals = dirichlet_dofs(mesh, bcs, U)
    u[dofs] = vals
    return u.reshape(-1, 2)


def _bmatrix(grads):
    """Mandel strain-displacement matrices, (N, 3, 6)."""
    n = len(grads)
    B = np.zeros((n, 3, 6))
    gx, gy = grads[..., 0], grads[..., 1]
    B[:, 0, 0::2] = gx
    B[:, 1, 1::2] = gy
    B[:, 2, 0::2] = gy / SQRT2
    B[:, 2, 1::2] = gx / SQRT2
    return B


def _element_dofs(mesh: TriMesh) -> np.ndarray:
    e = mesh.elements
    return np.stack([2 * e, 2 * e + 1], axis=-1).reshape(-1, 6)


def element_strains(mesh: TriMesh, u) -> Strain2:
    """Constant P1 strain of every element."""
    grads, _ = mesh.p1_gradients()
    ue = np.asarray(u, dtype=float).reshape(-1)[_element_dofs(mesh)]
    e = np.einsum("kij,kj->ki", _bmatrix(grads), ue)
    return Strain2.from_mandel(e)


def element_damage(mesh: TriMesh, d) -> np.ndarray:
    """Phase field at element centroids."""
    return np.asarray(d, dtype=float)[mesh.elements].mean(axis=1)


def _external_forces(mesh: TriMesh, bcs: BoundaryConditions, areas) -> np.ndarray:
    f = np.zeros((mesh.n_vertices, 2))
    bx, by = bcs.body_force
    if bx or by:
        w = np.bincount(mesh.elements.ravel(), weights=np.repeat(areas / 3.0, 3),
                        minlength=mesh.n_vertices)
        f += w[:, None] * np.array([bx, by])
    if bcs.traction:
        edges = mesh.boundary_edges()
        for tbc in bcs.traction:
            on = np.zeros(mesh.n_vertices, dtype=bool)
            on[mesh.side_vertices(tbc.side)] = True
            sel = edges[on[edges[:, 0]] & on[edges[:, 1]]]
            L = np.linalg.norm(mesh.vertices[sel[:, 1]] - mesh.vertices[sel[:, 0]], axis=1)
            t = np.asarray(tbc.traction, dtype=float)
            for c in range(2):
                f[:, c] += np.bincount(sel.ravel(), weights=np.repeat(0.5 * L * t[c], 2),
                                       minlength=mesh.n_vertices)
    return f.reshape(-1)


def _internal(mesh, u, d, model, mat, d_cr, need_tangent):
    grads, areas = mesh.p1_gradients()
    B = _bmatrix(grads)
    edofs = _element_dofs(mesh)
    ue = np.asarray(u, dtype=float).reshape(-1)[edofs]
    eps = Strain2.from_mandel(np.einsum("kij,kj->ki", B, ue))
    sig, C = stress_and_tangent_mandel(eps, element_damage(mesh, d), model, mat, d_cr)
    fe = areas[:, None] * np.einsum("kij,ki->kj", B, sig)
    f = np.bincount(edofs.ravel(), weights=fe.ravel(), minlength=2 * mesh.n_vertices)
    if not need_tangent:
        return f, None
    Ke = areas[:, None, None] * np.einsum("kia,kij,kjb->kab", B, C, B)
    n = 2 * mesh.n_vertices
    K = sp.csr_matrix((Ke.ravel(), (np.repeat(edofs, 6, axis=1).ravel(),
                                    np.tile(edofs, (1, 6)).ravel())), shape=(n, n))
    return f, K


def internal_forces(mesh: TriMesh, u, d, model, mat: MaterialParams, d_cr=None) -> np.ndarray:
    """Unconstrained nodal internal forces ``int sigma : eps(phi_i)`` as (N_v, 2)."""
    f, _ = _internal(mesh, u, d, SplitModel.parse(model), mat, d_cr, False)
    return f.reshape(-1, 2)


def assemble_residual(mesh: TriMesh, u, d, model, mat: MaterialParams, d_cr=None,
                      bcs: BoundaryConditions | None = None, U: float = 0.0) -> np.ndarray:
    """Residual of the discrete equilibrium equation.

    Free rows hold ``f_int - f_ext``; constrained rows hold ``u - u_bar``.
    """
    bcs = bcs or BoundaryConditions()
    f, _ = _internal(mesh, u, d, SplitModel.parse(model), mat, d_cr, False)
    R = f - _external_forces(mesh, bcs, mesh.areas())
    dofs, vals = dirichlet_dofs(mesh, bcs, U)
    R[dofs] = np.asarray(u, dtype=float).reshape(-1)[dofs] - vals
    return R


def assemble_jacobian(mesh: TriMesh, u, d, model, mat: MaterialParams, d_cr=None,
                      bcs: BoundaryConditions | None = None):
    """Consistent tangent; constrained rows and columns are replaced by identity."""
    bcs = bcs or BoundaryConditions()
    _, K = _internal(mesh, u, d, SplitModel.parse(model), mat, d_cr, True)
    dofs, _ = dirichlet_dofs(mesh, bcs)
    if dofs.size:
        keep = np.ones(K.shape[0])
        keep[dofs] = 0.0
        D = sp.diags(keep)
        K = (D @ K @ D + sp.diags(1.0 - keep)).tocsr()
    return K


def newton_solve(mesh: TriMesh, u0, d, model, mat: MaterialParams, d_cr=None,
                 bcs: BoundaryConditions | None = None, U: float = 0.0,
                 settings: NewtonSettings = NewtonSettings()):
    """Damped Newton iteration for the displacement at load parameter ``U``.

    ``u0`` is overwritten on the constrained dofs with the Dirichlet values.
    Returns ``(u, NewtonReport)``; an unconverged solve returns the best
    iterate with ``converged=False``.
    """
    model = SplitModel.parse(model)
    bcs = bcs or BoundaryConditions()
    u = apply_dirichlet(mesh, u0, bcs, U).reshape(-1)

    def residual(v):
        return assemble_residual(mesh, v, d, model, mat, d_cr, bcs, U)

    R = residual(u)
    norm = float(np.linalg.norm(R))
    history = [norm]
    norm0 = norm
    for it in range(settings.max_iter + 1):
        if norm <= settings.atol or norm <= settings.rtol * norm0:
            return u.reshape(-1, 2), NewtonReport(True, it, history)
        if it == settings.max_iter:
            break
        J = assemble_jacobian(mesh, u, d, model, mat, d_cr, bcs)
        du = spla.spsolve(J.tocsc(), -R)
        t = 1.0
        for _ in range(settings.max_backtracks + 1):
            trial = u + t * du
            Rt = residual(trial)
            nt = float(np.linalg.norm(Rt))
            if nt < norm:
                break
            t *= settings.backtrack
        else:
            log.debug("line search failed at iteration %d (|R| = %.3e)", it, norm)
            return u.reshape(-1, 2), NewtonReport(False, it, history)
        u, R, norm = trial, Rt, nt
        history.append(norm)
    return u.reshape(-1, 2), NewtonReport(False, settings.max_iter, history)


def reaction_load(mesh: TriMesh, u, d, model, mat: MaterialParams, d_cr=None,
                  side: str = "top") -> tuple[float, float]:
    """Resultant force on one side, summed from nodal internal forces."""
    verts = mesh.side_vertices(side)
    f = internal_forces(mesh, u, d, model, mat, d_cr)
    Fx, Fy = f[verts].sum(axis=0)
    return float(Fx), float(Fy)


def element_active_energy(mesh: TriMesh, u, d, model, mat: MaterialParams,
                          d_cr=None) -> np.ndarray:
    """Active energy density per element, after the critically damaged zone rule."""
    eps = element_strains(mesh, u)
    split = split_energy(eps, model, mat)
    if d_cr is not None:
        split = apply_itcbc(split, element_damage(mesh, d), d_cr)
    return np.asarray(split.psi_act, dtype=float)
