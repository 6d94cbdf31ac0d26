"""Linear phase-field equation, history field and induced cracks.

Nodal fields are plain float arrays of length ``mesh.N_v``; the mesh they
live on is carried alongside by the caller (see ``driver.SimulationState``).
"""

from __future__ import annotations

import logging
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import MaterialParams
from .mesh import TriMesh, interpolate_field

log = logging.getLogger(__name__)


class PhaseSolverError(RuntimeError):
    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class CrackSegment(NamedTuple):
    a: tuple[float, float]
    b: tuple[float, float]

    @classmethod
    def make(cls, a, b) -> "CrackSegment":
        a = tuple(map(float, a))
        b = tuple(map(float, b))
        if a == b:
            raise ValueError(f"crack segment endpoints coincide: {a}")
        return cls(a, b)

    @classmethod
    def polar(cls, anchor, length: float, angle_deg: float) -> "CrackSegment":
        """Segment of ``length`` leaving ``anchor`` at a polar angle in degrees."""
        t = np.deg2rad(angle_deg)
        a = np.asarray(anchor, dtype=float)
        return cls.make(a, a + length * np.array([np.cos(t), np.sin(t)]))


class PhaseSolution(NamedTuple):
    d: np.ndarray
    rel_residual: float
    max_clamp: float


def distance_to_segments(points, cracks: Sequence[CrackSegment]) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    dist = np.full(len(pts), np.inf)
    for seg in cracks:
        a = np.asarray(seg.a, dtype=float)
        ab = np.asarray(seg.b, dtype=float) - a
        t = np.clip((pts - a) @ ab / (ab @ ab), 0.0, 1.0)
        dist = np.minimum(dist, np.linalg.norm(pts - a - t[:, None] * ab, axis=1))
    return dist


def induced_crack_history(points, cracks: Sequence[CrackSegment], mat: MaterialParams,
                          B: float = 1e3) -> np.ndarray:
    """``B g_c / (4 l) * max(0, 1 - 2 dist / l)`` evaluated at ``points``."""
    if B <= 0:
        raise ValueError(f"amplification factor must be positive, got {B}")
    pts = np.asarray(points, dtype=float)
    if not cracks:
        return np.zeros(len(pts))
    dist = distance_to_segments(pts, cracks)
    return B * mat.g_c / (4.0 * mat.l) * np.maximum(0.0, 1.0 - 2.0 * dist / mat.l)


def init_history(mesh: TriMesh, cracks: Sequence[CrackSegment], mat: MaterialParams,
                 B: float = 1e3) -> np.ndarray:
    """Initial history field that induces the given cracks in the phase field."""
    for seg in cracks:
        for p in (seg.a, seg.b):
            if not mesh.domain.contains(p, tol=1e-12 * mesh.domain.diameter):
                raise ValueError(f"crack endpoint {p} lies outside the domain")
    return induced_crack_history(mesh.vertices, cracks, mat, B)


def assemble_phase_system(mesh: TriMesh, H, mat: MaterialParams):
    """Matrix and load vector of the discrete phase-field equation.

    The weak form is
    ``int (2 H + g_c/(2l)) d phi + 2 g_c l grad d . grad phi = int g_c/(2l) phi``;
    mass-type integrals use the edge-midpoint rule with H linear on each element.
    """
    H = np.asarray(H, dtype=float)
    if H.shape != (mesh.n_vertices,):
        raise ValueError("history field must hold one value per vertex")
    if not np.all(np.isfinite(H)):
        raise ValueError("history field contains non-finite values")
    grads, areas = mesh.p1_gradients()
    e = mesh.elements
    diff = 2.0 * mat.g_c * mat.l
    K = diff * areas[:, None, None] * np.einsum("kad,kbd->kab", grads, grads)

    c = 2.0 * H[e] + mat.g_c / (2.0 * mat.l)  # (N, 3) nodal coefficient
    # midpoint q_i lies opposite local vertex i; phi = 1/2 on its two end vertices
    cq = 0.5 * (c[:, [1, 2, 0]] + c[:, [2, 0, 1]])
    V = np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=float)
    M = (areas / 12.0)[:, None, None] * np.einsum("kq,qa,qb->kab", cq, V, V)

    Ae = K + M
    rows = np.repeat(e, 3, axis=1).ravel()
    cols = np.tile(e, (1, 3)).ravel()
    n = mesh.n_vertices
    A = sp.csr_matrix((Ae.ravel(), (rows, cols)), shape=(n, n))
    b = np.bincount(e.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=n)
    b *= mat.g_c / (2.0 * mat.l)
    return A, b


def solve_phase(A, b, method: str = "direct", rtol: float = 1e-10) -> PhaseSolution:
    """Solve the assembled phase system and clamp the result to [0, 1]."""
    history: list[float] = []
    bnorm = np.linalg.norm(b)
    if method == "direct":
        d = spla.spsolve(A.tocsc(), b)
    elif method == "cg":
        diag = A.diagonal()
        if np.any(diag <= 0):
            raise PhaseSolverError("non-positive diagonal in phase system")
        P = spla.LinearOperator(A.shape, matvec=lambda x: x / diag)

        def record(xk):
            history.append(float(np.linalg.norm(b - A @ xk)) / bnorm)

        d, info = spla.cg(A, b, rtol=0.1 * rtol, atol=0.0, M=P, maxiter=10 * A.shape[0],
                          callback=record)
        if info != 0:
            raise PhaseSolverError(f"CG did not converge (info={info})", history)
    else:
        raise ValueError(f"unknown linear solver {method!r}")
    # normwise backward error, meaningful even when H makes A badly scaled
    scale = spla.norm(A, np.inf) * np.linalg.norm(d, np.inf) + np.linalg.norm(b, np.inf)
    res = float(np.linalg.norm(A @ d - b, np.inf) / scale) if scale > 0 else 0.0
    history.append(res)
    if not (res <= rtol and np.all(np.isfinite(d))):
        raise PhaseSolverError(f"phase solve residual {res:.3e} exceeds {rtol:.1e}", history)
    clamped = np.clip(d, 0.0, 1.0)
    max_clamp = float(np.max(np.abs(clamped - d))) if d.size else 0.0
    return PhaseSolution(clamped, res, max_clamp)


def element_to_nodes(mesh: TriMesh, values) -> np.ndarray:
    """Area-weighted average of element values onto vertices."""
    areas = mesh.areas()
    e = mesh.elements.ravel()
    w = np.repeat(areas, 3)
    num = np.bincount(e, weights=np.repeat(np.asarray(values, dtype=float), 3) * w,
                      minlength=mesh.n_vertices)
    den = np.bincount(e, weights=w, minlength=mesh.n_vertices)
    return num / den


def update_history(old_mesh: TriMesh, old_H, new_mesh: TriMesh, psi_act) -> np.ndarray:
    """Nodewise maximum of the transferred old history and the new active energy."""
    psi_act = np.asarray(psi_act, dtype=float)
    if np.any(psi_act < 0):
        raise ValueError("active energy density must be non-negative")
    transferred = interpolate_field(old_mesh, old_H, new_mesh)
    return np.maximum(transferred, psi_act)
