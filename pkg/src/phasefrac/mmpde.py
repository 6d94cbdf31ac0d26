"""MMPDE moving-mesh adaptation in the xi-formulation.

Given the current physical mesh and a phase field on it, the vertices of the
computational mesh evolve by the gradient flow of the meshing energy

    I_h = sum_K |K| G(J_K, det J_K, M_K),   J_K = E_hat_K E_K^{-1},
    G = 1/3 sqrt(det M) tr(J M^{-1} J^T)^{3/2}
        + 2^{3/2}/3 sqrt(det M) (det J / sqrt(det M))^{3/2},

starting from the reference computational mesh. The new physical mesh is
the image of the reference mesh under the piecewise-linear map that takes
the evolved computational mesh to the current physical mesh.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .mesh import BOTTOM, CORNER, LEFT, RIGHT, TOP, TriMesh, interpolate_field

log = logging.getLogger(__name__)


class MeshTanglingError(RuntimeError):
    pass


@dataclass(frozen=True)
class MovingMeshParams:
    """Controls for one adaptation step.

    ``tau`` scales the pseudo-time of the gradient flow, which is integrated
    over ``horizon`` units. ``ode_tol`` is the local error tolerance as a
    fraction of the smallest reference edge. ``rest_tol`` ends the flow
    early once the remaining energy decrease is negligible (0 disables).
    ``kk`` is the number of phase-solve / move iterations per load step.
    """

    tau: float = 1e-2
    horizon: float = 1.0
    ode_tol: float = 1e-3
    kk: int = 5
    smoothing_passes: int = 2
    max_ode_steps: int = 5000
    rest_tol: float = 1e-3

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.kk < 1:
            raise ValueError(f"kk must be at least 1, got {self.kk}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.rest_tol < 0:
            raise ValueError("rest_tol must be non-negative")


class MetricField(NamedTuple):
    vertex: np.ndarray  # (N_v, 2, 2)
    element: np.ndarray  # (N, 2, 2)


class OdeReport(NamedTuple):
    steps: int
    rejected: int
    energy_start: float
    energy_end: float
    reached: float  # pseudo-time actually reached
    underflow: bool
    energies: tuple = ()  # meshing energy after each accepted step, starting value first


class MeshQuality(NamedTuple):
    eq_max: float
    eq_mean: float
    ali_max: float
    ali_mean: float


# Hessian recovery ---------------------------------------------------------------

def _padded_rings(mesh: TriMesh):
    """One-ring (with the vertex itself) and two-ring stencils as padded arrays."""
    if "two_ring" not in mesh._cache:
        one = mesh.vertex_neighbors()
        rings1 = [np.concatenate([[j], nb]) for j, nb in enumerate(one)]
        rings2 = []
        for j, nb in enumerate(one):
            s = set(nb.tolist())
            for k in nb:
                s.update(one[k].tolist())
            s.discard(j)
            rings2.append(np.concatenate([[j], np.array(sorted(s), dtype=np.int64)]))

        def pad(rings):
            w = max(len(r) for r in rings)
            idx = np.full((len(rings), w), -1, dtype=np.int64)
            for j, r in enumerate(rings):
                idx[j, :len(r)] = r
            return idx

        mesh._cache["two_ring"] = (pad(rings1), pad(rings2))
    return mesh._cache["two_ring"]


def _quadratic_fit(mesh: TriMesh, f, idx, verts):
    """Least-squares quadratic fit around ``verts`` over stencils ``idx[verts]``.

    Returns Hessians (n, 2, 2) and a flag for full-rank stencils.
    """
    st = idx[verts]
    mask = st >= 0
    safe = np.where(mask, st, 0)
    dx = mesh.vertices[safe] - mesh.vertices[verts][:, None, :]
    scale = np.max(np.abs(dx) * mask[..., None], axis=(1, 2))
    scale = np.where(scale > 0, scale, 1.0)
    x = dx[..., 0] / scale[:, None]
    y = dx[..., 1] / scale[:, None]
    A = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=-1) * mask[..., None]
    b = f[safe] * mask
    AtA = np.einsum("nki,nkj->nij", A, A)
    Atb = np.einsum("nki,nk->ni", A, b)
    ev = np.linalg.eigvalsh(AtA)
    ok = ev[:, 0] > 1e-10 * ev[:, -1]
    c = np.zeros((len(verts), 6))
    if np.any(ok):
        c[ok] = np.linalg.solve(AtA[ok], Atb[ok][..., None])[..., 0]
    s2 = scale ** 2
    H = np.empty((len(verts), 2, 2))
    H[:, 0, 0] = 2.0 * c[:, 3] / s2
    H[:, 1, 1] = 2.0 * c[:, 5] / s2
    H[:, 0, 1] = H[:, 1, 0] = c[:, 4] / s2
    H[~ok] = 0.0
    return H, ok


def recover_hessian(mesh: TriMesh, d) -> np.ndarray:
    """Per-vertex Hessian from a least-squares quadratic fit over the one-ring.

    Vertices whose one-ring cannot determine a quadratic use the two-ring;
    if that also fails the Hessian is set to zero and a warning is logged.
    """
    f = np.asarray(d, dtype=float)
    ring1, ring2 = _padded_rings(mesh)
    allv = np.arange(mesh.n_vertices)
    H, ok = _quadratic_fit(mesh, f, ring1, allv)
    bad = allv[~ok]
    if bad.size:
        H2, ok2 = _quadratic_fit(mesh, f, ring2, bad)
        H[bad] = H2
        if not np.all(ok2):
            log.warning("Hessian recovery failed at %d vertices; using zero", int((~ok2).sum()))
    return H


# metric ---------------------------------------------------------------------------

def _abs_sym2(H):
    w, Q = np.linalg.eigh(H)
    return np.einsum("...ij,...j,...kj->...ik", Q, np.abs(w), Q)


def metric_from_hessian(H) -> np.ndarray:
    """``det(I + |H|)^(-1/6) (I + |H|)`` for each symmetric 2x2 Hessian."""
    H = np.asarray(H, dtype=float)
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    A = np.eye(2) + _abs_sym2(H)
    return np.linalg.det(A)[..., None, None] ** (-1.0 / 6.0) * A


def element_average(mesh: TriMesh, vertex_tensors) -> np.ndarray:
    return vertex_tensors[mesh.elements].mean(axis=1)


def smooth_vertex_tensors(mesh: TriMesh, T, passes: int = 1) -> np.ndarray:
    """Repeated patch averaging: vertex -> element mean -> area-weighted vertex mean."""
    areas = mesh.areas()
    e = mesh.elements.ravel()
    w = np.bincount(e, weights=np.repeat(areas, 3), minlength=mesh.n_vertices)
    for _ in range(passes):
        TK = element_average(mesh, T) * areas[:, None, None]
        flat = np.repeat(TK.reshape(-1, 4), 3, axis=0)
        T = np.stack([np.bincount(e, weights=flat[:, c], minlength=mesh.n_vertices)
                      for c in range(4)], axis=1).reshape(-1, 2, 2) / w[:, None, None]
    return T


def metric_field(mesh: TriMesh, d, smoothing_passes: int = 2) -> MetricField:
    """Metric tensor built from the recovered Hessian of the phase field."""
    M = metric_from_hessian(recover_hessian(mesh, d))
    if smoothing_passes:
        M = smooth_vertex_tensors(mesh, M, smoothing_passes)
    return MetricField(M, element_average(mesh, M))


def uniform_metric(mesh: TriMesh, scale: float = 1.0) -> MetricField:
    I = scale * np.eye(2)
    return MetricField(np.broadcast_to(I, (mesh.n_vertices, 2, 2)).copy(),
                       np.broadcast_to(I, (mesh.n_elements, 2, 2)).copy())


# meshing functional -----------------------------------------------------------------

def _inv2(A):
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    inv = np.empty_like(A)
    inv[..., 0, 0] = A[..., 1, 1]
    inv[..., 1, 1] = A[..., 0, 0]
    inv[..., 0, 1] = -A[..., 0, 1]
    inv[..., 1, 0] = -A[..., 1, 0]
    return inv / det[..., None, None], det


def _edge_matrices(vertices, elements):
    p = vertices[elements]
    return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)


def _element_energy_terms(E_inv, detE, Ehat, MK_inv, detM):
    J = Ehat @ E_inv
    detJ = (Ehat[:, 0, 0] * Ehat[:, 1, 1] - Ehat[:, 0, 1] * Ehat[:, 1, 0]) / detE
    tr = np.einsum("kij,kjl,kil->k", J, MK_inv, J)
    return J, detJ, tr


def meshing_energy(phys: TriMesh, comp_vertices, metric: MetricField) -> float:
    """Discrete meshing functional ``I_h`` for physical mesh ``phys``.

    ``comp_vertices`` are the computational coordinates (or a ``TriMesh``).
    Raises ``MeshTanglingError`` if a computational element is inverted.
    """
    xi = comp_vertices.vertices if isinstance(comp_vertices, TriMesh) else np.asarray(comp_vertices)
    E = phys.edge_matrices()
    E_inv, detE = _inv2(E)
    Ehat = _edge_matrices(xi, phys.elements)
    M_inv, detM = _inv2(metric.element)
    J, detJ, tr = _element_energy_terms(E_inv, detE, Ehat, M_inv, detM)
    if np.any(detJ <= 0) or np.any(detE <= 0):
        k = int(np.flatnonzero((detJ <= 0) | (detE <= 0))[0])
        raise MeshTanglingError(f"inverted element {k} in meshing energy")
    sq = np.sqrt(detM)
    G = sq * tr ** 1.5 / 3.0 + 2.0 ** 1.5 / 3.0 * sq * (detJ / sq) ** 1.5
    return float(np.sum(0.5 * detE * G))


class _FlowData(NamedTuple):
    """Per-element constants of the gradient flow on a fixed physical mesh."""

    elements: np.ndarray
    E_inv: tuple  # components (p, q, r, s) of E^{-1}
    detE: np.ndarray
    M_inv: tuple  # components (m00, m01, m11) of M^{-1}
    sqrt_detM: np.ndarray
    detM_q: np.ndarray  # det(M)^{-1/4}
    P: np.ndarray  # vertex scaling det(M_j)^{1/4}
    n_vertices: int


def _precompute(phys: TriMesh, metric: MetricField) -> _FlowData:
    E_inv, detE = _inv2(phys.edge_matrices())
    M_inv, detM = _inv2(metric.element)
    return _FlowData(
        phys.elements,
        tuple(np.ascontiguousarray(E_inv[:, i, j]) for i, j in ((0, 0), (0, 1), (1, 0), (1, 1))),
        detE,
        (M_inv[:, 0, 0].copy(), 0.5 * (M_inv[:, 0, 1] + M_inv[:, 1, 0]), M_inv[:, 1, 1].copy()),
        np.sqrt(detM),
        detM ** -0.25,
        np.linalg.det(metric.vertex) ** 0.25,
        phys.n_vertices,
    )


def _flow(xi, fd: _FlowData, tau: float):
    """Raw velocities and meshing energy at computational coordinates ``xi``.

    Returns ``(None, inf)`` if a computational element is inverted.
    """
    e0, e1, e2 = fd.elements.T
    x0, y0 = xi[e0, 0], xi[e0, 1]
    a, c = xi[e1, 0] - x0, xi[e1, 1] - y0
    b, e = xi[e2, 0] - x0, xi[e2, 1] - y0
    det_hat = a * e - b * c
    if not np.all(det_hat > 0):
        return None, np.inf
    p, q, r, s = fd.E_inv
    m0, m1, m2 = fd.M_inv
    J00, J01 = a * p + b * r, a * q + b * s
    J10, J11 = c * p + e * r, c * q + e * s
    X00, X01 = J00 * m0 + J01 * m1, J00 * m1 + J01 * m2
    X10, X11 = J10 * m0 + J11 * m1, J10 * m1 + J11 * m2
    tr = X00 * J00 + X01 * J01 + X10 * J10 + X11 * J11
    detJ = det_hat / fd.detE
    area = 0.5 * fd.detE
    sq = fd.sqrt_detM
    root_tr = np.sqrt(tr)
    G = sq * tr * root_tr / 3.0 + 2.0 ** 1.5 / 3.0 * sq * (detJ / sq) ** 1.5
    energy = float(np.sum(area * G))

    c1 = area * sq * root_tr
    c2 = area * np.sqrt(2.0) * fd.detM_q * np.sqrt(detJ) * detJ / det_hat
    # rows of V are the velocities of local vertices 1 and 2 (times |K|)
    v1x = -c1 * (p * X00 + q * X01) - c2 * e
    v1y = -c1 * (p * X10 + q * X11) + c2 * b
    v2x = -c1 * (r * X00 + s * X01) + c2 * c
    v2y = -c1 * (r * X10 + s * X11) - c2 * a
    n = fd.n_vertices
    vx = (np.bincount(e1, v1x, n) + np.bincount(e2, v2x, n) - np.bincount(e0, v1x + v2x, n))
    vy = (np.bincount(e1, v1y, n) + np.bincount(e2, v2y, n) - np.bincount(e0, v1y + v2y, n))
    scale = fd.P / tau
    return np.stack([vx * scale, vy * scale], axis=1), energy


def _raw_velocities(phys: TriMesh, xi, metric: MetricField, tau: float):
    """Unprojected vertex velocities; ``None`` if the computational mesh is inverted."""
    vel, _ = _flow(np.asarray(xi, dtype=float), _precompute(phys, metric), tau)
    return vel


def boundary_projection(velocities, mesh: TriMesh) -> np.ndarray:
    """Zero corner velocities and keep only the tangential part on edges."""
    v = np.array(velocities, dtype=float)
    m = mesh.boundary_markers
    v[m == CORNER] = 0.0
    v[(m == BOTTOM) | (m == TOP), 1] = 0.0
    v[(m == LEFT) | (m == RIGHT), 0] = 0.0
    return v


def vertex_velocities(phys: TriMesh, comp_vertices, metric: MetricField, tau: float,
                      project: bool = True) -> np.ndarray:
    """Mesh velocities ``d xi_j / dt = P_j / tau * sum_K |K| v_jK``.

    With ``project=False`` the raw gradient-flow velocities are returned,
    which equal ``-P_j / tau * dI_h / d xi_j``.
    """
    xi = comp_vertices.vertices if isinstance(comp_vertices, TriMesh) else np.asarray(comp_vertices)
    vel = _raw_velocities(phys, xi, metric, tau)
    if vel is None:
        raise MeshTanglingError("computational mesh has inverted elements")
    return boundary_projection(vel, phys) if project else vel


def _snap_boundary(xi, mesh: TriMesh):
    r = mesh.domain
    m = mesh.boundary_markers
    xi[m == BOTTOM, 1] = r.y0
    xi[m == TOP, 1] = r.y1
    xi[m == LEFT, 0] = r.x0
    xi[m == RIGHT, 0] = r.x1
    xi[:, 0] = np.clip(xi[:, 0], r.x0, r.x1)
    xi[:, 1] = np.clip(xi[:, 1], r.y0, r.y1)
    return xi


def _bs23_step(rhs, y, k1, dt, mesh):
    """One Bogacki-Shampine step.

    Returns ``(y_new, k4, I_new, err)``; ``err`` is inf if a stage inverts an
    element.
    """
    fail = (None, None, np.inf, np.inf)
    k2, _ = rhs(y + 0.5 * dt * k1)
    if k2 is None:
        return fail
    k3, _ = rhs(y + 0.75 * dt * k2)
    if k3 is None:
        return fail
    y_new = _snap_boundary(y + dt * (2 / 9 * k1 + 1 / 3 * k2 + 4 / 9 * k3), mesh)
    k4, I_new = rhs(y_new)
    if k4 is None:
        return fail
    err = dt * np.abs(-5 / 72 * k1 + 1 / 12 * k2 + 1 / 9 * k3 - 1 / 8 * k4).max()
    return y_new, k4, I_new, float(err)


def integrate_mesh_ode(phys: TriMesh, ref_comp: TriMesh, metric: MetricField,
                       params: MovingMeshParams = MovingMeshParams()):
    """Integrate the mesh equation over the pseudo-time horizon.

    Uses the Bogacki-Shampine 3(2) pair. A step is rejected and shortened
    when the local error is too large, a computational element inverts, or
    the meshing energy would increase. Integration stops early once the
    flow is at rest: when dissipating at the current rate for the rest of
    the horizon would lower the energy by less than ``rest_tol`` relative.

    Returns ``(new computational mesh, OdeReport)``.
    """
    fd = _precompute(phys, metric)
    edge_len = np.linalg.norm(ref_comp.edge_matrices(), axis=1).min()
    atol = params.ode_tol * edge_len

    def rhs(y):
        v, I = _flow(y, fd, params.tau)
        if v is None:
            return None, I
        return boundary_projection(v, phys), I

    y = np.array(ref_comp.vertices, dtype=float)
    k1, I = rhs(y)
    if k1 is None:
        raise MeshTanglingError("reference computational mesh is inverted")
    I0 = I
    trace = [I]
    t, T = 0.0, params.horizon
    vmax = np.abs(k1).max()
    dt = min(T, 0.1 * edge_len / vmax) if vmax > 0 else T
    steps = rejected = 0
    err_prev = atol
    underflow = False
    while t < T * (1 - 1e-12) and steps < params.max_ode_steps:
        # -dI/dt of the projected flow is tau * sum |k1_j|^2 / P_j
        rate = params.tau * float(np.sum(np.sum(k1 * k1, axis=1) / fd.P))
        if rate * (T - t) <= params.rest_tol * abs(I):
            break
        dt = min(dt, T - t)
        y_new, k4, I_new, err = _bs23_step(rhs, y, k1, dt, phys)
        if err <= atol and I_new <= I + 1e-10 * abs(I):
            t += dt
            y, k1, I = y_new, k4, I_new
            trace.append(I)
            steps += 1
            # PI step-size control keeps stability-limited runs from oscillating
            err = max(err, 1e-10 * atol)
            fac = 0.9 * (atol / err) ** (0.7 / 3) * (err_prev / atol) ** (0.4 / 3)
            dt *= min(2.0, max(0.2, fac))
            err_prev = err
        else:
            rejected += 1
            if np.isfinite(err) and err > atol:
                dt *= max(0.2, 0.9 * (atol / err) ** (1 / 3))
            else:
                dt *= 0.5 if np.isfinite(err) else 0.25
            if dt < 1e-14 * T:
                underflow = True
                log.warning("mesh ODE step size underflow at t=%.3e", t)
                break
    return ref_comp.with_vertices(y), OdeReport(steps, rejected, I0, I, t, underflow, tuple(trace))


def new_physical_mesh(phys: TriMesh, comp_new: TriMesh, ref_comp: TriMesh) -> TriMesh:
    """Image of the reference computational mesh under the map comp_new -> phys."""
    x = interpolate_field(comp_new, phys.vertices, ref_comp)
    x = _snap_boundary(x, phys)
    c = phys.boundary_markers == CORNER
    x[c] = phys.vertices[c]
    mesh = phys.with_vertices(x)
    areas = mesh.signed_areas()
    if np.any(areas <= 0):
        k = int(np.flatnonzero(areas <= 0)[0])
        raise MeshTanglingError(f"new physical mesh tangled at element {k}")
    return mesh


def mesh_quality(phys: TriMesh, metric: MetricField, comp: TriMesh) -> MeshQuality:
    """Equidistribution and alignment ratios (both equal 1 on an M-uniform mesh).

    ``comp`` is the computational mesh paired with ``phys``, usually the
    fixed reference mesh.
    """
    E = phys.edge_matrices()
    Ehat = comp.edge_matrices()
    area = 0.5 * np.linalg.det(E)
    area_c = 0.5 * np.linalg.det(Ehat)
    M = metric.element
    detM = np.linalg.det(M)
    omega_h = np.sum(area * np.sqrt(detM))
    omega_c = np.sum(area_c)
    eq = area * np.sqrt(detM) * omega_c / (omega_h * area_c)
    Ehat_inv, _ = _inv2(Ehat)
    F = E @ Ehat_inv
    A = np.swapaxes(F, 1, 2) @ M @ F
    ali = np.trace(A, axis1=1, axis2=2) / (2.0 * np.sqrt(np.linalg.det(A)))
    return MeshQuality(float(eq.max()), float(eq.mean()), float(ali.max()), float(ali.mean()))


def adapt_mesh(phys: TriMesh, ref_comp: TriMesh, d, params: MovingMeshParams = MovingMeshParams()):
    """One MMPDE adaptation: metric from ``d`` on ``phys``, flow, map back.

    Returns ``(new physical mesh, OdeReport)``.
    """
    metric = metric_field(phys, d, params.smoothing_passes)
    comp_new, report = integrate_mesh_ode(phys, ref_comp, metric, params)
    return new_physical_mesh(phys, comp_new, ref_comp), report
