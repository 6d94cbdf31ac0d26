"""Quick numerical self-test run by ``phasefrac check``.

Each check returns ``(passed, detail)``; none takes more than a second or two.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, NamedTuple

import numpy as np

from .constitutive import (MaterialParams, SplitModel, Strain2, apply_itcbc, degradation,
                           elastic_energy, regularized_stress, split_energy,
                           stress_and_tangent_mandel)
from .displacement import BoundaryConditions, DirichletBC, assemble_residual, dirichlet_dofs
from .mesh import build_structured_mesh
from .mmpde import MetricField, meshing_energy, vertex_velocities
from .phase_field import assemble_phase_system, solve_phase

MAT = MaterialParams(lam=121.15, mu=80.77, g_c=2.7e-3, l=0.0075)


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _random_strains(rng, n, scale=1e-2):
    return Strain2(*(scale * rng.standard_normal(n) for _ in range(3)))


def check_split_sum(rng) -> tuple[bool, str]:
    eps = _random_strains(rng, 1000)
    psi = elastic_energy(eps, MAT)
    worst = 0.0
    for model in SplitModel:
        s = split_energy(eps, model, MAT)
        worst = max(worst, float(np.max(np.abs(s.psi_act + s.psi_pas - psi) / psi)))
    return worst <= 1e-12, f"max relative error {worst:.2e}"


def check_stress_energy(rng) -> tuple[bool, str]:
    worst = 0.0
    h = 1e-7
    for model in SplitModel:
        eps = _random_strains(rng, 50)
        s = split_energy(eps, model, MAT)
        for comp, factor in (("xx", 1.0), ("yy", 1.0), ("xy", 0.5)):
            up = eps._replace(**{comp: getattr(eps, comp) + h})
            dn = eps._replace(**{comp: getattr(eps, comp) - h})
            for part in ("psi_act", "psi_pas"):
                fd = (getattr(split_energy(up, model, MAT), part)
                      - getattr(split_energy(dn, model, MAT), part)) / (2 * h)
                sig = s.sigma_act if part == "psi_act" else s.sigma_pas
                ref = np.max(np.abs(np.stack(s.sigma_act + s.sigma_pas)), axis=0)
                worst = max(worst, float(np.max(np.abs(factor * fd - getattr(sig, comp)) / ref)))
    return worst <= 1e-6, f"max relative error {worst:.2e}"


def check_tangent(rng) -> tuple[bool, str]:
    worst = 0.0
    h = 1e-8
    for model in SplitModel:
        eps = _random_strains(rng, 20)
        d = rng.uniform(0, 1, 20)
        _, C = stress_and_tangent_mandel(eps, d, model, MAT, d_cr=0.3)
        e = eps.mandel()
        for j in range(3):
            ep, em = e.copy(), e.copy()
            ep[:, j] += h
            em[:, j] -= h
            sp, _ = stress_and_tangent_mandel(Strain2.from_mandel(ep), d, model, MAT, 0.3)
            sm, _ = stress_and_tangent_mandel(Strain2.from_mandel(em), d, model, MAT, 0.3)
            fd = (sp - sm) / (2 * h)
            worst = max(worst, float(np.max(np.abs(fd - C[:, :, j]))
                                     / np.max(np.abs(C))))
    return worst <= 1e-6, f"max relative error {worst:.2e}"


def check_itcbc_zero_stress(rng) -> tuple[bool, str]:
    mat = dataclasses.replace(MAT, k_l=0.0)
    eps = _random_strains(rng, 200)
    d = np.zeros(200)
    worst = 0.0
    for model in SplitModel:
        s = apply_itcbc(split_energy(eps, model, mat), d, 0.4)
        g = degradation(d, mat)
        for comp in range(3):
            worst = max(worst, float(np.max(np.abs(g * s.sigma_act[comp] + s.sigma_pas[comp]))))
    return worst == 0.0, f"max stress {worst:.2e}"


def check_patch_test(rng) -> tuple[bool, str]:
    mesh = build_structured_mesh(3, 3)
    interior = mesh.boundary_markers == 0
    mesh = mesh.with_vertices(mesh.vertices + interior[:, None] * rng.uniform(-0.05, 0.05, (mesh.n_vertices, 2)))
    A = np.array([[1e-3, 4e-4], [-2e-4, 2e-3]])
    u = mesh.vertices @ A.T
    bcs = BoundaryConditions()
    R = assemble_residual(mesh, u, np.ones(mesh.n_vertices), "spectral", MAT, bcs=bcs).reshape(-1, 2)
    sig = regularized_stress(Strain2(A[0, 0], A[1, 1], 0.5 * (A[0, 1] + A[1, 0])), 1.0,
                             "spectral", MAT)
    scale = float(np.max(np.abs(sig)))
    err = float(np.max(np.abs(R[interior]))) / scale
    return err <= 1e-10, f"interior residual {err:.2e} (relative)"


def check_phase_unit(rng) -> tuple[bool, str]:
    mesh = build_structured_mesh(6, 5)
    A, b = assemble_phase_system(mesh, np.zeros(mesh.n_vertices), MAT)
    d = solve_phase(A, b).d
    err = float(np.max(np.abs(d - 1.0)))
    return err <= 1e-10, f"max |d - 1| = {err:.2e}"


def check_mesh_velocity(rng) -> tuple[bool, str]:
    base = build_structured_mesh(4, 4)
    interior = base.boundary_markers == 0
    phys = base.with_vertices(base.vertices + interior[:, None]
                              * rng.uniform(-0.03, 0.03, base.vertices.shape))
    def spd(n):
        a = rng.standard_normal((n, 2, 2))
        return a @ np.swapaxes(a, 1, 2) + np.eye(2)
    metric = MetricField(spd(phys.n_vertices), spd(phys.n_elements))
    xi = base.vertices.copy()
    tau = 1e-2
    v = vertex_velocities(phys, xi, metric, tau, project=False)
    P = np.linalg.det(metric.vertex) ** 0.25
    h = 1e-6
    grad = np.zeros_like(xi)
    for j in range(len(xi)):
        for c in range(2):
            xp, xm = xi.copy(), xi.copy()
            xp[j, c] += h
            xm[j, c] -= h
            grad[j, c] = (meshing_energy(phys, xp, metric) - meshing_energy(phys, xm, metric)) / (2 * h)
    ref = -(P / tau)[:, None] * grad
    err = float(np.max(np.abs(v - ref)) / np.max(np.abs(ref)))
    return err <= 1e-5, f"relative error {err:.2e}"


def check_dirichlet(rng) -> tuple[bool, str]:
    mesh = build_structured_mesh(2, 2)
    bcs = BoundaryConditions((DirichletBC("bottom", 1), DirichletBC("top", 1, load_factor=1.0)))
    dofs, vals = dirichlet_dofs(mesh, bcs, 0.25)
    top = set(2 * mesh.side_vertices("top") + 1)
    ok = all((v == 0.25) == (k in top) for k, v in zip(dofs.tolist(), vals.tolist()))
    return ok, f"{len(dofs)} constrained dofs"


CHECKS: dict[str, Callable] = {
    "split energies sum to the elastic energy": check_split_sum,
    "split stresses are energy derivatives": check_stress_energy,
    "consistent tangent matches finite differences": check_tangent,
    "damaged zone carries no stress": check_itcbc_zero_stress,
    "linear patch test": check_patch_test,
    "zero history gives an intact phase field": check_phase_unit,
    "mesh velocities match the energy gradient": check_mesh_velocity,
    "Dirichlet data lands on the right dofs": check_dirichlet,
}


def run_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail))
    return out
