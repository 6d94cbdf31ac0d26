"""Staggered quasi-static loop with an adaptive moving mesh.

Each load step solves the phase field and moves the mesh ``kk`` times on
the frozen history, then solves for the displacement at the new load and
updates the history. Fields are transferred between meshes by linear
interpolation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .constitutive import MaterialParams, Stress2, split_energy, apply_itcbc, degradation, von_mises
from .displacement import (element_active_energy, element_damage, element_strains,
                           newton_solve, reaction_load)
from .mesh import TriMesh, build_structured_mesh, interpolate_field, locate_points
from .mmpde import adapt_mesh, mesh_quality, metric_field
from .phase_field import (assemble_phase_system, element_to_nodes, induced_crack_history,
                          init_history, solve_phase, update_history)
from .scenarios import ScenarioConfig

log = logging.getLogger(__name__)


class StepFailure(RuntimeError):
    """The displacement solve failed even after the allowed load-step halvings."""

    def __init__(self, step: int, U: float, residuals):
        super().__init__(f"step {step}: Newton failed at U = {U:.6e} after halving")
        self.step = step
        self.U = U
        self.residuals = list(residuals)


class InvariantViolation(AssertionError):
    pass


@dataclass
class SimulationState:
    """Fields of one load step on the current physical mesh.

    ``H`` is the mechanical history only. The history that drives the phase
    field is ``max(H, seed)`` with the induced-crack seed evaluated exactly
    at the vertex positions, so the seed never diffuses through repeated
    interpolation between moving meshes.
    """

    mesh: TriMesh
    d: np.ndarray
    u: np.ndarray
    H: np.ndarray
    U: float = 0.0
    step: int = 0


class StepRecord(NamedTuple):
    step: int
    U: float
    Fx: float
    Fy: float
    newton_iters: int
    min_d: float
    eq_max: float
    ali_max: float
    min_area: float
    mesh_energy: float
    ode_steps: int
    seconds: float


class Snapshot(NamedTuple):
    step: int
    U: float
    mesh: TriMesh
    d: np.ndarray
    H: np.ndarray
    u: np.ndarray
    von_mises: np.ndarray


@dataclass
class RunResult:
    config: ScenarioConfig
    records: list[StepRecord] = field(default_factory=list)
    snapshots: list[Snapshot] = field(default_factory=list)
    state: SimulationState | None = None
    failure: Exception | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def nodal_von_mises(mesh: TriMesh, u, d, cfg: ScenarioConfig) -> np.ndarray:
    """Von Mises stress of the split (unregularised) Cauchy stress, averaged to vertices."""
    return element_to_nodes(mesh, element_von_mises(mesh, u, d, cfg))


def element_von_mises(mesh: TriMesh, u, d, cfg: ScenarioConfig) -> np.ndarray:
    eps = element_strains(mesh, u)
    mat = cfg.material()
    split = split_energy(eps, cfg.model, mat)
    de = element_damage(mesh, d)
    if cfg.critical_damage is not None:
        split = apply_itcbc(split, de, cfg.critical_damage)
    g = degradation(de, mat)
    sa, sp = split.sigma_act, split.sigma_pas
    sig = Stress2(g * sa.xx + sp.xx, g * sa.yy + sp.yy, g * sa.xy + sp.xy)
    return np.asarray(von_mises(sig), dtype=float)


class Simulation:
    """Stateful runner for one scenario configuration."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.mat: MaterialParams = cfg.material()
        self.model = cfg.model
        self.d_cr = cfg.critical_damage
        self.bcs = cfg.boundary_conditions()
        self.cracks = cfg.crack_segments()
        self.mmpde = cfg.mmpde_params()
        self.reference = build_structured_mesh(cfg.nx, cfg.ny, cfg.domain)

    # fields ---------------------------------------------------------------------

    def seed(self, mesh: TriMesh) -> np.ndarray:
        """History that induces the initial cracks, evaluated at the vertices of ``mesh``."""
        return induced_crack_history(mesh.vertices, self.cracks, self.mat, self.cfg.crack_B)

    def initial_state(self) -> SimulationState:
        mesh = self.reference
        seed = init_history(mesh, self.cracks, self.mat, self.cfg.crack_B)
        d = self.solve_phase(mesh, seed)
        u = np.zeros((mesh.n_vertices, 2))
        return SimulationState(mesh=mesh, d=d, u=u, H=np.zeros(mesh.n_vertices))

    def solve_phase(self, mesh: TriMesh, H) -> np.ndarray:
        A, b = assemble_phase_system(mesh, H, self.mat)
        return solve_phase(A, b, method=self.cfg.linear_solver).d

    def effective_history(self, state: SimulationState) -> np.ndarray:
        return np.maximum(state.H, self.seed(state.mesh))

    def history_on(self, state: SimulationState, mesh: TriMesh) -> np.ndarray:
        """Driving history on ``mesh``: transferred mechanical part, floored by the seed."""
        if mesh is state.mesh:
            H = state.H
        else:
            H = interpolate_field(state.mesh, state.H, mesh)
        return np.maximum(H, self.seed(mesh))

    # displacement with load-step halving ------------------------------------------

    def _solve_u(self, mesh, u0, d, U_from, U_to, depth=0):
        u, rep = newton_solve(mesh, u0, d, self.model, self.mat, self.d_cr, self.bcs, U_to,
                              self.cfg.newton_settings())
        if rep.converged:
            return u, rep.iterations, rep.residuals
        if depth >= self.cfg.max_halvings:
            return None, rep.iterations, rep.residuals
        log.info("Newton failed at U = %.6e; halving the increment", U_to)
        mid = 0.5 * (U_from + U_to)
        u1, it1, r1 = self._solve_u(mesh, u0, d, U_from, mid, depth + 1)
        if u1 is None:
            return None, it1, r1
        u2, it2, r2 = self._solve_u(mesh, u1, d, mid, U_to, depth + 1)
        return u2, rep.iterations + it1 + it2, r2

    # one load step ---------------------------------------------------------------------

    def step(self, state: SimulationState, dU: float) -> tuple[SimulationState, StepRecord]:
        t0 = time.perf_counter()
        cfg = self.cfg
        trial = state.mesh
        ode_steps = 0
        mesh_energy = float("nan")
        kk = cfg.kk if cfg.moving_mesh else 1
        for k in range(kk):
            H_k = self.history_on(state, trial)
            d = self.solve_phase(trial, H_k)
            if cfg.moving_mesh and k < kk - 1:
                trial, report = adapt_mesh(trial, self.reference, d, self.mmpde)
                ode_steps += report.steps
                mesh_energy = report.energy_end

        mesh = trial
        u0 = state.u if mesh is state.mesh else interpolate_field(state.mesh, state.u, mesh)
        U = state.U + dU
        u, iters, residuals = self._solve_u(mesh, u0, d, state.U, U)
        if u is None:
            raise StepFailure(state.step + 1, U, residuals)

        psi = element_active_energy(mesh, u, d, self.model, self.mat, self.d_cr)
        H_new = update_history(state.mesh, state.H, mesh, element_to_nodes(mesh, psi))

        if cfg.check_invariants:
            self._check(state, mesh, H_new, d)

        Fx, Fy = reaction_load(mesh, u, d, self.model, self.mat, self.d_cr, cfg.loaded_side)
        if cfg.moving_mesh:
            q = mesh_quality(mesh, metric_field(mesh, d, cfg.smoothing_passes), self.reference)
            eq_max, ali_max = q.eq_max, q.ali_max
        else:
            eq_max = ali_max = float("nan")
        new = SimulationState(mesh=mesh, d=d, u=u, H=H_new, U=U, step=state.step + 1)
        rec = StepRecord(new.step, U, Fx, Fy, iters, float(d.min()), eq_max, ali_max,
                         float(mesh.areas().min()), mesh_energy, ode_steps,
                         time.perf_counter() - t0)
        return new, rec

    def _check(self, old: SimulationState, mesh: TriMesh, H_new, d):
        mesh.check()
        H_old = old.H if mesh is old.mesh else interpolate_field(old.mesh, old.H, mesh)
        scale = max(float(np.max(H_new)), 1e-300)
        drop = float(np.max(H_old - H_new))
        if drop > 1e-12 * scale:
            raise InvariantViolation(f"history decreased by {drop:.3e} at step {old.step + 1}")
        if not (np.all(d >= 0.0) and np.all(d <= 1.0)):
            raise InvariantViolation("phase field left [0, 1]")

    def snapshot(self, state: SimulationState) -> Snapshot:
        vm = nodal_von_mises(state.mesh, state.u, state.d, self.cfg)
        return Snapshot(state.step, state.U, state.mesh, state.d.copy(), self.effective_history(state),
                        state.u.copy(), vm)

    def run(self, callback: Callable[[SimulationState, StepRecord], None] | None = None,
            state: SimulationState | None = None, raise_on_failure: bool = False,
            on_snapshot: Callable[[Snapshot], None] | None = None) -> RunResult:
        """Run all load steps of the configuration.

        Snapshots are taken of the initial state, every ``snapshot_every``
        steps, at the first step reaching each ``snapshot_U`` value and at the
        last step. They go to ``on_snapshot`` if given, else into the result.
        A displacement failure ends the run; the records so far are kept and
        the exception is stored in ``RunResult.failure``.
        """
        cfg = self.cfg
        state = state or self.initial_state()
        result = RunResult(cfg)

        def emit():
            snap = self.snapshot(state)
            if on_snapshot is None:
                result.snapshots.append(snap)
            else:
                on_snapshot(snap)

        emit()
        wanted_U = sorted(cfg.snapshot_U)
        increments = cfg.increments()[state.step:]
        last_emitted = state.step
        for dU in increments:
            try:
                state, rec = self.step(state, dU)
            except StepFailure as exc:
                log.error("%s", exc)
                result.failure = exc
                if raise_on_failure:
                    raise
                break
            result.records.append(rec)
            log.info("step %d U=%.4e F=(%.4e, %.4e) newton=%d min_d=%.3f %.2fs",
                     rec.step, rec.U, rec.Fx, rec.Fy, rec.newton_iters, rec.min_d, rec.seconds)
            take = bool(cfg.snapshot_every) and rec.step % cfg.snapshot_every == 0
            while wanted_U and rec.U >= wanted_U[0] - 1e-12 * max(abs(wanted_U[0]), 1.0):
                wanted_U.pop(0)
                take = True
            if take:
                emit()
                last_emitted = state.step
            if callback is not None:
                callback(state, rec)
        if state.step != last_emitted:
            emit()
        result.state = state
        return result


def step(state: SimulationState, dU: float, cfg: ScenarioConfig) -> tuple[SimulationState, StepRecord]:
    return Simulation(cfg).step(state, dU)


def run(cfg: ScenarioConfig, **kwargs) -> RunResult:
    return Simulation(cfg).run(**kwargs)


def probe(mesh: TriMesh, field, points) -> np.ndarray:
    """Linear interpolation of a nodal field at arbitrary points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    elems, bary = locate_points(mesh, pts)
    return np.einsum("ij,ij->i", bary, np.asarray(field, dtype=float)[mesh.elements[elems]])
