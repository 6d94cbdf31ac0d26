"""Quasi-static phase-field brittle fracture on adaptive moving meshes."""

from .constitutive import MaterialParams, SplitModel, Strain2, Stress2
from .mesh import Rect, TriMesh, build_structured_mesh
from .phase_field import CrackSegment
from .mmpde import MovingMeshParams
from .scenarios import ScenarioConfig, builtin_scenario, parse_config, scenario_names
from .driver import RunResult, Simulation, SimulationState, StepRecord, run

__all__ = [
    "CrackSegment", "MaterialParams", "MovingMeshParams", "Rect", "RunResult", "ScenarioConfig",
    "Simulation", "SimulationState", "SplitModel", "StepRecord", "Strain2", "Stress2", "TriMesh",
    "build_structured_mesh", "builtin_scenario", "parse_config", "run", "scenario_names",
]
