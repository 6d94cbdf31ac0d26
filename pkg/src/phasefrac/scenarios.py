"""Scenario configuration, the built-in experiments and INI-style config files.

A :class:`ScenarioConfig` is a flat, immutable record. On disk it is an INI
file with one section per concern; list-valued keys hold JSON.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .constitutive import MaterialParams, SplitModel
from .displacement import BoundaryConditions, DirichletBC, NewtonSettings
from .mesh import Rect
from .mmpde import MovingMeshParams
from .phase_field import CrackSegment

BC_TEMPLATES = ("tension", "shear", "experiment_shear")
LINEAR_SOLVERS = ("direct", "cg")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the ``section.key`` path at fault."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    # geometry and mesh
    domain: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    nx: int = 40
    ny: int = 40
    # material (kN, mm)
    lam: float = 121.15
    mu: float = 80.77
    g_c: float = 2.7e-3
    l: float = 0.0075
    k_l: float = 1e-10
    alpha: float = 1e-3
    # model
    split: str = "spectral"
    itcbc: bool = False
    d_cr: float = 0.4
    crack_B: float = 1e3
    cracks: tuple = ()
    # boundary conditions and loading
    bc_template: str = "tension"
    lateral_y_fixed: bool = True
    schedule: tuple = ((None, 1e-5),)
    steps: int | None = None
    # moving mesh
    moving_mesh: bool = True
    kk: int = 5
    tau: float = 1e-2
    horizon: float = 1.0
    ode_tol: float = 1e-3
    rest_tol: float = 1e-3
    smoothing_passes: int = 2
    # solvers
    newton_rtol: float = 1e-8
    newton_atol: float = 1e-12
    newton_max_iter: int = 50
    backtrack: float = 0.5
    max_backtracks: int = 10
    max_halvings: int = 4
    linear_solver: str = "direct"
    check_invariants: bool = True
    # output
    out_dir: str = ""
    snapshot_every: int = 0
    snapshot_U: tuple = ()
    overwrite: bool = False
    mmpde_diagnostics: bool = False

    def __post_init__(self):
        validate(self)

    # derived objects ----------------------------------------------------------

    @property
    def rect(self) -> Rect:
        return Rect(*self.domain)

    def material(self) -> MaterialParams:
        return MaterialParams(lam=self.lam, mu=self.mu, g_c=self.g_c, l=self.l,
                              k_l=self.k_l, alpha=self.alpha)

    @property
    def model(self) -> SplitModel:
        return SplitModel.parse(self.split)

    @property
    def critical_damage(self) -> float | None:
        """``d_cr`` when the critically damaged zone treatment is on, else None."""
        return self.d_cr if self.itcbc else None

    def crack_segments(self) -> list[CrackSegment]:
        return [CrackSegment.make(c[:2], c[2:]) for c in self.cracks]

    def newton_settings(self) -> NewtonSettings:
        return NewtonSettings(self.newton_rtol, self.newton_atol, self.newton_max_iter,
                              self.backtrack, self.max_backtracks)

    def mmpde_params(self) -> MovingMeshParams:
        return MovingMeshParams(tau=self.tau, horizon=self.horizon, ode_tol=self.ode_tol,
                                kk=self.kk, smoothing_passes=self.smoothing_passes,
                                rest_tol=self.rest_tol)

    def boundary_conditions(self) -> BoundaryConditions:
        if self.bc_template == "tension":
            bcs = [DirichletBC("bottom", 0), DirichletBC("bottom", 1),
                   DirichletBC("top", 0), DirichletBC("top", 1, load_factor=1.0)]
        elif self.bc_template == "shear":
            bcs = []
            if self.lateral_y_fixed:
                bcs += [DirichletBC("left", 1), DirichletBC("right", 1)]
            bcs += [DirichletBC("bottom", 0), DirichletBC("bottom", 1),
                    DirichletBC("top", 1), DirichletBC("top", 0, load_factor=1.0)]
        else:  # experiment_shear
            bcs = [DirichletBC("top", 0), DirichletBC("top", 1),
                   DirichletBC("bottom", 1), DirichletBC("bottom", 0, load_factor=1.0)]
        return BoundaryConditions(dirichlet=tuple(bcs))

    @property
    def loaded_side(self) -> str:
        return "bottom" if self.bc_template == "experiment_shear" else "top"

    def total_steps(self) -> int:
        if self.steps is not None:
            return self.steps
        if any(n is None for n, _ in self.schedule):
            raise ConfigError("load.steps", "schedule is open-ended; a step count is required")
        return int(sum(n for n, _ in self.schedule))

    def increments(self) -> list[float]:
        """Load increments for every step of the run."""
        out: list[float] = []
        n_total = self.total_steps()
        for n, du in self.schedule:
            take = n_total - len(out) if n is None else min(n, n_total - len(out))
            out.extend([du] * take)
            if len(out) >= n_total:
                break
        if len(out) < n_total:
            out.extend([self.schedule[-1][1]] * (n_total - len(out)))
        return out

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def validate(cfg: ScenarioConfig) -> None:
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(key, msg)

    x0, y0, x1, y1 = cfg.domain
    need(x1 > x0 and y1 > y0, "domain", f"degenerate rectangle {cfg.domain}")
    need(cfg.nx >= 1 and cfg.ny >= 1, "mesh.nx", "subdivision counts must be >= 1")
    for key in ("mu", "g_c", "l", "alpha"):
        need(getattr(cfg, key) > 0, f"material.{key}", "must be positive")
    need(cfg.lam > -cfg.mu, "material.lam", "must exceed -mu")
    need(0 <= cfg.k_l < cfg.l, "material.k_l", "must satisfy 0 <= k_l << l")
    try:
        SplitModel.parse(cfg.split)
    except ValueError as exc:
        raise ConfigError("model.split", str(exc)) from None
    need(0.0 <= cfg.d_cr <= 1.0, "model.d_cr", f"must lie in [0, 1], got {cfg.d_cr}")
    need(cfg.crack_B > 0, "model.crack_B", "must be positive")
    tol = 1e-12 * math.hypot(x1 - x0, y1 - y0)
    for i, c in enumerate(cfg.cracks):
        need(len(c) == 4, f"cracks.segments[{i}]", "expected [ax, ay, bx, by]")
        need(tuple(c[:2]) != tuple(c[2:]), f"cracks.segments[{i}]", "endpoints coincide")
        for px, py in (c[:2], c[2:]):
            need(x0 - tol <= px <= x1 + tol and y0 - tol <= py <= y1 + tol,
                 f"cracks.segments[{i}]", f"endpoint ({px}, {py}) outside the domain")
    need(cfg.bc_template in BC_TEMPLATES, "scenario.bc_template",
         f"must be one of {BC_TEMPLATES}")
    need(len(cfg.schedule) > 0, "load.schedule", "at least one segment required")
    for i, (n, du) in enumerate(cfg.schedule):
        need(n is None or (int(n) == n and n >= 1), f"load.schedule[{i}]",
             "step count must be >= 1 or null")
        need(math.isfinite(du), f"load.schedule[{i}]", "increment must be finite")
    need(cfg.steps is None or cfg.steps >= 0, "load.steps", "must be >= 0")
    need(cfg.kk >= 1, "mmpde.kk", "must be >= 1")
    need(cfg.tau > 0, "mmpde.tau", "must be positive")
    need(cfg.horizon > 0, "mmpde.horizon", "must be positive")
    need(cfg.ode_tol > 0, "mmpde.ode_tol", "must be positive")
    need(cfg.rest_tol >= 0, "mmpde.rest_tol", "must be >= 0")
    need(cfg.smoothing_passes >= 0, "mmpde.smoothing_passes", "must be >= 0")
    need(cfg.newton_rtol > 0 and cfg.newton_atol > 0, "newton.rtol", "tolerances must be positive")
    need(cfg.newton_max_iter >= 1, "newton.max_iter", "must be >= 1")
    need(0 < cfg.backtrack < 1, "newton.backtrack", "must lie in (0, 1)")
    need(cfg.max_halvings >= 0, "newton.max_halvings", "must be >= 0")
    need(cfg.linear_solver in LINEAR_SOLVERS, "solver.linear", f"must be one of {LINEAR_SOLVERS}")
    need(cfg.snapshot_every >= 0, "output.snapshot_every", "must be >= 0")


# built-in experiments -----------------------------------------------------------------

def _polar(anchor, length, angle_deg):
    seg = CrackSegment.polar(anchor, length, angle_deg)
    return (*seg.a, *seg.b)


# Crack anchors for the multiple-crack plates are reconstructions: only the
# lengths and polar angles are given. The two cracks share an anchor at
# the plate centre (a junction); the five are scattered over the plate.
_TWO_CRACKS = (_polar((0.0, 0.0), 0.6, 9.0), _polar((0.0, 0.0), 0.8, 64.8))
_FIVE_CRACKS = (
    _polar((-0.75, 0.35), 0.3, 30.0),
    _polar((0.15, 0.45), 0.35, 45.0),
    _polar((-0.45, -0.35), 0.35, 17.2),
    _polar((0.25, -0.55), 0.5, 28.6),
    _polar((-0.3, 0.0), 0.5, 9.0),
)

BUILTIN = {
    "tension": dict(
        bc_template="tension", cracks=((0.0, 0.5, 0.5, 0.5),),
        schedule=((500, 1e-5), (None, 1e-6)), steps=1500,
    ),
    "shear": dict(
        bc_template="shear", cracks=((0.0, 0.5, 0.5, 0.5),),
        schedule=((None, 1e-5),), steps=2500,
    ),
    "two_crack": dict(
        domain=(-1.0, -1.0, 1.0, 1.0), nx=50, ny=50, l=0.00375, bc_template="shear",
        cracks=_TWO_CRACKS, schedule=((None, 1e-5),), steps=2000,
    ),
    "five_crack": dict(
        domain=(-1.0, -1.0, 1.0, 1.0), nx=80, ny=80, l=0.00375, g_c=2.7e-4,
        bc_template="shear", cracks=_FIVE_CRACKS, schedule=((None, 1e-5),), steps=2000,
    ),
    "experiment": dict(
        domain=(0.0, 0.0, 120.0, 70.0), nx=40, ny=40,
        lam=4.345e-4, mu=4.829e-5, g_c=1.96e-6, l=1.2,
        bc_template="experiment_shear", itcbc=True, d_cr=0.4,
        cracks=((45.0, 35.0, 75.0, 35.0),), schedule=((None, 5e-3),), steps=1000,
    ),
}


def scenario_names() -> list[str]:
    return list(BUILTIN)


def builtin_scenario(name: str) -> ScenarioConfig:
    """Configuration of one of the built-in experiments."""
    if name not in BUILTIN:
        raise KeyError(f"unknown scenario {name!r}; available: {', '.join(BUILTIN)}")
    return ScenarioConfig(name=name, **BUILTIN[name])


# INI serialisation --------------------------------------------------------------------

# (section, key) -> field name; domain is spread over four keys
_LAYOUT: dict[str, dict[str, str]] = {
    "scenario": {"name": "name", "bc_template": "bc_template", "lateral_y_fixed": "lateral_y_fixed"},
    "domain": {"x0": "domain", "y0": "domain", "x1": "domain", "y1": "domain"},
    "mesh": {"nx": "nx", "ny": "ny"},
    "material": {k: k for k in ("lam", "mu", "g_c", "l", "k_l", "alpha")},
    "model": {"split": "split", "itcbc": "itcbc", "d_cr": "d_cr", "crack_B": "crack_B"},
    "cracks": {"segments": "cracks"},
    "load": {"schedule": "schedule", "steps": "steps"},
    "mmpde": {k: k for k in ("moving_mesh", "kk", "tau", "horizon", "ode_tol", "rest_tol",
                             "smoothing_passes")},
    "newton": {"rtol": "newton_rtol", "atol": "newton_atol", "max_iter": "newton_max_iter",
               "backtrack": "backtrack", "max_backtracks": "max_backtracks",
               "max_halvings": "max_halvings"},
    "solver": {"linear": "linear_solver", "check_invariants": "check_invariants"},
    "output": {k: k for k in ("out_dir", "snapshot_every", "snapshot_U", "overwrite",
                              "mmpde_diagnostics")},
}
_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}
_DOMAIN_INDEX = {"x0": 0, "y0": 1, "x1": 2, "y1": 3}


def _format(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return json.dumps(_listify(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _listify(v):
    return [_listify(x) for x in v] if isinstance(v, (tuple, list)) else v


def _tupleify(v):
    return tuple(_tupleify(x) for x in v) if isinstance(v, list) else v


def _parse_value(field: str, raw: str, key: str):
    typ = str(_FIELD_TYPES[field])
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("on", "true", "yes", "1"):
                return True
            if low in ("off", "false", "no", "0"):
                return False
            raise ValueError(f"expected on/off, got {raw!r}")
        if typ == "int":
            return int(raw)
        if typ == "int | None":
            return None if raw.lower() in ("auto", "none", "") else int(raw)
        if typ == "float":
            return float(raw)
        if typ == "str":
            return raw
        if typ == "tuple":
            value = json.loads(raw)
            if not isinstance(value, list):
                raise ValueError("expected a JSON list")
            return _tupleify(value)
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(key, str(exc)) from None
    raise ConfigError(key, f"unsupported type {typ}")  # pragma: no cover


def to_sections(cfg: ScenarioConfig) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for section, keys in _LAYOUT.items():
        out[section] = {}
        for key, fname in keys.items():
            value = getattr(cfg, fname)
            if section == "domain":
                value = float(value[_DOMAIN_INDEX[key]])
            out[section][key] = _format(value)
    return out


def apply_sections(cfg: ScenarioConfig, sections: Mapping[str, Mapping[str, str]]) -> ScenarioConfig:
    """Overlay string-valued ``{section: {key: value}}`` onto ``cfg``."""
    changes: dict[str, Any] = {}
    domain = list(cfg.domain)
    for section, items in sections.items():
        if section not in _LAYOUT:
            raise ConfigError(section, "unknown section")
        for key, raw in items.items():
            if key not in _LAYOUT[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            fname = _LAYOUT[section][key]
            if section == "domain":
                try:
                    domain[_DOMAIN_INDEX[key]] = float(raw)
                except ValueError:
                    raise ConfigError(f"domain.{key}", f"not a number: {raw!r}") from None
                changes["domain"] = tuple(domain)
            else:
                changes[fname] = _parse_value(fname, str(raw), f"{section}.{key}")
    if "cracks" in changes:
        changes["cracks"] = tuple(tuple(float(x) for x in c) for c in changes["cracks"])
    if "schedule" in changes:
        sched = []
        for i, seg in enumerate(changes["schedule"]):
            if not (isinstance(seg, tuple) and len(seg) == 2):
                raise ConfigError(f"load.schedule[{i}]", "expected [count or null, increment]")
            sched.append((None if seg[0] is None else int(seg[0]), float(seg[1])))
        changes["schedule"] = tuple(sched)
    if "snapshot_U" in changes:
        changes["snapshot_U"] = tuple(float(x) for x in changes["snapshot_U"])
    return cfg.replace(**changes)


def read_config_file(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    text = Path(path).read_text()
    parser.read_string(text, source=str(path))
    return {s: dict(parser.items(s)) for s in parser.sections()}


def parse_config(path=None, overrides: Mapping[str, Mapping[str, str]] | None = None,
                 scenario: str | None = None) -> ScenarioConfig:
    """Layer a config file and overrides over a built-in scenario.

    The base scenario is ``scenario`` if given, else ``scenario.name`` from
    the file. File values apply first, then ``overrides``.
    """
    file_sections = read_config_file(path) if path is not None else {}
    name = scenario or file_sections.get("scenario", {}).get("name")
    if not name:
        raise ConfigError("scenario.name", "missing; name a built-in scenario")
    try:
        cfg = builtin_scenario(name)
    except KeyError as exc:
        raise ConfigError("scenario.name", str(exc.args[0])) from None
    file_sections = {s: dict(v) for s, v in file_sections.items()}
    file_sections.get("scenario", {}).pop("name", None)
    cfg = apply_sections(cfg, file_sections)
    if overrides:
        cfg = apply_sections(cfg, overrides)
    return cfg


def write_config(cfg: ScenarioConfig, path) -> Path:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, items in to_sections(cfg).items():
        parser[section] = items
    path = Path(path)
    with path.open("w") as fh:
        parser.write(fh)
    return path


def config_from_file(path) -> ScenarioConfig:
    """Read back a complete (echoed) configuration."""
    sections = read_config_file(path)
    name = sections.get("scenario", {}).get("name")
    if not name:
        raise ConfigError("scenario.name", "missing")
    base = builtin_scenario(name) if name in BUILTIN else ScenarioConfig(name=name)
    return apply_sections(base, {s: {k: v for k, v in items.items() if (s, k) != ("scenario", "name")}
                                 for s, items in sections.items()})
