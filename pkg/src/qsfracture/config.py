"""JSON scenario configuration: parsing, validation and re-emission.

A configuration looks like::

    {
      "schema_version": 1,
      "geometry": {"width": 1, "height": 1, "nx": 16, "ny": 16,
                   "dirichlet_sides": ["left", "right", "bottom", "top"]},
      "initial_crack": "edge_slit(bottom, 0.5, 0.25)",
      "program": [{"profile": [[0, 0], [1, 1]], "spatial": "affine(1, 0, 0)"}],
      "lambda": 1.0,
      "m": 1,
      "schedule": {"T": 1.0, "delta": 0.05},
      "policy": {"kind": "TIP+NUCLEATE", "budget": 3},
      "seed": 0,
      "output_dir": "out"
    }

``initial_crack`` is ``"none"``, an ``edge_slit(from_side, position, depth)``
preset (slit perpendicular to ``from_side`` at coordinate ``position`` along
that side, reaching ``depth`` into the domain) or a list of edge ids.
``spatial`` is ``"affine(a, b, c)"`` for ``a x + b y + c``, ``"mode_antisym"``
for ``clip(4 (2 x / width - 1), -1, 1)`` or a list of nodal values.
"""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evolution import BoundaryProgram, Scenario, Schedule, TimeProfile
from .mesh import POLICIES, SIDES, CrackSet, Mesh, build_rect_mesh

SCHEMA_VERSION = 1

_NUMBER = r"\s*([-+0-9.eE]+)\s*"
_AFFINE = re.compile(rf"^affine\({_NUMBER},{_NUMBER},{_NUMBER}\)$")
_SLIT = re.compile(rf"^edge_slit\(\s*(\w+)\s*,{_NUMBER},{_NUMBER}\)$")


class ConfigError(ValueError):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ScenarioConfig:
    width: float = 1.0
    height: float = 1.0
    nx: int = 16
    ny: int = 16
    dirichlet_sides: tuple[str, ...] = SIDES
    initial_crack: object = "none"
    program: list[dict] = field(default_factory=list)
    lam: float = 0.0
    m: int = 1
    T: float = 1.0
    delta: float = 0.05
    policy_kind: str = "TIP+NUCLEATE"
    policy_budget: int = 3
    seed: int = 0
    output_dir: str = "out"

    # ------------------------------------------------------------ builders
    def build_mesh(self) -> Mesh:
        return build_rect_mesh(self.width, self.height, self.nx, self.ny, self.dirichlet_sides)

    def build_initial_crack(self, mesh: Mesh) -> CrackSet:
        return resolve_crack(mesh, self.initial_crack, self)

    def build_program(self, mesh: Mesh) -> BoundaryProgram:
        modes = []
        for k, mode in enumerate(self.program):
            profile = TimeProfile.from_pairs(mode["profile"])
            modes.append((profile, spatial_field(mesh, mode["spatial"], self,
                                                 f"program[{k}].spatial")))
        return BoundaryProgram(modes)

    @property
    def policy(self) -> tuple[str, int]:
        return self.policy_kind, self.policy_budget

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.T, self.delta)

    def scenario(self, mesh: Mesh | None = None) -> Scenario:
        mesh = mesh or self.build_mesh()
        return Scenario(mesh, self.build_initial_crack(mesh), self.build_program(mesh), self.T,
                        self.lam, self.m, self.policy)

    def to_dict(self) -> dict:
        return emit(self)


# ------------------------------------------------------------------ fields
def spatial_field(mesh: Mesh, value, cfg: ScenarioConfig, path: str = "spatial") -> np.ndarray:
    x, y = mesh.vertices.T
    if isinstance(value, str):
        s = value.strip()
        if s == "mode_antisym":
            return np.clip(4.0 * (2.0 * x / cfg.width - 1.0), -1.0, 1.0)
        match = _AFFINE.match(s)
        if match:
            a, b, c = (float(v) for v in match.groups())
            return a * x + b * y + c
        raise ConfigError(path, f"unknown spatial preset {value!r}")
    values = np.asarray(value, dtype=float)
    if values.shape != (mesh.n_vertices,):
        raise ConfigError(path, f"nodal array needs {mesh.n_vertices} values, got {values.size}")
    return values


def edge_slit(mesh: Mesh, from_side: str, position: float, depth: float,
              width: float, height: float, nx: int, ny: int) -> CrackSet:
    """Straight slit along a grid line, perpendicular to ``from_side``."""
    if from_side not in SIDES:
        raise ValueError(f"unknown side {from_side!r}")
    vertical = from_side in ("bottom", "top")
    along, n_along, n_across, across = (width, nx, ny, height) if vertical else (height, ny, nx, width)
    col = int(round(position / along * n_along))
    if not 0 < col < n_along:
        raise ValueError("slit position must lie strictly inside the side")
    k = int(round(depth / across * n_across))
    if not 1 <= k < n_across:
        raise ValueError("slit depth must cover at least one cell and stay inside the domain")
    start = 0 if from_side in ("bottom", "left") else n_across - k
    edges = []
    for j in range(start, start + k):
        if vertical:
            a, b = j * (nx + 1) + col, (j + 1) * (nx + 1) + col
        else:
            a, b = col * (nx + 1) + j, col * (nx + 1) + j + 1
        edges.append(mesh.edge_id(a, b))
    return CrackSet.from_edges(mesh, edges)


def resolve_crack(mesh: Mesh, value, cfg: ScenarioConfig) -> CrackSet:
    if isinstance(value, str):
        s = value.strip()
        if s == "none":
            return CrackSet.empty()
        match = _SLIT.match(s)
        if match:
            side, pos, depth = match.group(1), float(match.group(2)), float(match.group(3))
            try:
                return edge_slit(mesh, side, pos, depth, cfg.width, cfg.height, cfg.nx, cfg.ny)
            except ValueError as exc:
                raise ConfigError("initial_crack", str(exc)) from exc
        raise ConfigError("initial_crack", f"unknown crack preset {value!r}")
    try:
        return CrackSet.from_edges(mesh, [int(e) for e in value])
    except (ValueError, IndexError, TypeError) as exc:
        raise ConfigError("initial_crack", str(exc)) from exc


# ----------------------------------------------------------------- parsing
def _number(data: dict, key: str, path: str, default=None, *, integer=False):
    if key not in data:
        if default is None:
            raise ConfigError(path, "missing required field")
        return default
    v = data[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer:
        if int(v) != v:
            raise ConfigError(path, f"expected an integer, got {v!r}")
        return int(v)
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    return float(v)


def _section(data: dict, key: str) -> dict:
    v = data.get(key, {})
    if not isinstance(v, dict):
        raise ConfigError(key, "expected an object")
    return v


def parse_config_dict(data: dict) -> ScenarioConfig:
    """Validate a decoded JSON document and fill defaults."""
    if not isinstance(data, dict):
        raise ConfigError("$", "top level must be an object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version!r}")
    known = {"schema_version", "geometry", "initial_crack", "program", "lambda", "m",
             "schedule", "policy", "seed", "output_dir"}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown field")

    geo = _section(data, "geometry")
    cfg = ScenarioConfig()
    cfg.width = _number(geo, "width", "geometry.width", 1.0)
    cfg.height = _number(geo, "height", "geometry.height", 1.0)
    cfg.nx = _number(geo, "nx", "geometry.nx", 16, integer=True)
    cfg.ny = _number(geo, "ny", "geometry.ny", 16, integer=True)
    for name in ("width", "height"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"geometry.{name}", "must be positive")
    for name in ("nx", "ny"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"geometry.{name}", "must be >= 1")
    sides = geo.get("dirichlet_sides", list(SIDES))
    if (not isinstance(sides, list) or not sides
            or any(s not in SIDES for s in sides) or len(set(sides)) != len(sides)):
        raise ConfigError("geometry.dirichlet_sides", f"expected a nonempty subset of {list(SIDES)}")
    cfg.dirichlet_sides = tuple(s for s in SIDES if s in sides)

    crack = data.get("initial_crack", "none")
    if isinstance(crack, str):
        if crack.strip() != "none" and not _SLIT.match(crack.strip()):
            raise ConfigError("initial_crack", f"unknown crack preset {crack!r}")
    elif not (isinstance(crack, list) and all(isinstance(e, int) and not isinstance(e, bool)
                                              for e in crack)):
        raise ConfigError("initial_crack", "expected a preset name or a list of edge ids")
    cfg.initial_crack = crack

    program = data.get("program")
    if not isinstance(program, list) or not program:
        raise ConfigError("program", "expected a nonempty list of modes")
    cfg.program = []
    for k, mode in enumerate(program):
        path = f"program[{k}]"
        if not isinstance(mode, dict) or set(mode) != {"profile", "spatial"}:
            raise ConfigError(path, "each mode needs exactly 'profile' and 'spatial'")
        prof = mode["profile"]
        try:
            pairs = [(float(t), float(v)) for t, v in prof]
            TimeProfile.from_pairs(pairs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.profile", f"expected increasing (t, value) pairs: {exc}") from exc
        spatial = mode["spatial"]
        if isinstance(spatial, str):
            s = spatial.strip()
            if s != "mode_antisym" and not _AFFINE.match(s):
                raise ConfigError(f"{path}.spatial", f"unknown spatial preset {spatial!r}")
        elif not isinstance(spatial, list):
            raise ConfigError(f"{path}.spatial", "expected a preset name or nodal values")
        cfg.program.append({"profile": [list(p) for p in pairs], "spatial": copy.deepcopy(spatial)})

    cfg.lam = _number(data, "lambda", "lambda", 0.0)
    if cfg.lam < 0:
        raise ConfigError("lambda", "must be >= 0")
    cfg.m = _number(data, "m", "m", 1, integer=True)
    if cfg.m < 1:
        raise ConfigError("m", "must be >= 1")
    sched = _section(data, "schedule")
    cfg.T = _number(sched, "T", "schedule.T", 1.0)
    cfg.delta = _number(sched, "delta", "schedule.delta", 0.05)
    if cfg.T <= 0:
        raise ConfigError("schedule.T", "must be positive")
    if cfg.delta <= 0:
        raise ConfigError("schedule.delta", "must be positive")
    if cfg.delta > cfg.T:
        raise ConfigError("schedule.delta", "must not exceed T")

    pol = data.get("policy", {})
    if isinstance(pol, str):
        pol = {"kind": pol}
    if not isinstance(pol, dict):
        raise ConfigError("policy", "expected an object")
    kind = str(pol.get("kind", "TIP+NUCLEATE")).upper()
    if kind not in POLICIES:
        raise ConfigError("policy.kind", f"expected one of {list(POLICIES)}")
    cfg.policy_kind = kind
    cfg.policy_budget = _number(pol, "budget", "policy.budget", 1 if kind == "EXHAUSTIVE" else 3,
                                integer=True)
    if cfg.policy_budget < 1:
        raise ConfigError("policy.budget", "must be >= 1")
    cfg.seed = _number(data, "seed", "seed", 0, integer=True)
    out = data.get("output_dir", "out")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir", "expected a nonempty string")
    cfg.output_dir = out

    # presets must resolve on the actual mesh
    mesh = cfg.build_mesh()
    cfg.build_initial_crack(mesh)
    if cfg.build_initial_crack(mesh).n_components > cfg.m:
        raise ConfigError("initial_crack", "has more connected components than m")
    for k, mode in enumerate(cfg.program):
        spatial_field(mesh, mode["spatial"], cfg, f"program[{k}].spatial")
    return cfg


def parse_config(path) -> ScenarioConfig:
    """Read and validate a JSON scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("$", f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from exc
    return parse_config_dict(data)


def emit(cfg: ScenarioConfig) -> dict:
    """JSON-ready document that parses back to an equal configuration."""
    return {
        "schema_version": SCHEMA_VERSION,
        "geometry": {"width": cfg.width, "height": cfg.height, "nx": cfg.nx, "ny": cfg.ny,
                     "dirichlet_sides": list(cfg.dirichlet_sides)},
        "initial_crack": copy.deepcopy(cfg.initial_crack),
        "program": copy.deepcopy(cfg.program),
        "lambda": cfg.lam,
        "m": cfg.m,
        "schedule": {"T": cfg.T, "delta": cfg.delta},
        "policy": {"kind": cfg.policy_kind, "budget": cfg.policy_budget},
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
    }
