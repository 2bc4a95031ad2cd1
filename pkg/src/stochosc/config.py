"""Strict TOML scenario configuration.

Layout::

    [run]       scenario = "<name>"
    [model]     profile, omega_minus, omega_plus, tau, coupling, eps_r, mu, t0
    [grid]      n, dt, cfl, smoothing
    [mc]        n_traj, dt, seed
    [output]    dir, binary
    [scenario]  scenario-specific knobs (scaled times carry a ``_bar`` suffix)

Unknown keys are rejected and every violation is reported with its key path.
"""
from __future__ import annotations

import dataclasses
import hashlib
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .errors import ArtifactIOError, ConfigError
from .grids import GridSpec
from .model import FrequencyProfile, ModelParams

SCENARIOS = ("fp-evolve", "q-state", "entropy", "spectrum", "transitions", "bell", "mc-validate")
NEEDS_GRID = {"fp-evolve", "q-state", "entropy", "spectrum", "transitions", "bell", "mc-validate"}
NEEDS_MC = {"mc-validate"}


@dataclass(frozen=True)
class ModelSection:
    profile: str = "constant"
    omega_minus: float = 1.0
    omega_plus: float = 1.0
    tau: float = 1.0
    coupling: float = 0.0
    eps_r: float | list = 0.0
    mu: float = 0.0
    t0: float = 0.0

    def build(self) -> ModelParams:
        eps = tuple(self.eps_r) if isinstance(self.eps_r, list) else self.eps_r
        prof = FrequencyProfile(self.profile, self.omega_minus, self.omega_plus, self.tau)
        return ModelParams(prof, self.coupling, eps, self.mu, self.t0)


@dataclass(frozen=True)
class GridSection:
    n: int = 256
    dt: float = 0.01
    cfl: float = 0.5
    smoothing: float = 2.0

    def build(self, refine: int = 1) -> GridSpec:
        return GridSpec(self.n, self.dt, self.cfl, self.smoothing).refine(refine)


@dataclass(frozen=True)
class MCSection:
    n_traj: int = 100_000
    dt: float = 1e-3
    seed: int = 0


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    binary: bool = False


@dataclass(frozen=True)
class ScenarioSection:
    t_bar_end: float = 10.0
    record_bar: list = field(default_factory=list)
    oscillator: int = 1
    m: int = 0
    sink_p: float = 0.0
    sink_k: float = 0.0
    method: str = "window"
    tol: float = 1e-4
    t_bar_max: float = 200.0
    lam_ladder: list = field(default_factory=list)
    variant: str = "both"
    q_points: int = 256
    coarse_bins: int = 16
    escape_cap: float = 1e3
    initial_u1: float = 0.0
    initial_u2: float = -1.0     # -1 selects the in-state 1/d^2
    error_bars: bool = False
    n_trace: int = 20


@dataclass(frozen=True)
class RunSection:
    scenario: str = "fp-evolve"


SECTIONS = {"run": RunSection, "model": ModelSection, "grid": GridSection, "mc": MCSection,
            "output": OutputSection, "scenario": ScenarioSection}


@dataclass(frozen=True)
class ScenarioConfig:
    run: RunSection
    model: ModelSection
    grid: GridSection | None
    mc: MCSection | None
    output: OutputSection
    scenario: ScenarioSection

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = getattr(self, name)
            if sec is not None:
                out[name] = dataclasses.asdict(sec)
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None) -> "ScenarioConfig":
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, mc=dataclasses.replace(cfg.mc or MCSection(), seed=int(seed)))
        if out_dir is not None:
            cfg = dataclasses.replace(cfg, output=dataclasses.replace(cfg.output, dir=str(out_dir)))
        return cfg


def _type_ok(value: Any, annotation: str) -> bool:
    if isinstance(value, bool):
        return annotation == "bool"
    if annotation == "float":
        return isinstance(value, (int, float))
    if annotation == "int":
        return isinstance(value, int)
    if annotation == "str":
        return isinstance(value, str)
    if annotation == "list":
        return isinstance(value, list)
    if annotation == "float | list":
        return isinstance(value, (int, float, list))
    return True


def _section(cls, data: Any, path: str, problems: list[str]):
    if not isinstance(data, dict):
        problems.append(f"{path}: expected a table")
        return cls()
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            problems.append(f"{path}.{key}: unknown key")
            continue
        ann = str(known[key].type)
        if not _type_ok(value, ann):
            problems.append(f"{path}.{key}: expected {ann}, got {type(value).__name__}")
            continue
        if ann == "float" and isinstance(value, int):
            value = float(value)
        kwargs[key] = value
    return cls(**kwargs)


def parse_config(data: dict) -> ScenarioConfig:
    problems: list[str] = []
    for key in data:
        if key not in SECTIONS:
            problems.append(f"{key}: unknown section")
    if "run" not in data:
        problems.append("run: missing section")
    run = _section(RunSection, data.get("run", {}), "run", problems)
    if run.scenario not in SCENARIOS:
        problems.append(f"run.scenario: unknown scenario {run.scenario!r}; expected one of {list(SCENARIOS)}")
    if "model" not in data:
        problems.append("model: missing section")
    model = _section(ModelSection, data.get("model", {}), "model", problems)
    grid = None
    if "grid" in data:
        grid = _section(GridSection, data["grid"], "grid", problems)
    elif run.scenario in NEEDS_GRID:
        problems.append(f"grid: missing section (required by {run.scenario})")
    mc = None
    if "mc" in data:
        mc = _section(MCSection, data["mc"], "mc", problems)
    elif run.scenario in NEEDS_MC:
        problems.append(f"mc: missing section (required by {run.scenario})")
    output = _section(OutputSection, data.get("output", {}), "output", problems)
    scen = _section(ScenarioSection, data.get("scenario", {}), "scenario", problems)
    cfg = ScenarioConfig(run, model, grid, mc, output, scen)
    problems += _semantic_problems(cfg)
    if problems:
        raise ConfigError("invalid configuration", problems)
    return cfg


def _semantic_problems(cfg: ScenarioConfig) -> list[str]:
    out: list[str] = []
    m = cfg.model
    try:
        mp = m.build()
    except ConfigError as exc:
        out += exc.problems or [str(exc)]
        mp = None
    if isinstance(m.eps_r, list) and (len(m.eps_r) != 2 or not all(isinstance(x, (int, float)) for x in m.eps_r)):
        out.append("model.eps_r: a list must hold exactly two numbers")
    if mp is not None and m.profile != "constant":
        try:
            mp.check_profile(-50.0 * m.tau, 50.0 * m.tau)
        except ConfigError as exc:
            out.append(f"model.profile: {exc}")
    if cfg.grid is not None:
        try:
            cfg.grid.build()
        except ConfigError as exc:
            out += [p.replace("grid.", "grid.", 1) for p in (exc.problems or [str(exc)])]
    if cfg.mc is not None:
        if cfg.mc.n_traj < 1:
            out.append("mc.n_traj: must be >= 1")
        if not cfg.mc.dt > 0:
            out.append("mc.dt: must be > 0")
        if not 0 <= cfg.mc.seed < 2 ** 64:
            out.append("mc.seed: must be an unsigned 64-bit integer")
    s = cfg.scenario
    if s.oscillator not in (1, 2):
        out.append("scenario.oscillator: must be 1 or 2")
    if s.m < -1:
        out.append("scenario.m: must be >= -1")
    if s.method not in ("window", "march", "eigen"):
        out.append("scenario.method: expected window, march or eigen")
    if s.variant not in ("series", "literal", "both"):
        out.append("scenario.variant: expected series, literal or both")
    if s.sink_p < 0 or s.sink_k < 0:
        out.append("scenario.sink_p/sink_k: must be >= 0")
    if not all(isinstance(x, (int, float)) and x > 0 for x in s.lam_ladder):
        out.append("scenario.lam_ladder: entries must be positive numbers")
    if not all(isinstance(x, (int, float)) for x in s.record_bar):
        out.append("scenario.record_bar: entries must be numbers")
    if s.n_trace < 0:
        out.append("scenario.n_trace: must be >= 0")
    if s.t_bar_end <= cfg.model.t0 * m.omega_plus and cfg.run.scenario != "spectrum":
        out.append("scenario.t_bar_end: must come after the switch-on time model.t0 (scaled)")
    if s.q_points < 16:
        out.append("scenario.q_points: must be >= 16")
    if cfg.grid is not None and s.coarse_bins > 0 and cfg.grid.n % s.coarse_bins:
        out.append("scenario.coarse_bins: must divide grid.n")
    return out


def load_toml(path: str | Path) -> dict:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read config {p}: {exc}") from exc
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {p}: {exc}", [f"<file>: {exc}"]) from exc


def validate_config(path: str | Path) -> ScenarioConfig:
    return parse_config(load_toml(path))
