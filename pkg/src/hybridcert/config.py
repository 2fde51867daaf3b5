"""Run configuration: strict JSON parsing with explicit defaults."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any

from .conditions import CertificateTemplate
from .hybridsim import SimOptions
from .model import HybridSystem, rimless_wheel
from .sdpsolve import SolverOptions

SCHEMA_VERSION = 1
PRESETS = ("rimless-wheel",)


class ConfigError(ValueError):
    pass


def _strict(cls, d: Any, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class RimlessWheelParams:
    alpha: float = math.pi / 8
    gamma: float = 0.08
    g_over_l: float = 1.0
    taylor_order: int = 3
    b_coeffs: tuple[float, ...] | None = None
    epsilon: float = 1e-3
    energy_max: float | None = None
    top_speed_ratio: float = 1.3

    def build(self) -> HybridSystem:
        return rimless_wheel(
            alpha=self.alpha, gamma=self.gamma, g_over_l=self.g_over_l, taylor_order=self.taylor_order,
            b_coeffs=self.b_coeffs, epsilon=self.epsilon, energy_max=self.energy_max,
            top_speed_ratio=self.top_speed_ratio,
        )

    def expanded(self) -> "RimlessWheelParams":
        """All derived parameters (speed bound, energy cap) made explicit."""
        p = self.build().params
        return dataclasses.replace(self, b_coeffs=tuple(p["b_coeffs"]), energy_max=p["energy_max"])


@dataclass(frozen=True)
class SystemConfig:
    preset: str | None = "rimless-wheel"
    params: dict = field(default_factory=dict)
    definition: dict | None = None

    def __post_init__(self):
        if (self.preset is None) == (self.definition is None):
            raise ValueError("give exactly one of preset or definition")
        if self.preset is not None and self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r} (known: {', '.join(PRESETS)})")

    def preset_params(self) -> RimlessWheelParams:
        p = dict(self.params)
        if p.get("b_coeffs") is not None:
            p["b_coeffs"] = tuple(float(c) for c in p["b_coeffs"])
        return _strict(RimlessWheelParams, p, "system.params")

    def build(self) -> HybridSystem:
        if self.definition is not None:
            try:
                return HybridSystem.from_dict(self.definition)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"system.definition: {exc}") from exc
        try:
            return self.preset_params().build()
        except ValueError as exc:
            raise ConfigError(f"system.params: {exc}") from exc


def _system_dict(d):
    # an inline definition replaces the default preset unless both are given
    if isinstance(d, dict) and d.get("definition") is not None and "preset" not in d:
        return {**d, "preset": None}
    return d


@dataclass(frozen=True)
class CheckConfig:
    samples: int = 10_000
    surface_samples: int = 1_000
    tol: float = 1e-6

    def __post_init__(self):
        if self.samples < 1 or self.surface_samples < 1:
            raise ValueError("sample counts must be positive")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


@dataclass(frozen=True)
class SimulationConfig:
    rtol: float = 1e-10
    atol: float = 1e-10
    method: str = "RK45"
    exact: bool = True
    t_max: float = 20.0
    # None starts on the gait's post-impact fixed point (rimless wheel) or the region centre
    x0: tuple[float, ...] | None = None
    omega_range: tuple[float, float] = (0.32, 0.6)
    n_samples: int = 21
    fd_step: float = 1e-4
    t_budget: float = 50.0
    n_init: int = 0
    initial_states: tuple[tuple[float, ...], ...] = ()
    n_impacts: int = 50
    conv_tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "omega_range", tuple(float(v) for v in self.omega_range))
        object.__setattr__(self, "initial_states", tuple(tuple(float(v) for v in x) for x in self.initial_states))
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if len(self.omega_range) != 2:
            raise ValueError("omega_range needs two values")
        if self.t_max < 0 or self.t_budget <= 0:
            raise ValueError("time limits must be non-negative")
        if self.n_init < 0 or self.n_impacts < 1 or self.n_samples < 2:
            raise ValueError("bad sample counts")

    def sim_options(self) -> SimOptions:
        return SimOptions(rtol=self.rtol, atol=self.atol, method=self.method, exact=self.exact)


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    system: SystemConfig = field(default_factory=SystemConfig)
    template: CertificateTemplate = field(default_factory=CertificateTemplate)
    solver: SolverOptions = field(default_factory=SolverOptions)
    check: CheckConfig = field(default_factory=CheckConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    seed: int = 0
    out: str = "out"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ConfigError(f"unknown key(s) {', '.join(unknown)}")
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        tmpl = d.get("template", {})
        if not isinstance(tmpl, dict):
            raise ConfigError("template: expected an object")
        tmpl = dict(tmpl)
        if "lambda" in tmpl:
            if "lam" in tmpl:
                raise ConfigError("template: give lambda or lam, not both")
            tmpl["lam"] = tmpl.pop("lambda")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return cls(
            schema_version=version,
            system=_strict(SystemConfig, _system_dict(d.get("system", {})), "system"),
            template=_strict(CertificateTemplate, tmpl, "template"),
            solver=_strict(SolverOptions, d.get("solver", {}), "solver"),
            check=_strict(CheckConfig, d.get("check", {}), "check"),
            simulation=_strict(SimulationConfig, d.get("simulation", {}), "simulation"),
            seed=seed,
            out=str(d.get("out", "out")),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(d)

    def expanded(self) -> "RunConfig":
        """Copy with every derived physical parameter written out."""
        if self.system.preset is None:
            return self
        try:
            p = self.system.preset_params().expanded()
        except ValueError as exc:
            raise ConfigError(f"system.params: {exc}") from exc
        params = dataclasses.asdict(p)
        params["b_coeffs"] = list(params["b_coeffs"])
        return dataclasses.replace(self, system=SystemConfig(preset=self.system.preset, params=params))

    def to_dict(self) -> dict:
        d = {
            "schema_version": self.schema_version,
            "system": {"preset": self.system.preset, "params": dict(self.system.params),
                       "definition": self.system.definition},
            "template": self.template.to_dict(),
            "solver": dataclasses.asdict(self.solver),
            "check": dataclasses.asdict(self.check),
            "simulation": dataclasses.asdict(self.simulation),
            "seed": self.seed,
            "out": self.out,
        }
        sim = d["simulation"]
        sim["omega_range"] = list(sim["omega_range"])
        sim["initial_states"] = [list(x) for x in sim["initial_states"]]
        if sim["x0"] is not None:
            sim["x0"] = list(sim["x0"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"
