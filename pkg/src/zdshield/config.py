"""Scenario configuration: dataclasses, JSON round trip, validation and presets."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from typing import Optional

import numpy as np

from .detector import DetectorConfig
from .errors import ConfigError
from .plant import DEFAULT_KI, DEFAULT_KP, PARAM_PRESETS, FourTankParams
from .recovery import DRIFT_CENTERS, FORMS

REFERENCE_KINDS = ("constant", "steps", "sinusoid")
NOISE_KINDS = ("none", "gaussian")
PRESET_PACKAGE = "zdshield.presets"


@dataclass
class ReferenceSpec:
    """Output reference, applied to both outputs.

    ``constant``: ``value``. ``steps``: ``levels[i]`` holds while
    ``t <= times[i]``, the last level afterwards. ``sinusoid``:
    ``offset + amplitude * sin(omega t)``.
    """

    kind: str = "constant"
    value: float = 10.0
    levels: list = field(default_factory=list)
    times: list = field(default_factory=list)
    offset: float = 10.0
    amplitude: float = 1.0
    omega: float = 0.05

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            v = np.full(t.shape, float(self.value))
        elif self.kind == "steps":
            idx = np.searchsorted(np.asarray(self.times, float), t, side="left")
            v = np.asarray(self.levels, float)[idx]
        else:
            v = self.offset + self.amplitude * np.sin(self.omega * t)
        return np.stack([v, v], axis=-1)

    def level_at(self, t: float) -> float:
        """Steady level the attacker designs around at time ``t``."""
        if self.kind == "sinusoid":
            return float(self.offset)
        return float(self(t)[0])

    def minimum(self) -> float:
        if self.kind == "constant":
            return float(self.value)
        if self.kind == "steps":
            return float(min(self.levels)) if self.levels else float("nan")
        return float(self.offset - abs(self.amplitude))

    def problems(self) -> list:
        out = []
        if self.kind not in REFERENCE_KINDS:
            return [f"reference.kind must be one of {REFERENCE_KINDS}"]
        if self.kind == "steps":
            if len(self.levels) != len(self.times) + 1:
                out.append("reference.levels needs exactly one more entry than reference.times")
            if list(self.times) != sorted(self.times):
                out.append("reference.times must be increasing")
        if not self.minimum() > 0:
            out.append("reference must stay strictly positive")
        return out


@dataclass
class NoiseSpec:
    """Measurement noise added to each output at every grid point."""

    kind: str = "none"
    variance: float = 0.0
    seed: int = 0

    def samples(self, n: int, dim: int = 2) -> np.ndarray:
        if self.kind == "none" or self.variance == 0:
            return np.zeros((n, dim))
        rng = np.random.default_rng(self.seed)
        return rng.normal(0.0, np.sqrt(self.variance), size=(n, dim))

    def problems(self) -> list:
        out = []
        if self.kind not in NOISE_KINDS:
            out.append(f"noise.kind must be one of {NOISE_KINDS}")
        if not self.variance >= 0:
            out.append("noise.variance must be non-negative")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            out.append("noise.seed must be a non-negative integer")
        return out


@dataclass
class AttackSpec:
    enabled: bool = True
    t_on: float = 700.0
    t_off: float = 1000.0
    delta0: list = field(default_factory=lambda: [-0.1, -0.1])
    x_star: Optional[list] = None


@dataclass
class RecoverySpec:
    enabled: bool = True
    lam: float = 0.5
    form: str = "attack_matched"
    drift_center: str = "z_star_n"


@dataclass
class ControllerSpec:
    kp: list = field(default_factory=lambda: list(DEFAULT_KP))
    ki: list = field(default_factory=lambda: list(DEFAULT_KI))
    feedback_sign: float = -1.0


@dataclass
class GridSpec:
    t0: float = 0.0
    t_end: float = 1000.0
    dt: float = 0.01


@dataclass
class OutputsSpec:
    csv: bool = True
    svg: bool = True
    metrics: bool = True


@dataclass
class ScenarioConfig:
    """One scenario. ``plant``/``nominal`` are preset names or inline parameter dicts."""

    name: str = "custom"
    plant: object = "four_tank_actual"
    nominal: object = "four_tank_nominal"
    gravity: float = 981.0
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    recovery: RecoverySpec = field(default_factory=RecoverySpec)
    grid: GridSpec = field(default_factory=GridSpec)
    outputs: OutputsSpec = field(default_factory=OutputsSpec)
    engine: str = "auto"

    # -- parameters ------------------------------------------------------
    def _params(self, spec) -> FourTankParams:
        if isinstance(spec, str):
            base = PARAM_PRESETS[spec]
            return base.with_gravity(self.gravity)
        d = dict(spec)
        d.setdefault("gravity", self.gravity)
        return FourTankParams(**d)

    def plant_params(self) -> FourTankParams:
        return self._params(self.plant)

    def nominal_params(self) -> FourTankParams:
        return self._params(self.nominal)

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        problems = []
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        data = copy.deepcopy(data)
        sections = {"controller": ControllerSpec, "reference": ReferenceSpec, "noise": NoiseSpec,
                    "attack": AttackSpec, "detector": DetectorConfig, "recovery": RecoverySpec,
                    "grid": GridSpec, "outputs": OutputsSpec}
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                problems.append(f"unknown field {key!r}")
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                continue
            if key in sections:
                sub = sections[key]
                if not isinstance(value, dict):
                    problems.append(f"{key} must be an object")
                    continue
                sub_known = {f.name for f in fields(sub)}
                bad = [k for k in value if k not in sub_known]
                problems += [f"unknown field {key}.{k}" for k in bad]
                try:
                    kwargs[key] = sub(**{k: v for k, v in value.items() if k in sub_known})
                except TypeError as exc:
                    problems.append(f"{key}: {exc}")
            else:
                kwargs[key] = value
        cfg = cls(**kwargs)
        try:
            problems += cfg.problems()
        except (TypeError, ValueError, KeyError) as exc:
            problems.append(f"invalid value: {exc}")
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        return cls.from_json(text)

    # -- validation ------------------------------------------------------
    def problems(self) -> list:
        out = []
        for label, spec in (("plant", self.plant), ("nominal", self.nominal)):
            if isinstance(spec, str):
                if spec not in PARAM_PRESETS:
                    out.append(f"{label}: unknown preset {spec!r}; choose from {sorted(PARAM_PRESETS)}")
                    continue
            elif not isinstance(spec, dict):
                out.append(f"{label} must be a preset name or a parameter object")
                continue
            try:
                self._params(spec).validate()
            except (TypeError, ValueError) as exc:
                out.append(f"{label}: {exc}")
        if not self.gravity > 0:
            out.append("gravity must be positive")
        c = self.controller
        if len(c.kp) != 2 or len(c.ki) != 2:
            out.append("controller.kp and controller.ki need two diagonal entries each")
        if c.feedback_sign not in (-1, 1, -1.0, 1.0):
            out.append("controller.feedback_sign must be -1 or 1")
        out += self.reference.problems()
        out += self.noise.problems()
        a, g = self.attack, self.grid
        if not g.dt > 0:
            out.append("grid.dt must be positive")
        if not g.t_end >= g.t0:
            out.append("grid.t_end must not precede grid.t0")
        elif g.dt > 0:
            ratio = (g.t_end - g.t0) / g.dt
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                out.append("grid horizon must be a whole number of steps")
        if not a.t_on < a.t_off:
            out.append("attack.t_on must precede attack.t_off")
        if not a.t_off <= g.t_end:
            out.append("attack.t_off must not exceed grid.t_end")
        if len(a.delta0) != 2:
            out.append("attack.delta0 needs two entries")
        if a.x_star is not None and (len(a.x_star) != 2 or min(a.x_star) <= 0):
            out.append("attack.x_star needs two positive entries")
        out += self.detector.problems()
        r = self.recovery
        if not r.lam > 0:
            out.append("recovery.lam must be positive")
        if r.form not in FORMS:
            out.append(f"recovery.form must be one of {FORMS}")
        if r.drift_center not in DRIFT_CENTERS:
            out.append(f"recovery.drift_center must be one of {DRIFT_CENTERS}")
        if self.engine not in ("auto", "compiled", "blocks"):
            out.append("engine must be auto, compiled or blocks")
        return out

    def validate(self) -> "ScenarioConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self


# ---------------------------------------------------------------------------
# Dotted-path access used by sweeps and CLI overrides


def set_path(data: dict, path: str, value) -> dict:
    """Return a copy of ``data`` with the dotted ``path`` set to ``value``."""
    out = copy.deepcopy(data)
    keys = path.split(".")
    node = out
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown config path {path!r}")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"unknown config path {path!r}")
    node[keys[-1]] = value
    return out


# ---------------------------------------------------------------------------
# Presets


def preset_names() -> list:
    files = resources.files(PRESET_PACKAGE).iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".json") and p.name != "schema.json")


def preset_text(name: str) -> str:
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return resources.files(PRESET_PACKAGE).joinpath(f"{name}.json").read_text()


def load_preset(name: str) -> ScenarioConfig:
    return ScenarioConfig.from_json(preset_text(name))


def schema() -> dict:
    return json.loads(resources.files(PRESET_PACKAGE).joinpath("schema.json").read_text())
