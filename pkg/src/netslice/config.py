"""Experiment configuration: presets and the flat ``section.key = value`` format.

Example::

    run.scenario = small
    capacity.radio = 400
    class1.arrival_rate = 12
    class1.radio = 100
    agent.kind = dueling
    train.episodes = 20000

Class sections are numbered from 1.  ``train.*`` keys override the
per-agent defaults of :class:`netslice.agents.TrainConfig`.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

from .agents import AGENT_KINDS, TrainConfig, default_config
from .model import DEFAULT_STATE_CEILING, ResourceCapacity, SliceClassSpec, SlicingProblem
from .sim import MODES

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "POLICY_KINDS",
    "PRESETS",
    "preset",
    "parse_config",
    "dumps_config",
    "load_config",
]

POLICY_KINDS = ("greedy", "optimal") + AGENT_KINDS

_CLASS_KEYS = {
    "arrival_rate": "arrival_rate",
    "completion_rate": "completion_rate",
    "reward": "reward",
    "radio": "radio_demand",
    "compute": "compute_demand",
    "storage": "storage_demand",
}
_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}


class ConfigError(ValueError):
    """Malformed or invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    classes: tuple
    capacity: ResourceCapacity
    agent: str = "dueling"
    train: dict = field(default_factory=dict)
    horizon: int = 1_000_000
    seeds: tuple = (0,)
    out: str = "out"
    mode: str = "uniformized"
    max_states: int = DEFAULT_STATE_CEILING
    trajectory_limit: int = 10_000
    r3_values: tuple = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)

    def validate(self) -> "ExperimentConfig":
        if not self.classes:
            raise ConfigError("at least one slice class is required")
        for i, spec in enumerate(self.classes):
            if spec.class_id != i:
                raise ConfigError(f"class {i + 1} has class_id {spec.class_id}")
        if self.agent not in POLICY_KINDS:
            raise ConfigError(f"agent.kind must be one of {POLICY_KINDS}, got {self.agent!r}")
        if self.mode not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}, got {self.mode!r}")
        if self.horizon < 1:
            raise ConfigError("run.horizon must be >= 1")
        if not self.seeds or any(s < 0 for s in self.seeds):
            raise ConfigError("run.seeds must be a nonempty list of nonnegative integers")
        if not self.r3_values:
            raise ConfigError("sweep.r3 must be nonempty")
        if self.max_states < 1 or self.trajectory_limit < 0:
            raise ConfigError("run.max_states must be >= 1 and run.trajectory_limit >= 0")
        for kind in AGENT_KINDS:
            self.train_config(kind)
        return self

    def train_config(self, kind: str | None = None) -> TrainConfig:
        try:
            return default_config(kind or self.agent, **self.train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad train settings: {exc}") from None

    def problem(self) -> SlicingProblem:
        return SlicingProblem(self.classes, self.capacity, self.max_states)

    def with_reward(self, class_index: int, reward: float) -> "ExperimentConfig":
        classes = list(self.classes)
        classes[class_index] = replace(classes[class_index], reward=reward)
        return replace(self, classes=tuple(classes))

    def digest(self) -> str:
        """SHA-256 of the canonical text, ignoring the output directory."""
        return hashlib.sha256(dumps_config(self, include_out=False).encode()).hexdigest()


def _specs(lam, mu, rewards, demand):
    return tuple(
        SliceClassSpec(c, float(lam[c]), float(mu[c]), float(rewards[c]), *demand)
        for c in range(len(lam))
    )


PRESETS = {
    "small": dict(classes=_specs((12, 8, 10), (3, 3, 3), (1, 2, 4), (100, 2, 1)),
                  capacity=ResourceCapacity(400, 8, 4)),
    "medium": dict(classes=_specs((48, 32, 40), (2, 2, 2), (1, 2, 4), (100, 2, 1)),
                   capacity=ResourceCapacity(1000, 20, 10)),
    # same arrival and completion rates as medium, twice the capacity
    "large": dict(classes=_specs((48, 32, 40), (2, 2, 2), (1, 2, 4), (100, 2, 1)),
                  capacity=ResourceCapacity(2000, 40, 20)),
}


def preset(name: str) -> ExperimentConfig:
    try:
        kw = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return ExperimentConfig(scenario=name, **kw)


# -- text format ------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return "none" if v is None else str(v)


def dumps_config(cfg: ExperimentConfig, include_out: bool = True) -> str:
    lines = [f"run.scenario = {cfg.scenario}"]
    cap = cfg.capacity
    lines += [f"capacity.radio = {cap.radio}", f"capacity.compute = {cap.compute}",
              f"capacity.storage = {cap.storage}"]
    for spec in cfg.classes:
        for key, attr in _CLASS_KEYS.items():
            lines.append(f"class{spec.class_id + 1}.{key} = {_fmt(getattr(spec, attr))}")
    lines.append(f"agent.kind = {cfg.agent}")
    for key in sorted(cfg.train):
        lines.append(f"train.{key} = {_fmt(cfg.train[key])}")
    lines += [
        f"run.horizon = {cfg.horizon}",
        f"run.seeds = {_fmt(cfg.seeds)}",
        f"run.mode = {cfg.mode}",
        f"run.max_states = {cfg.max_states}",
        f"run.trajectory_limit = {cfg.trajectory_limit}",
    ]
    if include_out:
        lines.append(f"run.out = {cfg.out}")
    lines.append(f"sweep.r3 = {_fmt(cfg.r3_values)}")
    return "\n".join(lines) + "\n"


def _number(text: str, key: str, kind=float):
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    if kind is int:
        if v != int(v):
            raise ConfigError(f"{key}: expected an integer, got {text!r}")
        return int(v)
    return v


def _int_list(text: str, key: str) -> tuple:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ConfigError(f"{key}: empty list")
    return tuple(_number(t, key, int) for t in items)


def _float_list(text: str, key: str) -> tuple:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ConfigError(f"{key}: empty list")
    return tuple(_number(t, key) for t in items)


def _train_value(key: str, text: str):
    typ = _TRAIN_TYPES[key]
    low = text.strip().lower()
    if "None" in typ and low == "none":
        return None
    if typ.startswith("bool"):
        if low not in ("true", "false"):
            raise ConfigError(f"train.{key}: expected true/false, got {text!r}")
        return low == "true"
    if typ.startswith("int"):
        return _number(text, f"train.{key}", int)
    if typ.startswith("float"):
        return _number(text, f"train.{key}")
    return text.strip()


def parse_config(text: str) -> ExperimentConfig:
    """Parse the flat key-value format; unknown keys are an error."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"line {lineno}: key {key!r} is not of the form section.key")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    base = None
    if "run.preset" in raw:
        base = preset(raw.pop("run.preset"))
    kw = {} if base is None else {f.name: getattr(base, f.name) for f in fields(base)}
    kw.setdefault("train", {})
    kw["train"] = dict(kw["train"])
    cap = {} if base is None else {k: getattr(base.capacity, k) for k in ("radio", "compute", "storage")}
    classes = {} if base is None else {
        s.class_id: {attr: getattr(s, attr) for attr in _CLASS_KEYS.values()} for s in base.classes
    }

    for key, value in raw.items():
        section, name = key.split(".")
        if section == "capacity" and name in ("radio", "compute", "storage"):
            cap[name] = _number(value, key, int)
        elif section.startswith("class") and section[5:].isdigit() and name in _CLASS_KEYS:
            c = int(section[5:]) - 1
            kind = int if name in ("radio", "compute", "storage") else float
            classes.setdefault(c, {})[_CLASS_KEYS[name]] = _number(value, key, kind)
        elif section == "agent" and name == "kind":
            kw["agent"] = value
        elif section == "train" and name in _TRAIN_TYPES:
            kw["train"][name] = _train_value(name, value)
        elif section == "run" and name in ("scenario", "mode", "out"):
            kw[name] = value
        elif section == "run" and name in ("horizon", "max_states", "trajectory_limit"):
            kw[name] = _number(value, key, int)
        elif section == "run" and name == "seeds":
            kw["seeds"] = _int_list(value, key)
        elif section == "sweep" and name == "r3":
            kw["r3_values"] = _float_list(value, key)
        else:
            raise ConfigError(f"unknown key {key!r}")

    missing = [k for k in ("radio", "compute", "storage") if k not in cap]
    if missing:
        raise ConfigError(f"missing capacity keys: {', '.join('capacity.' + k for k in missing)}")
    if sorted(classes) != list(range(len(classes))):
        raise ConfigError("class sections must be numbered 1..C without gaps")
    specs = []
    for c in range(len(classes)):
        attrs = classes[c]
        absent = [k for k, a in _CLASS_KEYS.items() if a not in attrs]
        if absent:
            raise ConfigError(f"class{c + 1} is missing {', '.join(absent)}")
        try:
            specs.append(SliceClassSpec(c, **attrs))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"class{c + 1}: {exc}") from None
    try:
        kw["capacity"] = ResourceCapacity(**cap)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"capacity: {exc}") from None
    kw["classes"] = tuple(specs)
    kw.setdefault("scenario", "custom")
    return ExperimentConfig(**kw).validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
