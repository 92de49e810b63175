"""Experiment configuration: INI files with one section per concern.

Every key must be known; a typo is an error rather than a silently ignored
setting.  Values are parsed according to the type of the field's default.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .baselines import FlowConfig, GuidanceConfig
from .basis import TrainConfig
from .dynamic import DynamicConfig
from .exceptions import ConfigError
from .flow import IntegratorConfig

METHODS = ("static", "temporal", "dynamic", "unconditional", "conditional",
           "classifier_guided", "distribution_guided", "finetune")
SPLITS = ("TD", "UD", "US")


@dataclass
class DataSection:
    n_train_arcs: int = 8
    train_samples: int = 1000
    shots: int = 500
    n_real: int = 1000
    n_generated: int = 1000
    kappa: int = 3
    # "shots": evaluate against the shot set; "fresh": against new target draws
    eval_reference: str = "shots"


@dataclass
class TrainSection:
    gradient_steps: int = 1000
    batch_size: int = 512
    lr: float = 1e-3
    ridge: float = 1e-6
    k: int = 100
    hidden: tuple = (64, 64, 64)
    activation: str = "tanh"
    residual_mode: bool = False
    detach_coefficients: bool = False
    distributions_per_step: int = 8
    m_eval: int = 1024


@dataclass
class DynamicSection:
    t_eps: float = 1e-2
    anchor_subsample: int = 64
    ess_floor: float = 1.5
    chunk: int = 256
    # 0 means "same as [train] gradient_steps"
    gradient_steps: int = 0


@dataclass
class IntegratorSection:
    steps: int = 100
    t_max: float = 1.0


@dataclass
class BaselineSection:
    gradient_steps: int = 3000
    batch_size: int = 512
    lr: float = 1e-3
    hidden: tuple = (64, 64, 64)
    activation: str = "tanh"
    finetune_steps: int = 1000
    finetune_lr: float = 1e-3
    classifier_steps: int = 1000
    secondary_steps: int = 1000
    backward_steps: int = 1000


@dataclass
class GuidanceSection:
    alpha: float = 5.0


@dataclass
class ExperimentSection:
    methods: list = field(default_factory=lambda: ["static", "temporal", "dynamic"])
    splits: list = field(default_factory=lambda: list(SPLITS))
    seeds: list = field(default_factory=lambda: [0])
    out: str = "fpfm_out"
    timing_repeats: int = 1
    plots: bool = True


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    dynamic: DynamicSection = field(default_factory=DynamicSection)
    integrator: IntegratorSection = field(default_factory=IntegratorSection)
    baselines: BaselineSection = field(default_factory=BaselineSection)
    guidance: GuidanceSection = field(default_factory=GuidanceSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def __post_init__(self):
        validate(self)

    # views as the module-level config objects
    def train_config(self, seed, **overrides):
        tr = self.train
        kw = dict(gradient_steps=tr.gradient_steps, batch_size=tr.batch_size, lr=tr.lr,
                  ridge=tr.ridge, k=tr.k, hidden=tr.hidden, activation=tr.activation,
                  seed=seed, residual_mode=tr.residual_mode,
                  detach_coefficients=tr.detach_coefficients,
                  distributions_per_step=tr.distributions_per_step)
        kw.update(overrides)
        return TrainConfig(**kw)

    def dynamic_train_config(self, seed, **overrides):
        kw = {"gradient_steps": self.dynamic.gradient_steps or self.train.gradient_steps}
        kw.update(overrides)
        return self.train_config(seed, **kw)

    def dynamic_config(self):
        d = self.dynamic
        return DynamicConfig(d.t_eps, d.anchor_subsample, d.ess_floor, d.chunk)

    def integrator_config(self):
        return IntegratorConfig(self.integrator.steps, self.integrator.t_max)

    def flow_config(self, seed, steps=None):
        b = self.baselines
        return FlowConfig(b.gradient_steps if steps is None else steps, b.batch_size, b.lr,
                          b.hidden, b.activation, seed)

    def guidance_config(self):
        return GuidanceConfig(self.guidance.alpha)

    def to_dict(self):
        return dataclasses.asdict(self)


def _parse_value(raw, default, where):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in _split_list(raw))
        if isinstance(default, list):
            items = _split_list(raw)
            if default and isinstance(default[0], int):
                return [int(v) for v in items]
            return items
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _split_list(raw):
    return [v.strip() for v in raw.replace(",", " ").split() if v.strip()]


def _section_types():
    return {f.name: f.default_factory for f in dataclasses.fields(ExperimentConfig)}


def from_mapping(mapping):
    """Build a config from ``{section: {key: raw string}}``; unknown names raise."""
    types = _section_types()
    sections = {}
    for name, values in mapping.items():
        if name not in types:
            raise ConfigError(f"unknown config section [{name}]")
        default = types[name]()
        known = {f.name for f in dataclasses.fields(default)}
        kw = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key '{key}' in section [{name}]")
            kw[key] = _parse_value(str(raw), getattr(default, key), f"[{name}] {key}")
        sections[name] = dataclasses.replace(default, **kw)
    try:
        return ExperimentConfig(**sections)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _raw(value):
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def from_dict(data):
    """Inverse of :meth:`ExperimentConfig.to_dict` (e.g. a checkpoint snapshot)."""
    return from_mapping({sec: {k: _raw(v) for k, v in vals.items()}
                         for sec, vals in data.items()})


def loads(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return from_mapping({s: dict(parser.items(s)) for s in parser.sections()})


def load(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, str(path))


def dumps(cfg):
    """Render ``cfg`` back to INI text that :func:`loads` accepts."""
    lines = []
    for sec in dataclasses.fields(cfg):
        lines.append(f"[{sec.name}]")
        for f in dataclasses.fields(getattr(cfg, sec.name)):
            lines.append(f"{f.name} = {_raw(getattr(getattr(cfg, sec.name), f.name))}")
        lines.append("")
    return "\n".join(lines)


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate(cfg):
    d, tr, dy, it, b, g, ex = (cfg.data, cfg.train, cfg.dynamic, cfg.integrator,
                               cfg.baselines, cfg.guidance, cfg.experiment)
    _require(d.n_train_arcs >= 2, "[data] n_train_arcs must be >= 2")
    for key in ("train_samples", "shots", "n_real"):
        _require(getattr(d, key) >= 1, f"[data] {key} must be >= 1")
    _require(d.n_generated >= 0, "[data] n_generated must be >= 0")
    _require(d.kappa >= 1, "[data] kappa must be >= 1")
    _require(d.eval_reference in ("fresh", "shots"),
             "[data] eval_reference must be 'fresh' or 'shots'")
    for key in ("batch_size", "k", "distributions_per_step", "m_eval"):
        _require(getattr(tr, key) >= 1, f"[train] {key} must be >= 1")
    _require(tr.gradient_steps >= 0, "[train] gradient_steps must be >= 0")
    _require(tr.lr > 0, "[train] lr must be > 0")
    _require(tr.ridge >= 0, "[train] ridge must be >= 0")
    _require(len(tr.hidden) >= 1 and min(tr.hidden) >= 1, "[train] hidden needs widths >= 1")
    _require(tr.activation in ("tanh", "relu", "identity"),
             f"[train] unknown activation {tr.activation!r}")
    _require(0.0 < dy.t_eps < 1.0, "[dynamic] t_eps must lie in (0, 1)")
    _require(dy.anchor_subsample >= 1, "[dynamic] anchor_subsample must be >= 1")
    _require(dy.chunk >= 1, "[dynamic] chunk must be >= 1")
    _require(dy.gradient_steps >= 0, "[dynamic] gradient_steps must be >= 0")
    _require(it.steps >= 1, "[integrator] steps must be >= 1")
    _require(0.0 < it.t_max <= 1.0, "[integrator] t_max must lie in (0, 1]")
    for key in ("gradient_steps", "finetune_steps", "classifier_steps", "secondary_steps"):
        _require(getattr(b, key) >= 0, f"[baselines] {key} must be >= 0")
    _require(b.backward_steps >= 1, "[baselines] backward_steps must be >= 1")
    _require(b.lr > 0 and b.finetune_lr >= 0, "[baselines] learning rates must be positive")
    _require(g.alpha >= 0, "[guidance] alpha must be >= 0")
    _require(len(ex.methods) >= 1, "[experiment] methods must not be empty")
    for m in ex.methods:
        _require(m in METHODS, f"[experiment] unknown method {m!r}")
    for s in ex.splits:
        _require(s in SPLITS, f"[experiment] unknown split {s!r}")
    _require(len(ex.seeds) >= 1, "[experiment] seeds must not be empty")
    _require(ex.timing_repeats >= 1, "[experiment] timing_repeats must be >= 1")
