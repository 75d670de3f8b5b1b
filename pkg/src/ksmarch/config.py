"""Experiment configuration: YAML text <-> dataclasses, with dotted overrides.

Example::

    model:
      M: 4
      N: 1
      hopping: {kind: chain, tau: 1.0, periodic: false}
      interaction: {pairs: [[0, 1, 1.0]]}
      potential: {waveform: sinusoid, static: [0, 0, 0, 0],
                  amplitude: [0.3, -0.1, 0.1, -0.3], params: {omega: 2.0}}
    initial: {kind: ground_state}
    march: {t0: 0.0, t1: 1.0, z: 200, L: auto, eps: 0.05, source_mode: exact}
    oracle: {delta_n: 0.0, r: 1, seed: 0, c4: null, h: null, substeps: 4}
    output: runs/example
    rescale_time: false
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .fock import LatticeModel, chain_hopping
from .marcher import MarchConfig
from .waveforms import PotentialSchedule

INITIAL_KINDS = ("ground_state", "sites", "orbitals", "interacting_ground")


@dataclass
class ModelSpec:
    M: int
    N: int
    hopping: dict
    interaction: dict = field(default_factory=dict)
    potential: dict = field(default_factory=lambda: {"waveform": "constant"})


@dataclass
class InitialSpec:
    kind: str = "ground_state"
    sites: list | None = None
    orbitals_re: list | None = None
    orbitals_im: list | None = None
    consistency_tol: float = 1e-6


@dataclass
class MarchSpec:
    t0: float = 0.0
    t1: float = 1.0
    z: int = 100
    L: float | str = "auto"
    eps: float = 0.05
    restart_growth: float = 2.0
    max_restarts: int = 8
    source_mode: str = "exact"
    guard_slack: float = 1e-8
    sigma_floor: float = 1e-10
    kernel_tol: float = 1e-8


@dataclass
class OracleSpec:
    delta_n: float = 0.0
    r: int = 1
    seed: int = 0
    c4: float | None = None
    h: float | None = None
    spacing: float | None = None
    substeps: int = 4


@dataclass
class ValidateSpec:
    R_warn: float = 100.0
    bound_check: bool = True


@dataclass
class ExperimentConfig:
    model: ModelSpec
    initial: InitialSpec = field(default_factory=InitialSpec)
    march: MarchSpec = field(default_factory=MarchSpec)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    validate: ValidateSpec = field(default_factory=ValidateSpec)
    output: str = "run"
    rescale_time: bool = False

    def to_dict(self):
        return dataclasses.asdict(self)

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)


_SECTIONS = {"model": ModelSpec, "initial": InitialSpec, "march": MarchSpec,
             "oracle": OracleSpec, "validate": ValidateSpec}


def _coerce(value, annotation, path):
    ann = str(annotation)
    if value is None:
        if "None" in ann:
            return None
        raise ConfigError("value must not be null", path)
    if ann.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if ann.startswith("float | str"):
        if value == "auto":
            return value
        try:
            return _coerce(value, "float", path)
        except ConfigError:
            raise ConfigError(f"expected a number or 'auto', got {value!r}", path) from None
    if ann.startswith("float"):
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms such as 1e-6 as strings
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if ann.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if ann.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    if ann.startswith("dict"):
        if not isinstance(value, dict):
            raise ConfigError("expected a mapping", path)
        return value
    if ann.startswith("list"):
        if not isinstance(value, list):
            raise ConfigError("expected a list", path)
        return value
    return value


def _build_section(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", path)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}", path)
    kwargs = {}
    for name, f in fields.items():
        if name in data:
            kwargs[name] = _coerce(data[name], f.type, f"{path}.{name}")
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError("required key missing", f"{path}.{name}")
    return cls(**kwargs)


def from_dict(data):
    """Validate a plain mapping and build an ExperimentConfig."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")
    if "model" not in data:
        raise ConfigError("required key missing", "model")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build_section(cls, data[name] or {}, name)
    if "output" in data:
        kwargs["output"] = _coerce(data["output"], "str", "output")
    if "rescale_time" in data:
        kwargs["rescale_time"] = _coerce(data["rescale_time"], "bool", "rescale_time")
    cfg = ExperimentConfig(**kwargs)
    _check(cfg)
    return cfg


def _check(cfg):
    m = cfg.model
    if not 1 <= m.N <= m.M:
        raise ConfigError(f"need 1 <= N <= M (M={m.M}, N={m.N})", "model.N")
    if cfg.initial.kind not in INITIAL_KINDS:
        raise ConfigError(f"must be one of {INITIAL_KINDS}", "initial.kind")
    if cfg.initial.kind == "sites":
        sites = cfg.initial.sites or []
        if len(sites) != m.N or len(set(sites)) != m.N or not all(0 <= s < m.M for s in sites):
            raise ConfigError(f"need {m.N} distinct site indices in [0, {m.M})", "initial.sites")
    if cfg.march.source_mode not in ("exact", "stencil"):
        raise ConfigError("must be 'exact' or 'stencil'", "march.source_mode")
    if cfg.march.z < 1:
        raise ConfigError("must be positive", "march.z")
    if not cfg.march.t1 > cfg.march.t0:
        raise ConfigError("must exceed march.t0", "march.t1")
    if cfg.oracle.delta_n < 0:
        raise ConfigError("must be nonnegative", "oracle.delta_n")
    if cfg.march.source_mode == "stencil" and cfg.oracle.h is None and cfg.oracle.delta_n == 0:
        raise ConfigError("stencil mode needs oracle.h or a positive oracle.delta_n", "oracle.h")
    try:
        build_model(cfg)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), "model") from exc


def parse(text):
    """Parse YAML text into an ExperimentConfig."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ConfigError(f"{where}{exc}") from exc
    return from_dict(data)


def load(path, overrides=()):
    """Read a YAML config file and apply ``key.path=value`` overrides."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ConfigError(f"{path}: {where}{exc}") from exc
    return from_dict(apply_overrides(data, overrides))


def apply_overrides(data, overrides):
    data = copy.deepcopy(data) if data is not None else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError("cannot override inside a non-mapping", key)
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def build_hopping(spec, M):
    spec = dict(spec)
    kind = spec.pop("kind", "chain")
    if kind == "matrix":
        T = np.asarray(spec.pop("matrix"), dtype=float)
        if T.shape != (M, M):
            raise ConfigError(f"hopping matrix must be {M}x{M}", "model.hopping.matrix")
    elif kind in ("chain", "ring"):
        T = chain_hopping(M, float(spec.pop("tau", 1.0)),
                          periodic=(kind == "ring") or bool(spec.pop("periodic", False)))
        onsite = spec.pop("onsite", None)
        if onsite is not None:
            T = T + np.diag(np.asarray(onsite, dtype=float))
    else:
        raise ConfigError(f"unknown hopping kind {kind!r}", "model.hopping.kind")
    if spec:
        raise ConfigError(f"unknown key(s) {sorted(spec)}", "model.hopping")
    return T


class RescaledPotential:
    """``c V(t0 + c t')``: the potential seen on a unit horizon."""

    def __init__(self, base, c, t0):
        self.base = base
        self.c = float(c)
        self.t0 = float(t0)

    @property
    def M(self):
        return self.base.M

    def __call__(self, t):
        return self.c * self.base(self.t0 + self.c * t)

    def lipschitz(self):
        return self.c * self.c * self.base.lipschitz()


def build_model(cfg):
    """LatticeModel described by ``cfg`` (rescaled to a unit horizon if requested)."""
    m = cfg.model
    T = build_hopping(m.hopping, m.M)
    inter = dict(m.interaction)
    pairs = inter.pop("pairs", []) or []
    four = {tuple(int(x) for x in e[:4]): complex(e[4], e[5] if len(e) > 5 else 0.0)
            for e in (inter.pop("four_index", []) or [])}
    if inter:
        raise ConfigError(f"unknown key(s) {sorted(inter)}", "model.interaction")
    try:
        pot = PotentialSchedule.from_dict(m.potential, M=m.M)
    except ValueError as exc:
        raise ConfigError(str(exc), "model.potential") from exc
    if cfg.rescale_time:
        c = cfg.march.t1 - cfg.march.t0
        pot = RescaledPotential(pot, c, cfg.march.t0)
        T = c * T
        pairs = [(i, j, c * w) for i, j, w in pairs]
        four = {k: c * v for k, v in four.items()}
    return LatticeModel(T, m.N, pot, tuple(tuple(p) for p in pairs), four)


def time_window(cfg):
    """``(t0, t1, scale)`` in the units the march runs in."""
    if cfg.rescale_time:
        return 0.0, 1.0, cfg.march.t1 - cfg.march.t0
    return cfg.march.t0, cfg.march.t1, 1.0


def march_config(cfg, model, record_states=False, stencil_h=None):
    t0, t1, _ = time_window(cfg)
    ms = cfg.march
    L = ms.L
    if L == "auto":
        L = 2.0 * max(model.potential.lipschitz(), 0.5)
    return MarchConfig(z=ms.z, t0=t0, t1=t1, L=float(L), eps=ms.eps,
                       restart_growth=ms.restart_growth, max_restarts=ms.max_restarts,
                       source_mode=ms.source_mode, guard_slack=ms.guard_slack,
                       stencil_h=stencil_h, sigma_floor=ms.sigma_floor, kernel_tol=ms.kernel_tol,
                       record_states=record_states)
