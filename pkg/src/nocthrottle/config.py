"""Run configuration: one YAML document, validated in a single pass.

Every key has a default; unknown keys are rejected.  The shipped defaults
describe the full-scale setup (6x6 mesh, two memory controllers, 600k cycles
with 100k warm-up, alpha = 1/16, delta = 5, depth 4).  ``desk()`` shrinks the
cycle counts for quick runs.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from .errors import ConfigError
from .topology import MeshConfig
from .traffic import WorkloadConfig

POLICIES = ("none", "baseline", "proposed")
TRACE_LEVELS = ("summary", "packet")
OUTPUT_ROOT_ENV = "NOCTHROTTLE_OUT"

DESK_TOTAL_CYCLES = 100_000
DESK_WARMUP_CYCLES = 20_000
# injection rates used by --desk when the config names none: light load, the
# knee, and a saturated point that supplies the deflections labels need
DESK_SWEEP = (0.05, 0.15, 0.3)


@dataclass(frozen=True)
class MeshSection:
    rows: int = 6
    cols: int = 6
    memory_controllers: Tuple[int, ...] = (3, 32)
    highest_priority_sources: Tuple[int, ...] = (0, 12, 24)
    core_nodes: Optional[Tuple[int, ...]] = None

    def to_mesh_config(self) -> MeshConfig:
        return MeshConfig(self.rows, self.cols, tuple(self.memory_controllers),
                          tuple(self.highest_priority_sources),
                          None if self.core_nodes is None else tuple(self.core_nodes))


@dataclass(frozen=True)
class QueueSection:
    capacity: int = 32
    llc_service_time: int = 4
    # None -> 4x the LLC service time
    mc_service_time: Optional[int] = None
    # off-chip accesses overlap: an MC keeps up to this many requests in service
    mc_servers: int = 16
    core_service_time: int = 1
    turn_capacity: int = 4
    # per-core cap on injected-but-incomplete transactions; 0 disables it
    max_outstanding: int = 0

    @property
    def mc_service(self) -> int:
        return 4 * self.llc_service_time if self.mc_service_time is None else self.mc_service_time


@dataclass(frozen=True)
class ControllerSection:
    policy: str = "none"
    alpha: float = 1.0 / 16.0
    delta: int = 5
    depth: int = 4
    model_dir: Optional[str] = None
    shared_model: bool = False
    n_target: Optional[float] = None
    signal_delay: int = 10
    # a sink with no arrival for this many cycles takes a no-arrival feature sample; 0 disables
    idle_poll: int = 10
    baseline_on: Optional[int] = None
    baseline_off: Optional[int] = None
    lookahead: int = 8
    local_condition: bool = True
    class_weight: Optional[str] = "balanced"
    min_leaf: int = 5
    train_fraction: float = 0.7


@dataclass(frozen=True)
class CycleSection:
    warmup: int = 100_000
    total: int = 600_000


@dataclass(frozen=True)
class RunConfig:
    mesh: MeshSection = field(default_factory=MeshSection)
    queues: QueueSection = field(default_factory=QueueSection)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    controller: ControllerSection = field(default_factory=ControllerSection)
    cycles: CycleSection = field(default_factory=CycleSection)
    seed: int = 0
    seeds: Tuple[int, ...] = ()
    sweep: Tuple[float, ...] = ()
    max_deflections: int = 1_000_000
    trace_level: str = "summary"
    debug_checks: bool = False
    out: Optional[str] = None

    def __post_init__(self):
        validate(self)

    @property
    def measure_cycles(self) -> int:
        return self.cycles.total - self.cycles.warmup

    def with_policy(self, policy: str, **controller_overrides) -> "RunConfig":
        return replace(self, controller=replace(self.controller, policy=policy, **controller_overrides))

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, workload=replace(self.workload, seed=seed))

    def with_rate(self, rate: float) -> "RunConfig":
        return replace(self, workload=replace(self.workload, injection_rate=rate, phases=()))

    def desk(self) -> "RunConfig":
        """Desk-scale cycle counts, and the desk rate sweep unless one is set."""
        return replace(self, cycles=CycleSection(DESK_WARMUP_CYCLES, DESK_TOTAL_CYCLES),
                       sweep=self.sweep or DESK_SWEEP)

    def output_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUTPUT_ROOT_ENV, "nocthrottle-out"))


def validate(cfg: RunConfig) -> None:
    cfg.mesh.to_mesh_config()
    q = cfg.queues
    for name in ("capacity", "llc_service_time", "core_service_time", "turn_capacity", "mc_servers"):
        if getattr(q, name) < 1:
            raise ConfigError(f"queues.{name} must be >= 1")
    if q.mc_service < 1:
        raise ConfigError("queues.mc_service_time must be >= 1")
    if q.max_outstanding < 0:
        raise ConfigError("queues.max_outstanding must be >= 0")
    c = cfg.controller
    if c.policy not in POLICIES:
        raise ConfigError(f"controller.policy must be one of {POLICIES}, got {c.policy!r}")
    if not 0.0 <= c.alpha <= 1.0:
        raise ConfigError("controller.alpha must lie in [0, 1]")
    if c.delta < 0:
        raise ConfigError("controller.delta must be non-negative")
    if c.depth < 1:
        raise ConfigError("controller.depth must be >= 1")
    if c.signal_delay < 0:
        raise ConfigError("controller.signal_delay must be non-negative")
    if c.idle_poll < 0:
        raise ConfigError("controller.idle_poll must be non-negative")
    if c.n_target is not None and not 0 <= c.n_target <= q.capacity:
        raise ConfigError("controller.n_target must lie in [0, capacity]")
    on = c.baseline_on if c.baseline_on is not None else round(0.75 * q.capacity)
    off = c.baseline_off if c.baseline_off is not None else round(0.25 * q.capacity)
    if not 0 <= off < on <= q.capacity:
        raise ConfigError(f"baseline thresholds need 0 <= off < on <= capacity, got off={off} on={on}")
    if c.class_weight not in (None, "balanced"):
        raise ConfigError("controller.class_weight must be 'balanced' or null")
    if c.min_leaf < 1:
        raise ConfigError("controller.min_leaf must be >= 1")
    if not 0.0 < c.train_fraction < 1.0:
        raise ConfigError("controller.train_fraction must lie in (0, 1)")
    if cfg.cycles.warmup < 0 or cfg.cycles.total < cfg.cycles.warmup:
        raise ConfigError("cycles need 0 <= warmup <= total")
    if cfg.trace_level not in TRACE_LEVELS:
        raise ConfigError(f"trace_level must be one of {TRACE_LEVELS}")
    if cfg.max_deflections < 1:
        raise ConfigError("max_deflections must be >= 1")
    for r in cfg.sweep:
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"sweep rate {r} outside [0, 1]")


# -- YAML ---------------------------------------------------------------------

_SECTIONS = {
    "mesh": MeshSection,
    "queues": QueueSection,
    "workload": WorkloadConfig,
    "controller": ControllerSection,
    "cycles": CycleSection,
}
_TUPLE_FIELDS = {"memory_controllers", "highest_priority_sources", "core_nodes", "phases", "seeds", "sweep"}


def _build(cls, data: Dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS and cls is RunConfig:
            value = _build(_SECTIONS[key], value or {}, key)
        elif key in _TUPLE_FIELDS and value is not None:
            if key == "phases":
                value = tuple(tuple(p) for p in value)
            else:
                value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(data: Optional[Dict[str, Any]]) -> RunConfig:
    cfg = _build(RunConfig, data or {}, "config")
    if "seed" in (data or {}) and "seed" not in (data or {}).get("workload", {}):
        cfg = cfg.with_seed(cfg.seed)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return from_dict(data)


def to_dict(cfg: RunConfig) -> Dict[str, Any]:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = {g.name: plain(getattr(v, g.name)) for g in fields(v)}
        else:
            out[f.name] = plain(v)
    return out


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)
