"""Synthetic cache-coherency workloads.

Each core issues read transactions.  A transaction first visits an LLC bank;
on a hit the bank answers the core directly, on a miss it forwards the
request to a memory controller which answers the core::

    hit:  core -> LLC -> core
    miss: core -> LLC -> MC -> core
"""

from __future__ import annotations

import bisect
import enum
import math
import random
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError

REQUEST_BYTES = 8
RESPONSE_BYTES = 64
MASK64 = (1 << 64) - 1


class PacketClass(enum.IntEnum):
    LLC_REQUEST = 0
    LLC_RESPONSE = 1
    MEM_REQUEST = 2
    MEM_RESPONSE = 3

    @property
    def is_response(self) -> bool:
        return self in (PacketClass.LLC_RESPONSE, PacketClass.MEM_RESPONSE)

    @property
    def is_request(self) -> bool:
        return not self.is_response


@dataclass(frozen=True)
class WorkloadConfig:
    injection_rate: float = 0.05
    llc_hit_rate: float = 0.5
    # (duration_cycles, injection_rate) pairs, repeated cyclically; empty -> constant rate
    phases: Tuple[Tuple[int, float], ...] = ()
    # target coefficient of variation of inter-generation times; <= 1 -> Bernoulli
    burstiness: float = 1.0
    seed: int = 0
    request_bytes: int = REQUEST_BYTES
    response_bytes: int = RESPONSE_BYTES
    trace_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple((int(d), float(r)) for d, r in self.phases))
        if not 0.0 <= self.injection_rate <= 1.0:
            raise ConfigError(f"injection_rate must lie in [0, 1], got {self.injection_rate}")
        if not 0.0 <= self.llc_hit_rate <= 1.0:
            raise ConfigError(f"llc_hit_rate must lie in [0, 1], got {self.llc_hit_rate}")
        for d, r in self.phases:
            if d <= 0:
                raise ConfigError(f"phase durations must be positive, got {d}")
            if not 0.0 <= r <= 1.0:
                raise ConfigError(f"phase injection rate must lie in [0, 1], got {r}")
        if self.burstiness < 0:
            raise ConfigError("burstiness must be non-negative")
        if self.request_bytes <= 0 or self.response_bytes <= 0:
            raise ConfigError("payload sizes must be positive")

    def rate_at(self, clock: int) -> float:
        return self.phase_at(clock)[0]

    def phase_at(self, clock: int) -> Tuple[float, Optional[int]]:
        """Active injection rate at ``clock`` and the cycle the phase ends (None: never)."""
        if not self.phases:
            return self.injection_rate, None
        period = sum(d for d, _ in self.phases)
        base = clock - clock % period
        offset = clock - base
        for d, r in self.phases:
            if offset < d:
                return r, base + d
            offset -= d
            base += d
        raise AssertionError("unreachable")

    @property
    def max_rate(self) -> float:
        return max([self.injection_rate] if not self.phases else [r for _, r in self.phases])


@dataclass
class Transaction:
    id: int
    core: int
    is_llc_miss: bool
    llc: int
    mc: int
    start_time: int
    request_packet_id: int = -1
    response_packet_ids: List[int] = field(default_factory=list)
    completion_time: Optional[int] = None

    @property
    def latency(self) -> Optional[int]:
        if self.completion_time is None:
            return None
        return self.completion_time - self.start_time


class Leg(NamedTuple):
    cls: PacketClass
    src: int
    dst: int
    payload_bytes: int


def interleave_hash(key: int) -> int:
    """64-bit mix used for address interleaving over banks and controllers."""
    z = (key + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def home_nodes(txn_id: int, llc_nodes: Sequence[int], mc_nodes: Sequence[int]) -> Tuple[int, int]:
    h = interleave_hash(txn_id)
    llc = llc_nodes[h % len(llc_nodes)]
    mc = mc_nodes[(h >> 32) % len(mc_nodes)] if mc_nodes else -1
    return llc, mc


def route_transaction(txn: Transaction, config: WorkloadConfig = WorkloadConfig()) -> List[Leg]:
    """Packet legs of a transaction in the order they are sent.

    Only the first leg exists at generation; each later leg is created when
    the previous packet has been sunk and serviced.
    """
    req, resp = config.request_bytes, config.response_bytes
    if not txn.is_llc_miss:
        return [
            Leg(PacketClass.LLC_REQUEST, txn.core, txn.llc, req),
            Leg(PacketClass.LLC_RESPONSE, txn.llc, txn.core, resp),
        ]
    if txn.mc < 0:
        raise ConfigError("miss transaction generated on a mesh without memory controllers")
    return [
        Leg(PacketClass.LLC_REQUEST, txn.core, txn.llc, req),
        Leg(PacketClass.MEM_REQUEST, txn.llc, txn.mc, req),
        Leg(PacketClass.MEM_RESPONSE, txn.mc, txn.core, resp),
    ]


def next_request(core, clock, config: WorkloadConfig, rng: random.Random, txn_id: int,
                 llc_nodes: Sequence[int], mc_nodes: Sequence[int]) -> Optional[Transaction]:
    """One Bernoulli generation trial for ``core`` at ``clock``."""
    rate = config.rate_at(clock)
    if rate <= 0.0 or rng.random() >= rate:
        return None
    return make_transaction(txn_id, core, clock, config, rng, llc_nodes, mc_nodes)


def make_transaction(txn_id, core, clock, config, rng, llc_nodes, mc_nodes) -> Transaction:
    is_miss = rng.random() >= config.llc_hit_rate
    llc, mc = home_nodes(txn_id, llc_nodes, mc_nodes)
    return Transaction(txn_id, core, is_miss, llc, mc, clock)


# -- inter-generation processes ------------------------------------------------

def _geometric(rng: random.Random, p: float) -> int:
    """Trials up to and including the first success, p in (0, 1]."""
    if p >= 1.0:
        return 1
    u = rng.random()
    return int(math.log1p(-u) / math.log1p(-p)) + 1


def mmbp_interarrival_moments(on_rate: float, off_rate: float, p_leave_on: float, p_leave_off: float):
    """Mean and CoV of the inter-generation time of a two-state Markov-modulated
    Bernoulli process (arrival drawn in the current state, then the state moves)."""
    a = np.array([on_rate, off_rate])
    P = np.array([[1 - p_leave_on, p_leave_on], [p_leave_off, 1 - p_leave_off]])
    pi = np.array([p_leave_off, p_leave_on]) / (p_leave_on + p_leave_off)
    D1 = np.diag(a) @ P
    D0 = np.diag(1 - a) @ P
    pa = pi @ D1
    pa = pa / pa.sum()
    eye = np.eye(2)
    inv = np.linalg.inv(eye - D0)
    one = np.ones(2)
    m1 = pa @ inv @ one
    m2 = pa @ (eye + D0) @ inv @ inv @ one
    var = m2 - m1 * m1
    return float(m1), float(math.sqrt(max(var, 0.0)) / m1)


@dataclass(frozen=True)
class BurstParams:
    on_rate: float
    p_leave_on: float
    p_leave_off: float


def burst_params(rate: float, cov_target: float) -> BurstParams:
    """ON/OFF parameters with mean rate ``rate`` and inter-generation CoV ``cov_target``.

    The ON state generates at ``min(1, 2 * rate)`` and the OFF state is
    silent; the mean ON sojourn is found by bisection so that the analytic
    CoV hits the target.
    """
    if not 0.0 < rate < 1.0:
        raise ConfigError("bursty traffic needs an injection rate strictly inside (0, 1)")
    on_rate = min(1.0, 2.0 * rate)
    frac_on = rate / on_rate

    def cov_for(mean_on: float) -> float:
        p_on = 1.0 / mean_on
        mean_off = mean_on * (1.0 - frac_on) / frac_on
        p_off = min(1.0, 1.0 / max(mean_off, 1e-12))
        return mmbp_interarrival_moments(on_rate, 0.0, p_on, p_off)[1]

    lo, hi = 1.0, 1e6
    if frac_on >= 1.0:
        return BurstParams(on_rate, 1.0, 1.0)
    if cov_for(hi) < cov_target:
        raise ConfigError(f"burstiness {cov_target} is not reachable at rate {rate}")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if cov_for(mid) < cov_target:
            lo = mid
        else:
            hi = mid
    mean_on = hi
    mean_off = mean_on * (1.0 - frac_on) / frac_on
    return BurstParams(on_rate, 1.0 / mean_on, min(1.0, 1.0 / mean_off))


class CoreStream:
    """Generation instants of one core, on its own RNG substream.

    Equivalent in distribution to one Bernoulli trial per cycle at the active
    phase's rate, but draws geometric gaps so idle cycles cost nothing.
    """

    def __init__(self, core: int, config: WorkloadConfig):
        self.core = core
        self.config = config
        self.rng = random.Random(interleave_hash((config.seed << 20) ^ (core + 1)))
        self.bursty = config.burstiness > 1.0
        self._burst_cache: Dict[float, BurstParams] = {}
        self._on = True
        if self.bursty:
            self._on = self.rng.random() < 0.5

    def _burst(self, rate: float) -> BurstParams:
        if rate not in self._burst_cache:
            self._burst_cache[rate] = burst_params(rate, self.config.burstiness)
        return self._burst_cache[rate]

    def next_time(self, after: int) -> Optional[int]:
        """First generation instant strictly after ``after`` (None: never)."""
        t = after + 1
        cfg = self.config
        for _ in range(1_000_000):
            rate, end = cfg.phase_at(t)
            if rate <= 0.0:
                if end is None:
                    return None
                t = end
                continue
            if self.bursty and rate < 1.0:
                hit = self._bursty_from(t, rate, end)
            else:
                hit = t + _geometric(self.rng, rate) - 1
                if end is not None and hit >= end:
                    hit = None
            if hit is not None:
                return hit
            t = end
        raise ConfigError("workload phases produce no generation events")

    def _bursty_from(self, t: int, rate: float, end: Optional[int]) -> Optional[int]:
        bp = self._burst(rate)
        rng = self.rng
        while end is None or t < end:
            if self._on:
                if rng.random() < bp.on_rate:
                    hit = t
                else:
                    hit = None
                if rng.random() < bp.p_leave_on:
                    self._on = False
            else:
                hit = None
                if rng.random() < bp.p_leave_off:
                    self._on = True
            if hit is not None:
                return hit
            t += 1
        return None


class ReplayStream:
    """Generation instants read from a trace (``cycle,core,hit|miss`` lines)."""

    def __init__(self, core: int, events: List[Tuple[int, bool]]):
        self.core = core
        self.events = events
        self.times = [c for c, _ in events]
        self.rng = random.Random(core)

    def next_time(self, after: int) -> Optional[int]:
        k = bisect.bisect_right(self.times, after)
        return self.times[k] if k < len(self.times) else None

    def is_miss_at(self, t: int) -> bool:
        k = bisect.bisect_left(self.times, t)
        return self.events[k][1]


def load_trace(path) -> Dict[int, List[Tuple[int, bool]]]:
    """Parse a replay trace; blank lines and ``#`` comments are ignored."""
    per_core: Dict[int, List[Tuple[int, bool]]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3 or parts[2] not in ("hit", "miss"):
                raise ConfigError(f"{path}:{lineno}: expected 'cycle,core,hit|miss'")
            try:
                cycle, core = int(parts[0]), int(parts[1])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: cycle and core must be integers") from None
            per_core.setdefault(core, []).append((cycle, parts[2] == "miss"))
    for core, events in per_core.items():
        events.sort()
        times = [c for c, _ in events]
        if len(set(times)) != len(times):
            raise ConfigError(f"{path}: core {core} has two requests in one cycle")
    return per_core
