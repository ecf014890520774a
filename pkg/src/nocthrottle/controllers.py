"""Source-throttling policies and the delayed congestion-signal channel.

Three policies plug into the engine:

* ``NoControl``      - sources always send their oldest packet.
* ``BaselineControl`` - per-sink hysteresis on queue occupancy; while any
  sink is in distress, every source holds its pending requests.
* ``ProposedControl`` - a decision tree at each sink raises a congestion bit;
  sources skip requests to flagged sinks and send the next one instead.
  Highest-priority cores additionally apply a Little's-law check on the
  destination queue.

A source is any node that emits requests: cores send LLC requests and LLC
banks forward misses to memory controllers.  Responses are never held back.
Everything a source learns about a sink travels over a fixed-delay line.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Sequence

from .dtree import DecisionTree
from .errors import ConfigError
from .features import SINK_INJECTION_RATE

DEFAULT_SIGNAL_DELAY = 10


class Gate(enum.Enum):
    SEND = "send"
    SKIP_TO_NEXT = "skip_to_next"
    WAIT = "wait"


class DelayLine:
    """A value that changes over time, readable only ``delay`` cycles late.

    Writes must arrive in non-decreasing time order and reads must be
    non-decreasing in time; both are amortised O(1).
    """

    __slots__ = ("delay", "_pending", "value")

    def __init__(self, delay: int, initial=0):
        if delay < 0:
            raise ConfigError(f"signal delay must be non-negative, got {delay}")
        self.delay = delay
        self._pending: deque = deque()
        self.value = initial

    def set(self, t: int, value) -> None:
        self._pending.append((t + self.delay, value))

    def read(self, now: int):
        pending = self._pending
        while pending and pending[0][0] <= now:
            self.value = pending.popleft()[1]
        return self.value


class CongestionSignalBus:
    """One congestion bit per sink, delivered ``propagation_delay`` cycles after it is set."""

    def __init__(self, sinks: Iterable[int], propagation_delay: int = DEFAULT_SIGNAL_DELAY):
        if propagation_delay < 0:
            raise ConfigError(f"signal delay must be non-negative, got {propagation_delay}")
        self.propagation_delay = propagation_delay
        self.visible: Dict[int, bool] = {s: False for s in sinks}
        self.raised = 0  # number of visible set bits
        self._pending: deque = deque()
        self._last_set: Dict[int, bool] = dict(self.visible)

    def set(self, t: int, sink: int, value: bool) -> None:
        value = bool(value)
        if self._last_set.get(sink) == value:
            return
        if self._pending and self._pending[-1][0] > t + self.propagation_delay:
            raise ValueError("signal updates must be issued in time order")
        self._last_set[sink] = value
        self._pending.append((t + self.propagation_delay, sink, value))

    def advance(self, now: int) -> None:
        pending = self._pending
        visible = self.visible
        while pending and pending[0][0] <= now:
            _, sink, value = pending.popleft()
            if visible[sink] != value:
                visible[sink] = value
                self.raised += 1 if value else -1

    def signal(self, sink: int) -> bool:
        return self.visible.get(sink, False)

    @property
    def any_set(self) -> bool:
        return self.raised > 0


def local_condition(N: float, lam: float, t_avg: float, N_T: float, highest_priority: bool = True) -> bool:
    """Little's-law overflow test: ``N + lam * t_avg > N_T``.

    Lower-priority sources never trigger it.
    """
    if not highest_priority:
        return False
    return N + lam * t_avg > N_T


def algorithm1_decide(
    features: Sequence[float],
    tree: DecisionTree,
    occupancy: float = 0.0,
    lam: float = 0.0,
    t_avg: float = 1.0,
    n_target: float = float("inf"),
    highest_priority: bool = False,
) -> int:
    """1 (throttle) if the local condition fires, otherwise the tree's output."""
    if local_condition(occupancy, lam, t_avg, n_target, highest_priority):
        return 1
    return tree.predict(features)


@dataclass
class BaselineState:
    on_threshold: int
    off_threshold: int
    distress: bool = False

    def __post_init__(self):
        if not self.off_threshold < self.on_threshold:
            raise ConfigError(
                f"baseline needs off_threshold < on_threshold, got {self.off_threshold} >= {self.on_threshold}"
            )


def baseline_decide(occupancy: int, state: BaselineState) -> bool:
    """Hysteresis: on above ``on_threshold``, off below ``off_threshold``."""
    if occupancy > state.on_threshold:
        state.distress = True
    elif occupancy < state.off_threshold:
        state.distress = False
    return state.distress


def source_gate(dst: int, bus: CongestionSignalBus, policy: str) -> Gate:
    """Gate for one pending request of a source."""
    if policy == "none":
        return Gate.SEND
    if policy == "baseline":
        return Gate.WAIT if bus.any_set else Gate.SEND
    if policy == "proposed":
        return Gate.SKIP_TO_NEXT if bus.signal(dst) else Gate.SEND
    raise ConfigError(f"unknown policy {policy!r}")


# -- engine-facing policy objects ---------------------------------------------

class NoControl:
    name = "none"
    samples_features = False
    tracks_occupancy = False

    def advance(self, now: int) -> None:
        pass

    def on_occupancy(self, sink: int, t: int, occupancy: int) -> None:
        pass

    def on_sample(self, sink: int, t: int, features) -> None:
        pass

    def select(self, node: int, pending, now: int) -> Optional[int]:
        """Index into ``pending`` requests (oldest first) of the one to send, or None to wait."""
        return 0


class BaselineControl(NoControl):
    name = "baseline"
    tracks_occupancy = True

    def __init__(self, sinks: Iterable[int], capacity: int, on_threshold: Optional[int] = None,
                 off_threshold: Optional[int] = None, delay: int = DEFAULT_SIGNAL_DELAY):
        on = int(round(0.75 * capacity)) if on_threshold is None else on_threshold
        off = int(round(0.25 * capacity)) if off_threshold is None else off_threshold
        if on > capacity:
            raise ConfigError(f"baseline on_threshold {on} exceeds queue capacity {capacity}")
        self.states = {s: BaselineState(on, off) for s in sinks}
        self.bus = CongestionSignalBus(self.states, delay)

    def advance(self, now: int) -> None:
        self.bus.advance(now)

    def on_occupancy(self, sink: int, t: int, occupancy: int) -> None:
        state = self.states.get(sink)
        if state is not None:
            self.bus.set(t, sink, baseline_decide(occupancy, state))

    def select(self, node: int, pending, now: int) -> Optional[int]:
        return None if self.bus.raised else 0


class ProposedControl(NoControl):
    name = "proposed"
    samples_features = True
    tracks_occupancy = True

    def __init__(
        self,
        models: Mapping[int, DecisionTree],
        capacity: int,
        highest_priority_sources: Iterable[int] = (),
        n_target: Optional[float] = None,
        delay: int = DEFAULT_SIGNAL_DELAY,
        lookahead: int = 8,
        local_condition_enabled: bool = True,
        t_avg_alpha: float = 1.0 / 16.0,
    ):
        self.models = dict(models)
        self.bus = CongestionSignalBus(self.models, delay)
        self.delay = delay
        self.n_target = capacity - 2 if n_target is None else n_target
        if self.n_target > capacity:
            raise ConfigError(f"target occupancy {self.n_target} exceeds queue capacity {capacity}")
        self.priority = frozenset(highest_priority_sources)
        self.lc_enabled = local_condition_enabled
        self.lookahead = max(1, int(lookahead))
        self.t_avg_alpha = t_avg_alpha
        self.t_avg: Dict[int, float] = {}
        self.last_decision: Dict[int, int] = {}
        self.occupancy = {s: DelayLine(delay, 0) for s in self.models}
        self.inflow = {s: DelayLine(delay, 0.0) for s in self.models}

    def advance(self, now: int) -> None:
        self.bus.advance(now)

    def on_occupancy(self, sink: int, t: int, occupancy: int) -> None:
        line = self.occupancy.get(sink)
        if line is not None:
            line.set(t, occupancy)

    def on_sample(self, sink: int, t: int, features) -> None:
        tree = self.models.get(sink)
        if tree is None:
            return
        self.inflow[sink].set(t, features[SINK_INJECTION_RATE])
        self.bus.set(t, sink, tree.predict(features))

    def _decision_gap(self, core: int, now: int) -> float:
        last = self.last_decision.get(core)
        self.last_decision[core] = now
        t_avg = self.t_avg.get(core, 1.0)
        if last is not None and now > last:
            a = self.t_avg_alpha
            t_avg = a * (now - last) + (1.0 - a) * t_avg
            self.t_avg[core] = t_avg
        return t_avg

    def select(self, node: int, pending, now: int) -> Optional[int]:
        check_lc = self.lc_enabled and node in self.priority
        t_avg = self._decision_gap(node, now) if check_lc else 1.0
        visible = self.bus.visible
        for k in range(min(self.lookahead, len(pending))):
            dst = pending[k].dst
            if visible.get(dst, False):
                continue
            if check_lc:
                line = self.occupancy.get(dst)
                if line is not None:
                    N = line.read(now)
                    lam = self.inflow[dst].read(now)
                    if local_condition(N, lam, t_avg, self.n_target):
                        continue
            return k
        return None
