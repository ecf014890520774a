"""Cycle-level simulation kernel for a deflection-routed ring mesh.

Each cycle runs four phases in order:

1. every in-flight packet advances one hop (implicit: ring slots rotate);
   packets reaching their destination try to sink, packets reaching their
   turning point try to enter the turn buffer;
2. sinks whose service timer elapsed complete one packet;
3. cores generate new transactions;
4. turn buffers, then local egress queues, inject into free ring slots.
   A packet already on a ring always keeps its slot, so injections only
   ever fill empty slots.  Each node keeps responses and requests in
   separate egress queues; a response goes first, and only requests are
   subject to the throttling policy.

A ring of length ``L`` is a list of ``L`` slots.  The packet at node
position ``p`` at cycle ``t`` lives at index ``(p - t) mod L``, so advancing
the clock moves every packet without touching it.  Arrival, service and
generation instants are kept in per-cycle calendars.
"""

from __future__ import annotations

import enum
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from . import controllers as ctl
from .config import RunConfig
from .dtree import DecisionTree
from .errors import ConfigError, LivelockError
from .features import SinkFeatures
from .topology import Topology, build_mesh
from .trace import EventKind, TraceLog
from .traffic import CoreStream, PacketClass, ReplayStream, Transaction, home_nodes, load_trace

log = logging.getLogger(__name__)

# plain-string event kinds and class names for the hot paths
_GEN, _INJECT, _SINK = EventKind.GEN.value, EventKind.INJECT.value, EventKind.SINK.value
_DEFLECT, _TURN = EventKind.DEFLECT.value, EventKind.TURN_DEFLECT.value
_SERVICE, _DONE = EventKind.SERVICE.value, EventKind.DONE.value
_CLASS_NAMES = tuple(c.name for c in PacketClass)
LLC_REQUEST, LLC_RESPONSE = PacketClass.LLC_REQUEST, PacketClass.LLC_RESPONSE
MEM_REQUEST, MEM_RESPONSE = PacketClass.MEM_REQUEST, PacketClass.MEM_RESPONSE


class Priority(enum.IntEnum):
    IN_NETWORK = 0
    WAITING = 1


class SinkResult(enum.Enum):
    SUNK = "sunk"
    DEFLECTED = "deflected"


@dataclass(frozen=True)
class SinkAttemptOutcome:
    result: SinkResult
    packet_id: int
    time: int


class Packet:
    __slots__ = (
        "id", "src", "dst", "cls", "txn", "generation_time", "injection_time",
        "deflection_count", "priority", "payload_bytes", "ring", "target", "final", "is_response",
    )

    def __init__(self, pid: int, src: int, dst: int, cls: PacketClass, txn: Transaction,
                 generation_time: int, payload_bytes: int):
        self.id = pid
        self.src = src
        self.dst = dst
        self.cls = cls
        self.txn = txn
        self.generation_time = generation_time
        self.injection_time = -1
        self.deflection_count = 0
        self.priority = Priority.WAITING
        self.payload_bytes = payload_bytes
        self.ring = -1      # ring currently travelled, -1 when off-network
        self.target = -1    # node where the current ring segment ends
        self.final = False  # True when target is the destination
        self.is_response = cls.is_response

    def __repr__(self) -> str:
        return (f"Packet(id={self.id}, {self.cls.name}, {self.src}->{self.dst}, "
                f"gen={self.generation_time}, defl={self.deflection_count})")


class IngressQueue:
    """Finite FIFO at a sink.

    ``servers`` packets may be in service at once, each for ``service_time``
    cycles, and at most one service starts per cycle; with deterministic
    service, packets therefore leave in arrival order.
    """

    __slots__ = ("node", "capacity", "service_time", "servers", "packets", "started",
                 "last_start", "arrivals", "departures")

    def __init__(self, node: int, capacity: int, service_time: int, servers: int = 1):
        self.node = node
        self.capacity = capacity
        self.service_time = service_time
        self.servers = servers
        self.packets: deque = deque()
        self.started = 0         # leading packets whose service is scheduled
        self.last_start = -1
        self.arrivals = 0
        self.departures = 0

    @property
    def occupancy(self) -> int:
        return len(self.packets)

    @property
    def full(self) -> bool:
        return len(self.packets) >= self.capacity

    def schedule_starts(self, t: int) -> List[int]:
        """Start as many queued packets as servers allow; returns completion times."""
        done = []
        while self.started < len(self.packets) and self.started < self.servers:
            start = max(t, self.last_start + 1)
            self.last_start = start
            self.started += 1
            done.append(start + self.service_time)
        return done


def try_sink(packet: Packet, queue: IngressQueue, t: int) -> SinkAttemptOutcome:
    """Write ``packet`` into ``queue`` unless it is full, in which case it bounces."""
    if len(queue.packets) >= queue.capacity:
        packet.deflection_count += 1
        return SinkAttemptOutcome(SinkResult.DEFLECTED, packet.id, t)
    queue.packets.append(packet)
    queue.arrivals += 1
    return SinkAttemptOutcome(SinkResult.SUNK, packet.id, t)


def make_controller(cfg: RunConfig, topo: Topology, models: Optional[Dict[int, DecisionTree]] = None):
    c = cfg.controller
    if c.policy == "none":
        return ctl.NoControl()
    sinks = tuple(topo.llc_nodes) + tuple(topo.memory_controllers)
    if c.policy == "baseline":
        return ctl.BaselineControl(sinks, cfg.queues.capacity, c.baseline_on, c.baseline_off, c.signal_delay)
    if models is None:
        from .pipeline import load_models
        models = load_models(cfg, sinks)
    missing = [s for s in sinks if s not in models]
    if missing:
        raise ConfigError(f"proposed policy has no model for sinks {missing}")
    return ctl.ProposedControl(
        models,
        cfg.queues.capacity,
        topo.config.highest_priority_sources,
        c.n_target,
        c.signal_delay,
        c.lookahead,
        c.local_condition,
    )


@dataclass
class SimResult:
    trace: TraceLog
    metrics: "object"
    datasets: Dict[int, list] = field(default_factory=dict)
    counters: Dict[str, int] = field(default_factory=dict)


class Simulator:
    """One deterministic run; ``step()`` advances a cycle, ``run()`` does the whole window."""

    def __init__(self, config: RunConfig, controller=None, models=None, collect_features: bool = False):
        self.cfg = config
        self.topo = topo = build_mesh(config.mesh.to_mesh_config())
        self.controller = controller if controller is not None else make_controller(config, topo, models)
        self.clock = 0
        rows, cols = topo.rows, topo.cols
        self.rows, self.cols = rows, cols
        self.ring_len = [cols] * rows + [rows] * cols
        self.slots: List[list] = [[None] * L for L in self.ring_len]
        # pos[ring][node]: position of node along ring
        self.pos = [[n % cols for n in range(rows * cols)]] * rows + [[n // cols for n in range(rows * cols)]] * cols
        self.arrivals: Dict[int, list] = defaultdict(list)
        self.services: Dict[int, list] = defaultdict(list)
        self.generations: Dict[int, list] = defaultdict(list)

        q = config.queues
        self.cores = topo.cores
        self.core_set = frozenset(topo.cores)
        self.llc_nodes = topo.llc_nodes
        self.mc_nodes = topo.memory_controllers
        self.queues: Dict[int, IngressQueue] = {}
        for n in range(topo.num_nodes):
            if n in self.core_set:
                s = q.core_service_time
                k = 1
            elif n in self.mc_nodes:
                s = q.mc_service
                k = q.mc_servers
            else:
                s = q.llc_service_time
                k = 1
            self.queues[n] = IngressQueue(n, q.capacity, s, k)
        self.turn_capacity = q.turn_capacity
        self.turnq: List[deque] = [deque() for _ in range(topo.num_nodes)]
        self.egress: List[deque] = [deque() for _ in range(topo.num_nodes)]       # requests
        self.resp_egress: List[deque] = [deque() for _ in range(topo.num_nodes)]  # responses
        self.active = set()  # nodes with something to inject
        self.outstanding = defaultdict(int)
        self.max_outstanding = q.max_outstanding

        # per (src, dst): first ring, its target node, whether that is dst
        self.first_leg = {}
        for s in range(topo.num_nodes):
            for d in range(topo.num_nodes):
                if s == d:
                    continue
                if topo.col(s) == topo.col(d):
                    self.first_leg[s, d] = (topo.col_ring(s), d, True)
                elif topo.row(s) == topo.row(d):
                    self.first_leg[s, d] = (topo.row_ring(s), d, True)
                else:
                    self.first_leg[s, d] = (topo.col_ring(s), topo.turning_point(s, d), False)

        feature_sinks = tuple(self.llc_nodes) + tuple(self.mc_nodes)
        want_features = collect_features or getattr(self.controller, "samples_features", False)
        self.features: Dict[int, SinkFeatures] = {}
        if want_features:
            for n in feature_sinks:
                self.features[n] = SinkFeatures(q.capacity, config.controller.alpha)
        self.collect = collect_features
        self.poll_interval = config.controller.idle_poll
        self.datasets: Dict[int, list] = {n: [] for n in feature_sinks} if collect_features else {}

        w = config.workload
        self.workload = w
        self.trace = TraceLog(
            config.trace_level,
            {
                "cores": list(self.cores),
                "llc_nodes": list(self.llc_nodes),
                "memory_controllers": list(self.mc_nodes),
                "request_bytes": w.request_bytes,
                "response_bytes": w.response_bytes,
                "warmup": config.cycles.warmup,
                "total": config.cycles.total,
                "policy": getattr(self.controller, "name", "custom"),
                "seed": config.seed,
                "injection_rate": w.injection_rate,
                "max_rate": w.max_rate,
                "llc_hit_rate": w.llc_hit_rate,
                "trace_level": config.trace_level,
            },
        )
        self._keep_packet_events = config.trace_level == "packet"
        self._event = self.trace.events.append
        self._tracks_occupancy = getattr(self.controller, "tracks_occupancy", True)
        self.max_deflections = config.max_deflections
        self.next_packet_id = 0
        self.next_txn_id = 0
        self.created = 0
        self.retired = 0
        self.counters = defaultdict(int)

        if w.trace_path:
            per_core = load_trace(w.trace_path)
            stray = set(per_core) - self.core_set
            if stray:
                raise ConfigError(f"trace names non-core nodes {sorted(stray)}")
            self.streams = {c: ReplayStream(c, per_core.get(c, [])) for c in self.cores}
        else:
            self.streams = {c: CoreStream(c, w) for c in self.cores}
        for c in self.cores:
            t = self.streams[c].next_time(-1)
            if t is not None:
                self.generations[t].append(c)

    # -- helpers -------------------------------------------------------------

    def _new_packet(self, src, dst, cls, txn, t, nbytes) -> Packet:
        p = Packet(self.next_packet_id, src, dst, cls, txn, t, nbytes)
        self.next_packet_id += 1
        self.created += 1
        return p

    def _place(self, p: Packet, ring: int, node: int, target: int, final: bool, t: int) -> bool:
        """Put ``p`` on ``ring`` at ``node`` if that slot is free."""
        L = self.ring_len[ring]
        slots = self.slots[ring]
        pos_of = self.pos[ring]
        pos = pos_of[node]
        idx = (pos - t) % L
        if slots[idx] is not None:
            return False
        slots[idx] = p
        p.ring = ring
        p.target = target
        p.final = final
        dist = (pos_of[target] - pos) % L or L
        self.arrivals[t + dist].append(p)
        return True

    def _remove(self, p: Packet, node: int, t: int) -> None:
        ring = p.ring
        self.slots[ring][(self.pos[ring][node] - t) % self.ring_len[ring]] = None
        p.ring = -1

    def _deflect(self, p: Packet, node: int, t: int, kind: str) -> None:
        if kind == _TURN:
            p.deflection_count += 1  # destination bounces are counted on arrival
        if p.deflection_count > self.max_deflections:
            raise LivelockError(
                f"packet {p.id} ({p.src}->{p.dst}) deflected {p.deflection_count} times by cycle {t}",
                p.id, t)
        self.arrivals[t + self.ring_len[p.ring]].append(p)
        self._event((kind, t, p.id, node, "", p.generation_time))

    # -- phases ----------------------------------------------------------------

    def _arrive(self, t: int) -> None:
        batch = self.arrivals.pop(t, None)
        if not batch:
            return
        if len(batch) > 1:
            batch.sort(key=lambda p: (p.injection_time, p.id))
        queues, features, counters = self.queues, self.features, self.counters
        on_sample = self.controller.on_sample
        for p in batch:
            node = p.target
            if p.final:
                q = queues[node]
                before = len(q.packets)
                sunk = before < q.capacity
                if sunk:
                    q.packets.append(p)
                    q.arrivals += 1
                else:
                    p.deflection_count += 1
                feats = features.get(node)
                if feats is not None:
                    fv = feats.sample(t, before, sunk)
                    on_sample(node, t, fv)
                    if self.collect:
                        self.datasets[node].append((t, fv, None if sunk else p.injection_time))
                if sunk:
                    self._remove(p, node, t)
                    if self._keep_packet_events:
                        self._event((_SINK, t, p.id, node, _CLASS_NAMES[p.cls], len(q.packets)))
                    if q.started < q.servers:
                        for done_at in q.schedule_starts(t):
                            self.services[done_at].append(node)
                    if self._tracks_occupancy:
                        self.controller.on_occupancy(node, t, len(q.packets))
                    if p.is_response:
                        self._complete(p, t)
                else:
                    counters["deflections"] += 1
                    self._deflect(p, node, t, _DEFLECT)
            else:
                tq = self.turnq[node]
                if len(tq) < self.turn_capacity:
                    self._remove(p, node, t)
                    tq.append(p)
                    self.active.add(node)
                else:
                    counters["turn_deflections"] += 1
                    self._deflect(p, node, t, _TURN)

    def _complete(self, p: Packet, t: int) -> None:
        txn = p.txn
        txn.completion_time = t
        txn.response_packet_ids.append(p.id)
        self.outstanding[txn.core] -= 1
        self._event((_DONE, t, txn.id, txn.core,
                          "miss" if txn.is_llc_miss else "hit", t - txn.start_time))

    def _serve(self, t: int) -> None:
        done = self.services.pop(t, None)
        if not done:
            return
        w = self.workload
        for node in done:
            q = self.queues[node]
            p = q.packets.popleft()
            q.started -= 1
            q.departures += 1
            duration = q.service_time
            self.retired += 1
            feats = self.features.get(node)
            if feats is not None:
                feats.on_departure(t, duration)
            if self._keep_packet_events:
                self._event((_SERVICE, t, p.id, node, _CLASS_NAMES[p.cls], duration))
            if q.packets:
                for done_at in q.schedule_starts(t):
                    self.services[done_at].append(node)
            if self._tracks_occupancy:
                self.controller.on_occupancy(node, t, len(q.packets))

            txn = p.txn
            cls = p.cls
            if cls == LLC_REQUEST:
                if txn.is_llc_miss:
                    nxt = self._new_packet(node, txn.mc, MEM_REQUEST, txn, t, w.request_bytes)
                else:
                    nxt = self._new_packet(node, txn.core, LLC_RESPONSE, txn, t, w.response_bytes)
            elif cls == MEM_REQUEST:
                nxt = self._new_packet(node, txn.core, MEM_RESPONSE, txn, t, w.response_bytes)
            else:
                continue
            if nxt.is_response:
                self.resp_egress[node].append(nxt)
            else:
                self.egress[node].append(nxt)
            self.active.add(node)

    def _generate(self, t: int) -> None:
        due = self.generations.pop(t, None)
        if not due:
            return
        w = self.workload
        hit_rate = w.llc_hit_rate
        for core in sorted(due):
            stream = self.streams[core]
            tid = self.next_txn_id
            self.next_txn_id += 1
            if isinstance(stream, ReplayStream):
                is_miss = stream.is_miss_at(t)
            else:
                is_miss = stream.rng.random() >= hit_rate
            llc, mc = home_nodes(tid, self.llc_nodes, self.mc_nodes)
            if is_miss and mc < 0:
                raise ConfigError("miss traffic requires at least one memory controller")
            txn = Transaction(tid, core, is_miss, llc, mc, t)
            p = self._new_packet(core, llc, LLC_REQUEST, txn, t, w.request_bytes)
            txn.request_packet_id = p.id
            self.egress[core].append(p)
            self.active.add(core)
            self._event((_GEN, t, tid, core, "miss" if is_miss else "hit", int(is_miss)))
            nt = stream.next_time(t)
            if nt is not None:
                self.generations[nt].append(core)

    def _inject(self, t: int) -> None:
        if not self.active:
            return
        first_leg = self.first_leg
        place = self._place
        select = self.controller.select
        slots, pos, ring_len = self.slots, self.pos, self.ring_len
        cols = self.cols
        idle = []
        for node in sorted(self.active):
            tq = self.turnq[node]
            if tq:
                ring = node // cols
                if slots[ring][(pos[ring][node] - t) % ring_len[ring]] is None:
                    p = tq.popleft()
                    place(p, ring, node, p.dst, True, t)
            re = self.resp_egress[node]
            eg = self.egress[node]
            sent = False
            if re:
                p = re[0]
                ring, target, final = first_leg[node, p.dst]
                if slots[ring][(pos[ring][node] - t) % ring_len[ring]] is None:
                    place(p, ring, node, target, final, t)
                    re.popleft()
                    self._injected(p, node, t)
                    sent = True
            if eg and not sent:
                if (self.max_outstanding and node in self.core_set
                        and self.outstanding[node] >= self.max_outstanding):
                    k = None
                else:
                    k = select(node, eg, t)
                if k is not None:
                    p = eg[k]
                    ring, target, final = first_leg[node, p.dst]
                    if slots[ring][(pos[ring][node] - t) % ring_len[ring]] is None:
                        place(p, ring, node, target, final, t)
                        if k == 0:
                            eg.popleft()
                        else:
                            del eg[k]
                        self._injected(p, node, t)
            if not tq and not eg and not re:
                idle.append(node)
        for node in idle:
            self.active.discard(node)

    def _injected(self, p: Packet, node: int, t: int) -> None:
        p.injection_time = t
        p.priority = Priority.IN_NETWORK
        cls = p.cls
        if cls == LLC_REQUEST:
            self.outstanding[node] += 1
            self.counters["injected_requests"] += 1
        self.counters["injected"] += 1
        self._event((_INJECT, t, p.id, node, _CLASS_NAMES[cls], int(cls)))

    # -- driver ------------------------------------------------------------------

    def _poll(self, t: int) -> None:
        """Idle poll: sample sinks that saw no attempt during the last poll interval."""
        interval = self.poll_interval
        for node, feats in self.features.items():
            if t - feats.last_sample >= interval:
                fv = feats.tick(t, len(self.queues[node].packets))
                self.controller.on_sample(node, t, fv)
                if self.collect:
                    self.datasets[node].append((t, fv, None))

    def step(self) -> None:
        t = self.clock
        self.controller.advance(t)
        if self.poll_interval and self.features and t % self.poll_interval == 0:
            self._poll(t)
        self._arrive(t)
        self._serve(t)
        self._generate(t)
        self._inject(t)
        if self.cfg.debug_checks:
            self.check_invariants()
        self.clock = t + 1

    def run(self) -> SimResult:
        from .metrics import compute_metrics

        total = self.cfg.cycles.total
        step = self.step
        while self.clock < total:
            step()
        self.trace.meta["packets_created"] = self.created
        window = (self.cfg.cycles.warmup, total)
        return SimResult(self.trace, compute_metrics(self.trace, window), self.datasets, dict(self.counters))

    # -- invariants ----------------------------------------------------------------

    def in_flight(self) -> List[Packet]:
        return [p for ring in self.slots for p in ring if p is not None]

    def check_invariants(self) -> None:
        """Packet conservation and ring-slot consistency (debug only)."""
        flying = self.in_flight()
        in_egress = sum(len(e) for e in self.egress) + sum(len(e) for e in self.resp_egress)
        in_turn = sum(len(q) for q in self.turnq)
        in_queues = sum(len(q.packets) for q in self.queues.values())
        total = len(flying) + in_egress + in_turn + in_queues + self.retired
        if total != self.created:
            raise AssertionError(
                f"cycle {self.clock}: packet conservation broken "
                f"({len(flying)} flying + {in_egress} egress + {in_turn} turn + {in_queues} queued "
                f"+ {self.retired} retired != {self.created} created)")
        seen = set()
        for p in flying:
            if p.id in seen:
                raise AssertionError(f"packet {p.id} occupies two ring slots")
            seen.add(p.id)
        for q in self.queues.values():
            if not 0 <= len(q.packets) <= q.capacity:
                raise AssertionError(f"queue at node {q.node} over capacity")
            if q.departures > q.arrivals:
                raise AssertionError(f"queue at node {q.node} served more than it received")


def run(config: RunConfig, models=None, controller=None, collect_features: bool = False) -> SimResult:
    """Simulate ``config`` end to end; identical config and seed give an identical trace."""
    return Simulator(config, controller=controller, models=models, collect_features=collect_features).run()
