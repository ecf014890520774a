"""Append-only simulation event log.

On disk a trace is a text file::

    # nocthrottle-trace v1
    # meta {"cores": [...], "response_bytes": 64, ...}
    kind,cycle,packet_id,node,outcome,value
    DONE,1234,88,6,miss,97
    ...

``value`` depends on the event kind (see ``EventKind``).  The ``summary``
level keeps GEN, INJECT, DEFLECT, TURN_DEFLECT and DONE events; ``packet``
adds per-packet SINK and SERVICE events.
"""

from __future__ import annotations

import enum
import hashlib
import json
from pathlib import Path
from typing import Iterator, List, NamedTuple, Optional

TRACE_MAGIC = "# nocthrottle-trace v1"
TRACE_HEADER = "kind,cycle,packet_id,node,outcome,value"


class EventKind(str, enum.Enum):
    GEN = "GEN"                    # transaction generated; packet_id = txn id, value = 1 if miss
    INJECT = "INJECT"              # packet entered the network; value = packet class
    SINK = "SINK"                  # packet written to an ingress queue; value = occupancy after
    DEFLECT = "DEFLECT"            # bounced at its destination; value = packet generation time
    TURN_DEFLECT = "TURN_DEFLECT"  # refused at a turning point; value = packet generation time
    SERVICE = "SERVICE"            # sink finished serving a packet; value = service duration
    DONE = "DONE"                  # transaction delivered to its core; value = latency

    def __str__(self) -> str:
        return self.value


SUMMARY_KINDS = frozenset(
    {EventKind.GEN, EventKind.INJECT, EventKind.DEFLECT, EventKind.TURN_DEFLECT, EventKind.DONE}
)


class Event(NamedTuple):
    kind: str
    cycle: int
    packet_id: int
    node: int
    outcome: str
    value: int


class TraceLog:
    """Events are stored as plain tuples in ``Event`` field order; iteration yields ``Event``."""

    def __init__(self, level: str = "summary", meta: Optional[dict] = None):
        self.level = level
        self.meta: dict = dict(meta or {})
        self.events: List[tuple] = []
        self.keep = None if level == "packet" else SUMMARY_KINDS

    def wants(self, kind: EventKind) -> bool:
        return self.keep is None or kind in self.keep

    def append(self, kind: EventKind, cycle: int, packet_id: int, node: int, outcome: str = "", value: int = 0):
        self.events.append((kind.value, cycle, packet_id, node, outcome, value))

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        return (Event._make(e) for e in self.events)

    def of_kind(self, kind) -> Iterator[Event]:
        k = EventKind(kind).value
        return (Event._make(e) for e in self.events if e[0] == k)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.meta, sort_keys=True).encode())
        for e in self.events:
            h.update(("%s,%d,%d,%d,%s,%d\n" % e).encode())
        return h.hexdigest()

    def write(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w") as fh:
            fh.write(TRACE_MAGIC + "\n")
            fh.write("# meta " + json.dumps(self.meta, sort_keys=True) + "\n")
            fh.write(TRACE_HEADER + "\n")
            for e in self.events:
                fh.write("%s,%d,%d,%d,%s,%d\n" % e)
        tmp.replace(path)

    @classmethod
    def read(cls, path) -> "TraceLog":
        with open(path) as fh:
            if fh.readline().rstrip("\n") != TRACE_MAGIC:
                raise ValueError(f"{path}: not a v1 trace file")
            meta_line = fh.readline()
            if not meta_line.startswith("# meta "):
                raise ValueError(f"{path}: missing meta line")
            meta = json.loads(meta_line[len("# meta "):])
            if fh.readline().rstrip("\n") != TRACE_HEADER:
                raise ValueError(f"{path}: bad column header")
            log = cls(meta.get("trace_level", "summary"), meta)
            for line in fh:
                kind, cycle, pid, node, outcome, value = line.rstrip("\n").split(",")
                log.events.append((kind, int(cycle), int(pid), int(node), outcome, int(value)))
        return log
