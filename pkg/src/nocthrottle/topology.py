"""Mesh of unidirectional row and column rings with Y-X routing.

Nodes are numbered row-major from 0.  Every row and every column is a
unidirectional ring that advances towards increasing index and wraps around,
so a packet that cannot leave the ring simply keeps circulating and comes
back to the same node one ring-length later.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from .errors import ConfigError, RouteError

NodeId = int


@dataclass(frozen=True)
class MeshConfig:
    rows: int
    cols: int
    memory_controller_nodes: Tuple[NodeId, ...] = ()
    highest_priority_sources: Tuple[NodeId, ...] = ()
    # None selects the checkerboard layout (see default_core_nodes)
    core_nodes: Optional[Tuple[NodeId, ...]] = None

    def __post_init__(self):
        for name in ("memory_controller_nodes", "highest_priority_sources", "core_nodes"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(int(v) for v in value))
        self.validate()

    @property
    def num_nodes(self) -> int:
        return self.rows * self.cols

    def validate(self) -> None:
        if not isinstance(self.rows, int) or not isinstance(self.cols, int):
            raise ConfigError("mesh rows and cols must be integers")
        if self.rows < 2 or self.cols < 2:
            raise ConfigError(f"mesh must be at least 2x2, got {self.rows}x{self.cols}")
        n = self.num_nodes

        def check(name: str, nodes: Sequence[int]) -> None:
            for v in nodes:
                if not 0 <= v < n:
                    raise ConfigError(f"{name}: node {v} outside [0, {n})")
            if len(set(nodes)) != len(nodes):
                raise ConfigError(f"{name}: duplicate nodes {list(nodes)}")

        check("memory_controller_nodes", self.memory_controller_nodes)
        check("highest_priority_sources", self.highest_priority_sources)
        overlap = set(self.memory_controller_nodes) & set(self.highest_priority_sources)
        if overlap:
            raise ConfigError(
                f"memory controllers and highest-priority sources overlap: {sorted(overlap)}"
            )
        if self.core_nodes is not None:
            check("core_nodes", self.core_nodes)
            if set(self.core_nodes) & set(self.memory_controller_nodes):
                raise ConfigError("core_nodes may not contain memory controllers")
        cores = set(self.cores())
        if not cores:
            raise ConfigError("mesh has no core (source) nodes")
        stray = set(self.highest_priority_sources) - cores
        if stray:
            raise ConfigError(f"highest-priority sources {sorted(stray)} are not cores")
        if not self.llc_nodes():
            raise ConfigError("mesh has no node left for LLC banks")

    def cores(self) -> Tuple[NodeId, ...]:
        if self.core_nodes is not None:
            return tuple(sorted(self.core_nodes))
        return default_core_nodes(self.rows, self.cols, self.memory_controller_nodes)

    def llc_nodes(self) -> Tuple[NodeId, ...]:
        taken = set(self.cores()) | set(self.memory_controller_nodes)
        return tuple(v for v in range(self.num_nodes) if v not in taken)


def default_core_nodes(rows: int, cols: int, mcs: Sequence[int] = ()) -> Tuple[NodeId, ...]:
    """Checkerboard placement: cores where row+col is even, minus MC nodes."""
    mcs = set(mcs)
    return tuple(
        r * cols + c
        for r in range(rows)
        for c in range(cols)
        if (r + c) % 2 == 0 and r * cols + c not in mcs
    )


@dataclass(frozen=True)
class Route:
    hops: Tuple[NodeId, ...]
    turning_point: NodeId

    def __len__(self) -> int:
        return len(self.hops)


@dataclass(frozen=True)
class Topology:
    config: MeshConfig
    cores: Tuple[NodeId, ...] = field(init=False)
    llc_nodes: Tuple[NodeId, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "cores", self.config.cores())
        object.__setattr__(self, "llc_nodes", self.config.llc_nodes())

    @property
    def rows(self) -> int:
        return self.config.rows

    @property
    def cols(self) -> int:
        return self.config.cols

    @property
    def num_nodes(self) -> int:
        return self.config.num_nodes

    @property
    def memory_controllers(self) -> Tuple[NodeId, ...]:
        return self.config.memory_controller_nodes

    @property
    def num_rings(self) -> int:
        return self.rows + self.cols

    def row(self, node: NodeId) -> int:
        return node // self.cols

    def col(self, node: NodeId) -> int:
        return node % self.cols

    def node(self, row: int, col: int) -> NodeId:
        return row * self.cols + col

    def check(self, node: NodeId) -> None:
        if not 0 <= node < self.num_nodes:
            raise ConfigError(f"node {node} outside [0, {self.num_nodes})")

    # Ring k < rows is row ring k; ring rows + c is column ring c.  A node's
    # position on its row ring is its column, on its column ring its row.
    def row_ring(self, node: NodeId) -> int:
        return self.row(node)

    def col_ring(self, node: NodeId) -> int:
        return self.rows + self.col(node)

    def ring_length(self, ring: int) -> int:
        return self.cols if ring < self.rows else self.rows

    def position(self, ring: int, node: NodeId) -> int:
        return self.col(node) if ring < self.rows else self.row(node)

    def next_on_row(self, node: NodeId) -> NodeId:
        return self.node(self.row(node), (self.col(node) + 1) % self.cols)

    def next_on_column(self, node: NodeId) -> NodeId:
        return self.node((self.row(node) + 1) % self.rows, self.col(node))

    def neighbors(self, node: NodeId) -> Tuple[NodeId, NodeId]:
        """Downstream neighbours (row ring, column ring)."""
        return self.next_on_row(node), self.next_on_column(node)

    def row_distance(self, src: NodeId, dst: NodeId) -> int:
        return (self.col(dst) - self.col(src)) % self.cols

    def col_distance(self, src: NodeId, dst: NodeId) -> int:
        return (self.row(dst) - self.row(src)) % self.rows

    def turning_point(self, src: NodeId, dst: NodeId) -> NodeId:
        if self.row(src) == self.row(dst):
            return src
        return self.node(self.row(dst), self.col(src))


def build_mesh(config: MeshConfig) -> Topology:
    config.validate()
    return Topology(config)


def yx_route(src: NodeId, dst: NodeId, topology: Topology) -> Route:
    """Column (Y) travel to the turning point, then row (X) travel to dst."""
    topology.check(src)
    topology.check(dst)
    if src == dst:
        raise RouteError(f"degenerate route: source and destination are both node {src}")
    hops: List[NodeId] = []
    turn = topology.turning_point(src, dst)
    here = src
    while here != turn:
        here = topology.next_on_column(here)
        hops.append(here)
    while here != dst:
        here = topology.next_on_row(here)
        hops.append(here)
    return Route(tuple(hops), turn)


def deflection_orbit(node: NodeId, topology: Topology) -> Route:
    """Full row-ring cycle from ``node`` back to ``node``."""
    topology.check(node)
    hops = []
    here = node
    for _ in range(topology.cols):
        here = topology.next_on_row(here)
        hops.append(here)
    return Route(tuple(hops), node)


def column_orbit(node: NodeId, topology: Topology) -> Route:
    """Full column-ring cycle; taken by packets refused at a turning point."""
    topology.check(node)
    hops = []
    here = node
    for _ in range(topology.rows):
        here = topology.next_on_column(here)
        hops.append(here)
    return Route(tuple(hops), node)
