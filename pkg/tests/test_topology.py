from __future__ import annotations

from collections import deque
from itertools import product

import pytest

from nocthrottle.errors import ConfigError, RouteError
from nocthrottle.topology import MeshConfig, build_mesh, column_orbit, deflection_orbit, yx_route


def mesh(rows, cols, mcs=(), hp=()):
    return build_mesh(MeshConfig(rows, cols, tuple(mcs), tuple(hp)))


def bfs_distance(topo, src, dst):
    """Shortest hop count over the ring adjacency, by breadth-first search."""
    seen = {src: 0}
    todo = deque([src])
    while todo:
        here = todo.popleft()
        for nxt in topo.neighbors(here):
            if nxt not in seen:
                seen[nxt] = seen[here] + 1
                todo.append(nxt)
    return seen[dst]


def test_4x4_has_four_row_and_four_column_rings():
    topo = mesh(4, 4)
    assert topo.num_nodes == 16
    assert topo.num_rings == 8
    assert [topo.ring_length(r) for r in range(8)] == [4] * 8


def test_2x2_is_the_smallest_mesh():
    topo = mesh(2, 2)
    assert topo.num_nodes == 4
    assert all(topo.ring_length(r) == 2 for r in range(topo.num_rings))
    with pytest.raises(ConfigError):
        mesh(1, 4)


def test_6x6_with_two_memory_controllers():
    topo = mesh(6, 6, mcs=(3, 32), hp=(0, 12, 24))
    assert topo.memory_controllers == (3, 32)
    assert not set(topo.cores) & {3, 32}
    assert not set(topo.llc_nodes) & set(topo.cores)
    assert len(topo.cores) + len(topo.llc_nodes) + 2 == 36


@pytest.mark.parametrize("bad", [
    dict(mcs=(36,)),
    dict(mcs=(3, 3)),
    dict(mcs=(0,), hp=(0,)),
    dict(hp=(1,)),  # node 1 is an LLC bank in the checkerboard layout, not a core
])
def test_invalid_special_nodes_are_rejected(bad):
    with pytest.raises(ConfigError):
        mesh(6, 6, **bad)


def test_route_11_to_1_turns_at_3():
    topo = mesh(4, 4)
    route = yx_route(11, 1, topo)
    assert route.turning_point == 3
    assert route.hops == (15, 3, 0, 1)


def test_same_row_route_turns_at_source():
    topo = mesh(4, 4)
    route = yx_route(4, 6, topo)
    assert route.turning_point == 4
    assert route.hops == (5, 6)


def test_degenerate_route_is_an_error():
    with pytest.raises(RouteError):
        yx_route(5, 5, mesh(4, 4))


@pytest.mark.parametrize("rows,cols", [(3, 3), (2, 5), (4, 4), (6, 6)])
def test_route_lengths_match_breadth_first_search(rows, cols):
    topo = mesh(rows, cols)
    for src, dst in product(range(topo.num_nodes), repeat=2):
        if src == dst:
            continue
        route = yx_route(src, dst, topo)
        assert len(route) == bfs_distance(topo, src, dst)
        assert route.hops[-1] == dst
        prev = src
        for hop in route.hops:
            assert hop in topo.neighbors(prev)
            prev = hop
        # column travel first: every hop up to the turn keeps the source column
        turn_at = route.hops.index(route.turning_point) + 1 if route.turning_point != src else 0
        assert all(topo.col(h) == topo.col(src) for h in route.hops[:turn_at])
        assert all(topo.row(h) == topo.row(dst) for h in route.hops[turn_at:])


def test_deflection_orbit_is_one_row_ring():
    topo = mesh(4, 4)
    orbit = deflection_orbit(1, topo)
    assert orbit.hops == (2, 3, 0, 1)
    assert len(deflection_orbit(0, mesh(2, 2))) == 2
    six = mesh(6, 6)
    assert all(len(deflection_orbit(n, six)) == 6 for n in range(36))
    assert column_orbit(1, topo).hops == (5, 9, 13, 1)
