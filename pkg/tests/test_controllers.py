from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from nocthrottle import dtree
from nocthrottle.controllers import (
    BaselineControl,
    BaselineState,
    CongestionSignalBus,
    DelayLine,
    Gate,
    NoControl,
    ProposedControl,
    algorithm1_decide,
    baseline_decide,
    local_condition,
    source_gate,
)
from nocthrottle.dtree import DecisionTree
from nocthrottle.errors import ConfigError
from nocthrottle.features import GRAD_INJECTION_RATE, NUM_FEATURES, OCCUPANCY


def pending(*dsts):
    return [SimpleNamespace(dst=d) for d in dsts]


def test_local_condition_arithmetic():
    assert local_condition(16, 0.5, 8, 20) is False
    assert local_condition(20, 0.01, 1, 20) is True
    assert local_condition(31, 5.0, 9, 20, highest_priority=False) is False


def test_algorithm1_local_condition_overrides_tree():
    x = [0.0] * NUM_FEATURES
    never = DecisionTree.leaf(0)
    assert algorithm1_decide(x, never, occupancy=20, lam=1, t_avg=1, n_target=20, highest_priority=True) == 1
    assert algorithm1_decide(x, never, occupancy=20, lam=1, t_avg=1, n_target=20, highest_priority=False) == 0
    assert algorithm1_decide(x, DecisionTree.leaf(1)) == 1


def test_tree_learns_occupancy_and_rising_rate():
    rng = np.random.default_rng(0)
    X = np.zeros((600, NUM_FEATURES))
    X[:, OCCUPANCY] = rng.uniform(0, 32, 600)
    X[:, GRAD_INJECTION_RATE] = rng.uniform(-1, 1, 600)
    y = ((X[:, OCCUPANCY] > 24) & (X[:, GRAD_INJECTION_RATE] > 0)).astype(int)
    tree = dtree.train((X, y), max_depth=2)
    hot, cold = [0.0] * NUM_FEATURES, [0.0] * NUM_FEATURES
    hot[OCCUPANCY], hot[GRAD_INJECTION_RATE] = 30.0, 0.5
    cold[OCCUPANCY], cold[GRAD_INJECTION_RATE] = 30.0, -0.5
    assert algorithm1_decide(hot, tree) == 1
    assert algorithm1_decide(cold, tree) == 0


def test_baseline_hysteresis_ramp():
    state = BaselineState(on_threshold=24, off_threshold=8)
    trace = [(occ, baseline_decide(occ, state)) for occ in list(range(0, 33)) + list(range(32, -1, -1))]
    up, down = trace[:33], trace[33:]
    assert min(occ for occ, d in up if d) == 25
    assert max(occ for occ, d in down if not d) == 7
    # exactly two toggles over one full crossing: no chattering
    flips = sum(1 for (_, a), (_, b) in zip(trace, trace[1:]) if a != b)
    assert flips == 2
    with pytest.raises(ConfigError):
        BaselineState(8, 8)


def test_baseline_state_holds_between_thresholds():
    state = BaselineState(24, 8, distress=True)
    assert all(baseline_decide(occ, state) for occ in range(8, 25))
    state.distress = False
    assert not any(baseline_decide(occ, state) for occ in range(8, 25))


def test_bus_delivers_after_the_delay():
    bus = CongestionSignalBus([1, 2], propagation_delay=10)
    bus.set(5, 1, True)
    bus.advance(14)
    assert not bus.signal(1) and not bus.any_set
    bus.advance(15)
    assert bus.signal(1) and bus.any_set and bus.raised == 1
    bus.set(20, 1, False)
    bus.advance(30)
    assert not bus.any_set
    with pytest.raises(ConfigError):
        CongestionSignalBus([1], -1)


def test_delay_line():
    line = DelayLine(3, initial=0)
    line.set(1, 7)
    line.set(2, 9)
    assert line.read(3) == 0
    assert line.read(4) == 7
    assert line.read(10) == 9


def test_one_congested_sink_blocks_every_source():
    ctl = BaselineControl([1, 5], capacity=32, delay=10)
    ctl.on_occupancy(1, 0, 30)
    ctl.advance(10)
    assert all(ctl.select(node, pending(5), 10) is None for node in (0, 2, 12))
    ctl.on_occupancy(1, 11, 3)
    ctl.advance(21)
    assert ctl.select(0, pending(5), 21) == 0


def test_source_gate_policies():
    bus = CongestionSignalBus([1, 5], 0)
    bus.set(0, 1, True)
    bus.advance(0)
    assert source_gate(1, bus, "none") is Gate.SEND
    assert source_gate(5, bus, "baseline") is Gate.WAIT
    assert source_gate(1, bus, "proposed") is Gate.SKIP_TO_NEXT
    assert source_gate(5, bus, "proposed") is Gate.SEND
    with pytest.raises(ConfigError):
        source_gate(5, bus, "other")


def test_proposed_skips_to_next_clear_destination():
    models = {1: DecisionTree.leaf(1), 5: DecisionTree.leaf(0)}
    ctl = ProposedControl(models, capacity=32, delay=10)
    x = [0.0] * NUM_FEATURES
    ctl.on_sample(1, 0, x)
    ctl.on_sample(5, 0, x)
    ctl.advance(10)
    assert ctl.select(0, pending(1, 5), 10) == 1
    assert ctl.select(0, pending(1, 1), 10) is None
    assert NoControl().select(0, pending(1), 10) == 0


def test_proposed_local_condition_only_at_priority_sources():
    models = {1: DecisionTree.leaf(0)}
    ctl = ProposedControl(models, capacity=32, highest_priority_sources=[0], n_target=20, delay=0)
    x = [0.0] * NUM_FEATURES
    x[0] = 0.5  # sink injection rate
    ctl.on_sample(1, 0, x)
    ctl.on_occupancy(1, 0, 20)
    ctl.advance(0)
    assert ctl.select(0, pending(1), 0) is None
    assert ctl.select(2, pending(1), 0) == 0
    off = ProposedControl(models, capacity=32, highest_priority_sources=[0], n_target=20, delay=0,
                          local_condition_enabled=False)
    off.on_sample(1, 0, x)
    off.on_occupancy(1, 0, 20)
    assert off.select(0, pending(1), 0) == 0
    with pytest.raises(ConfigError):
        ProposedControl(models, capacity=8, n_target=9)
