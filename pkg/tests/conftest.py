from __future__ import annotations

from dataclasses import replace

import pytest

from nocthrottle.config import CycleSection, RunConfig

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def small_config(rate: float = 0.05, cycles: int = 3000, warmup: int = 500, seed: int = 0,
                 hit_rate: float = 0.5, **top) -> RunConfig:
    """Default 6x6 configuration with a short run, for unit tests."""
    cfg = RunConfig()
    cfg = replace(cfg, cycles=CycleSection(warmup, cycles),
                  workload=replace(cfg.workload, injection_rate=rate, llc_hit_rate=hit_rate), **top)
    return cfg.with_seed(seed)


@pytest.fixture
def cfg_small():
    return small_config()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
