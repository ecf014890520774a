"""Per-sink congestion indicators, smoothed with an EWMA and differentiated
with a backward five-point stencil.

A sink's features are sampled on every attempt to write a packet into its
ingress queue, whether the packet sinks or bounces, and by an idle poll when
no attempt has happened for a while.  All fourteen values are refreshed at
each sample; the order below is the column order ``f1..f14`` used in every
CSV and model file.
"""

from __future__ import annotations

import math
from collections import deque
from typing import NamedTuple, Optional

from .errors import ConfigError

FEATURE_NAMES = (
    "sink_injection_rate",
    "total_injection_rate",
    "cov_total_interarrival",
    "cov_sink_interarrival",
    "deflected_rate",
    "mean_service_time",
    "cov_deflected_interarrival",
    "cov_interdeparture",
    "occupancy",
    "prob_queue_full",
    "grad_injection_rate",
    "grad_occupancy",
    "grad_total_injection_rate",
    "grad_prob_full",
)
NUM_FEATURES = len(FEATURE_NAMES)
OCCUPANCY = FEATURE_NAMES.index("occupancy")
SINK_INJECTION_RATE = FEATURE_NAMES.index("sink_injection_rate")
GRAD_INJECTION_RATE = FEATURE_NAMES.index("grad_injection_rate")

DEFAULT_ALPHA = 1.0 / 16.0


class FeatureVector(NamedTuple):
    sink_injection_rate: float
    total_injection_rate: float
    cov_total_interarrival: float
    cov_sink_interarrival: float
    deflected_rate: float
    mean_service_time: float
    cov_deflected_interarrival: float
    cov_interdeparture: float
    occupancy: float
    prob_queue_full: float
    grad_injection_rate: float
    grad_occupancy: float
    grad_total_injection_rate: float
    grad_prob_full: float


ZERO_FEATURES = FeatureVector(*([0.0] * NUM_FEATURES))


def check_alpha(alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"EWMA mixing parameter must lie in [0, 1], got {alpha}")
    return float(alpha)


def ewma_update(prev: Optional[float], sample: float, alpha: float) -> float:
    """``alpha * sample + (1 - alpha) * prev``; a ``None`` prev starts at ``sample``."""
    check_alpha(alpha)
    if prev is None:
        return float(sample)
    return alpha * sample + (1.0 - alpha) * prev


def five_point_gradient(history, spacing: float = 1.0) -> float:
    """Backward five-point slope at the newest sample.

    ``history`` is ordered oldest to newest; only its last five entries are
    used.  Fewer than five samples give 0.
    """
    if spacing == 0:
        raise ConfigError("gradient spacing must be non-zero")
    n = len(history)
    if n < 5:
        return 0.0
    f4, f3, f2, f1, f0 = history if n == 5 else list(history)[-5:]
    return (25.0 * f0 - 48.0 * f1 + 36.0 * f2 - 16.0 * f3 + 3.0 * f4) / (12.0 * spacing)


class EwmaState:
    """EWMA of one scalar plus the last five smoothed values."""

    __slots__ = ("alpha", "value", "history")

    def __init__(self, alpha: float = DEFAULT_ALPHA):
        self.alpha = check_alpha(alpha)
        self.value: Optional[float] = None
        self.history: deque = deque(maxlen=5)

    def update(self, sample: float) -> float:
        v = self.value
        if v is None:
            v = float(sample)
        else:
            a = self.alpha
            v = a * sample + (1.0 - a) * v
        self.value = v
        self.history.append(v)
        return v

    def gradient(self) -> float:
        return _grad(self.history)


def _grad(h: deque) -> float:
    """``five_point_gradient`` at unit spacing for a five-slot history."""
    if len(h) < 5:
        return 0.0
    return (25.0 * h[4] - 48.0 * h[3] + 36.0 * h[2] - 16.0 * h[1] + 3.0 * h[0]) / 12.0


class _GapStats:
    """Exponentially weighted mean and variance of gaps between events of one kind."""

    __slots__ = ("alpha", "last_time", "mean", "var", "last_rate")

    def __init__(self, alpha: float):
        self.alpha = alpha
        self.last_time: Optional[int] = None
        self.mean: Optional[float] = None
        self.var = 0.0
        self.last_rate = 0.0

    def event(self, t: int) -> float:
        """Record an event at ``t`` and return the raw rate sample."""
        if self.last_time is None:
            self.last_time = t
            return 0.0
        gap = t - self.last_time
        self.last_time = t
        if self.mean is None:
            self.mean = float(gap)
        else:
            diff = gap - self.mean
            self.mean += self.alpha * diff
            self.var = (1.0 - self.alpha) * (self.var + self.alpha * diff * diff)
        self.last_rate = 1.0 / max(gap, 1)
        return self.last_rate

    def idle(self, t: int) -> float:
        """Raw rate sample at ``t`` when no event of this kind happens.

        Never exceeds the last observed rate, and decays as the silence grows.
        """
        if self.last_time is None:
            return 0.0
        return min(self.last_rate, 1.0 / max(t - self.last_time, 1))

    def cov(self) -> float:
        if not self.mean:
            return 0.0
        return math.sqrt(max(self.var, 0.0)) / self.mean


class SinkFeatures:
    """Streaming feature state of one sink's ingress queue."""

    def __init__(self, capacity: int, alpha: float = DEFAULT_ALPHA):
        self.capacity = capacity
        self.alpha = check_alpha(alpha)
        self.total = _GapStats(self.alpha)
        self.sunk = _GapStats(self.alpha)
        self.deflected = _GapStats(self.alpha)
        self.departures = _GapStats(self.alpha)
        self.sink_rate = EwmaState(self.alpha)
        self.total_rate = EwmaState(self.alpha)
        self.deflect_rate = EwmaState(self.alpha)
        self.occupancy = EwmaState(self.alpha)
        self.prob_full = EwmaState(self.alpha)
        self.service_time: Optional[float] = None
        self.latest: FeatureVector = ZERO_FEATURES
        self.samples = 0
        self.last_sample = -1

    def on_departure(self, t: int, service_duration: float) -> None:
        self.departures.event(t)
        if self.service_time is None:
            self.service_time = float(service_duration)
        else:
            a = self.alpha
            self.service_time = a * service_duration + (1.0 - a) * self.service_time

    def sample(self, t: int, occupancy: int, sunk: bool) -> FeatureVector:
        """Update on a sink attempt at ``t``; ``occupancy`` is the pre-attempt level."""
        self.last_sample = t
        total_raw = self.total.event(t)
        if sunk:
            sink_raw = self.sunk.event(t)
            defl_raw = self.deflected.idle(t)
        else:
            sink_raw = self.sunk.idle(t)
            defl_raw = self.deflected.event(t)
        self.sink_rate.update(sink_raw)
        self.total_rate.update(total_raw)
        self.deflect_rate.update(defl_raw)
        return self._refresh_vector(occupancy)

    def _refresh_vector(self, occupancy: int) -> FeatureVector:
        occ = self.occupancy.update(occupancy)
        full = self.prob_full.update(1.0 if occupancy >= self.capacity else 0.0)
        self.samples += 1
        self.latest = FeatureVector(
            self.sink_rate.value,
            self.total_rate.value,
            self.total.cov(),
            self.sunk.cov(),
            self.deflect_rate.value,
            self.service_time or 0.0,
            self.deflected.cov(),
            self.departures.cov(),
            occ,
            full,
            _grad(self.sink_rate.history),
            _grad(self.occupancy.history),
            _grad(self.total_rate.history),
            _grad(self.prob_full.history),
        )
        return self.latest

    def tick(self, t: int, occupancy: int) -> FeatureVector:
        """Sample at ``t`` without an arrival (idle poll).

        Rates decay as for a silent interval and the occupancy terms follow
        the current level; gap statistics are left alone.
        """
        self.last_sample = t
        self.sink_rate.update(self.sunk.idle(t))
        self.total_rate.update(self.total.idle(t))
        self.deflect_rate.update(self.deflected.idle(t))
        return self._refresh_vector(occupancy)


def sample_features(sink_state: SinkFeatures, t: int, occupancy: int, sunk: bool):
    """Sample ``sink_state`` on one attempt; returns ``(features, t)``."""
    return sink_state.sample(t, occupancy, sunk), t
