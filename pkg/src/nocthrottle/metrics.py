"""Evaluation metrics computed from trace logs over a measurement window."""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import ComparisonError
from .trace import EventKind, TraceLog

METRIC_NAMES = (
    "avg_transaction_latency",
    "completed_miss_fraction",
    "memory_read_bandwidth",
    "memory_read_requests",
    "bytes_per_core",
    "deflection_rate",
    "throughput",
)
# larger is better for these; latency and deflection rate are smaller-is-better
HIGHER_IS_BETTER = {
    "avg_transaction_latency": False,
    "completed_miss_fraction": True,
    "memory_read_bandwidth": True,
    "memory_read_requests": True,
    "bytes_per_core": True,
    "deflection_rate": False,
    "throughput": True,
}


@dataclass
class MetricsReport:
    avg_transaction_latency: float = 0.0
    completed_miss_fraction: float = 0.0   # percent
    memory_read_bandwidth: float = 0.0     # MC response bytes per cycle
    memory_read_requests: float = 0.0      # completed misses per cycle
    bytes_per_core: float = 0.0
    deflection_rate: float = 0.0           # deflection events per cycle
    throughput: float = 0.0                # completed transactions per cycle
    completed: int = 0
    completed_misses: int = 0
    generated: int = 0
    injected_requests: int = 0
    deflections: int = 0
    turn_deflections: int = 0
    window: Tuple[int, int] = (0, 0)
    empty: bool = True
    bytes_by_core: Dict[int, int] = field(default_factory=dict)

    def as_row(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def compute_metrics(trace: TraceLog, window: Optional[Tuple[int, int]] = None) -> MetricsReport:
    """Aggregate transactions that complete inside ``[start, end)``.

    Deflections, generations and injections are counted by the cycle they
    happen in.  An empty window gives an all-zero report with ``empty`` set.
    """
    meta = trace.meta
    if window is None:
        window = (meta.get("warmup", 0), meta.get("total", 0))
    start, end = window
    if end < start:
        raise ValueError(f"window end {end} precedes start {start}")
    cycles = end - start
    cores = meta.get("cores", [])
    resp_bytes = meta.get("response_bytes", 64)
    rep = MetricsReport(window=(start, end), bytes_by_core={c: 0 for c in cores})
    if cycles == 0:
        return rep

    latency_sum = 0
    DONE = EventKind.DONE.value
    GEN, INJECT = EventKind.GEN.value, EventKind.INJECT.value
    DEFLECT, TURN = EventKind.DEFLECT.value, EventKind.TURN_DEFLECT.value
    for k, cycle, _pid, node, outcome, value in trace.events:
        if not start <= cycle < end:
            continue
        if k == DONE:
            rep.completed += 1
            latency_sum += value
            rep.bytes_by_core[node] = rep.bytes_by_core.get(node, 0) + resp_bytes
            if outcome == "miss":
                rep.completed_misses += 1
        elif k == GEN:
            rep.generated += 1
        elif k == INJECT:
            if value == 0:  # LLC_REQUEST
                rep.injected_requests += 1
        elif k == DEFLECT:
            rep.deflections += 1
        elif k == TURN:
            rep.turn_deflections += 1

    rep.deflection_rate = (rep.deflections + rep.turn_deflections) / cycles
    rep.throughput = rep.completed / cycles
    rep.memory_read_requests = rep.completed_misses / cycles
    rep.memory_read_bandwidth = rep.completed_misses * resp_bytes / cycles
    if cores:
        rep.bytes_per_core = sum(rep.bytes_by_core.values()) / len(cores)
    if rep.completed:
        rep.empty = False
        rep.avg_transaction_latency = latency_sum / rep.completed
        rep.completed_miss_fraction = 100.0 * rep.completed_misses / rep.completed
    return rep


# -- comparisons -----------------------------------------------------------------

@dataclass
class ComparisonTable:
    labels: Tuple[str, str]
    rows: List[Dict[str, float]]  # one per metric: metric, a, b, ratio, delta_pct

    def delta(self, metric: str) -> float:
        for r in self.rows:
            if r["metric"] == metric:
                return r["delta_pct"]
        raise KeyError(metric)

    def ratio(self, metric: str) -> float:
        for r in self.rows:
            if r["metric"] == metric:
                return r["ratio"]
        raise KeyError(metric)

    def to_text(self) -> str:
        a, b = self.labels
        lines = [f"{'metric':<26}{a:>14}{b:>14}{'ratio':>10}{'delta%':>10}"]
        for r in self.rows:
            lines.append(
                f"{r['metric']:<26}{r['a']:>14.4f}{r['b']:>14.4f}{_fmt(r['ratio']):>10}{_fmt(r['delta_pct']):>10}"
            )
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", self.labels[0], self.labels[1], "ratio", "delta_pct"])
        for r in self.rows:
            w.writerow([r["metric"], repr(r["a"]), repr(r["b"]), repr(r["ratio"]), repr(r["delta_pct"])])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "n/a" if math.isnan(v) else f"{v:.3f}"


def _ratio(b: float, a: float) -> float:
    if a == 0:
        return 1.0 if b == 0 else math.nan
    return b / a


def compare_runs(a: MetricsReport, b: MetricsReport, labels=("a", "b"),
                 workload_a: Optional[dict] = None, workload_b: Optional[dict] = None) -> ComparisonTable:
    """Ratio ``b / a`` and percent change from ``a`` to ``b`` for every metric.

    When workload descriptions are given they must match.
    """
    if workload_a is not None and workload_b is not None and workload_a != workload_b:
        raise ComparisonError(f"runs used different workloads: {workload_a} vs {workload_b}")
    if a.window[1] - a.window[0] != b.window[1] - b.window[0]:
        raise ComparisonError("runs have measurement windows of different length")
    rows = []
    for name in METRIC_NAMES:
        va, vb = getattr(a, name), getattr(b, name)
        r = _ratio(vb, va)
        rows.append({"metric": name, "a": va, "b": vb, "ratio": r,
                     "delta_pct": 0.0 if va == vb else (r - 1.0) * 100.0})
    return ComparisonTable(tuple(labels), rows)


@dataclass
class SeedSummary:
    mean: Dict[str, float]
    min: Dict[str, float]
    max: Dict[str, float]
    n: int


def summarize_seeds(reports: Sequence[MetricsReport]) -> SeedSummary:
    """Mean and min/max band of each metric over seed replicas."""
    if not reports:
        raise ValueError("no reports to summarize")
    out = SeedSummary({}, {}, {}, len(reports))
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in reports]
        out.mean[name] = statistics.fmean(vals)
        out.min[name] = min(vals)
        out.max[name] = max(vals)
    return out


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    s = summarize_seeds(reports)
    rep = MetricsReport(window=reports[0].window, empty=all(r.empty for r in reports))
    for name in METRIC_NAMES:
        setattr(rep, name, s.mean[name])
    return rep


def normalize(values: Dict[str, float], reference: Dict[str, float]) -> Dict[str, float]:
    """Divide each metric by its reference value (NaN where the reference is 0)."""
    return {k: (v / reference[k] if reference.get(k) else math.nan) for k, v in values.items()}


def metrics_csv(rows: Sequence[Dict[str, object]]) -> str:
    """Deterministic CSV text for a list of flat dictionaries (first row sets the columns)."""
    if not rows:
        return ""
    cols = list(rows[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    return buf.getvalue()
