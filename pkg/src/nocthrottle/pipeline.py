"""Collect, label, train and evaluate: the workflow behind the command line.

Directory layout under an output root::

    config.yaml                      echo of the effective configuration
    collect/<run>/sink_<id>.csv      raw feature samples, one file per sink per run
    labeled/<run>/sink_<id>.csv      the same samples with their labels
    models/sink_<id>.model           per-sink decision trees (or models/shared.model)
    models/accuracy.txt              accuracy-by-depth table
    eval/metrics.csv                 one row per (policy, rate, seed) run
    eval/<metric>.csv                plot data: rate by policy, seed-averaged
    eval/comparison.txt              proposed vs baseline, seed-averaged

``<run>`` is ``r<rate>_s<seed>``.  Every file is written to a temporary name
and renamed into place.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import dtree
from .config import RunConfig, dump_config
from .errors import ConfigError, ModelLoadError, TrainingError
from .labeling import FEATURE_COLUMNS, label_feature_file, read_labeled_arrays
from .metrics import METRIC_NAMES, MetricsReport, compare_runs, mean_report, metrics_csv

log = logging.getLogger(__name__)

SHARED_MODEL = "shared.model"
SWEEP_DEPTHS = tuple(range(2, 9))


def write_atomic(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
    return path


def echo_config(cfg: RunConfig, directory) -> Path:
    return write_atomic(Path(directory) / "config.yaml", dump_config(cfg))


def run_name(rate: float, seed: int) -> str:
    return f"r{rate:g}_s{seed}"


def model_path(directory, sink: Optional[int]) -> Path:
    return Path(directory) / (SHARED_MODEL if sink is None else f"sink_{sink}.model")


def _rates(cfg: RunConfig) -> Tuple[float, ...]:
    return cfg.sweep or (cfg.workload.injection_rate,)


def _seeds(cfg: RunConfig) -> Tuple[int, ...]:
    return cfg.seeds or (cfg.seed,)


def _run_configs(cfg: RunConfig):
    for rate in _rates(cfg):
        for seed in _seeds(cfg):
            c = cfg.with_seed(seed)
            if cfg.sweep:
                c = c.with_rate(rate)
            yield rate, seed, c


# -- collect -------------------------------------------------------------------

def feature_csv_text(rows) -> str:
    """``t,f1..f14,gen_deflected``; the last column is empty unless the attempt bounced."""
    lines = [",".join(["t", *FEATURE_COLUMNS, "gen_deflected"])]
    for t, fv, gen in rows:
        lines.append(f"{t},{','.join(map(repr, map(float, fv)))},{'' if gen is None else gen}")
    lines.append("")
    return "\n".join(lines)


def collect(cfg: RunConfig, out: Optional[Path] = None) -> Dict[str, Dict[int, Path]]:
    """Simulate every (rate, seed) point with feature sampling on.

    Returns ``{run_name: {sink: csv_path}}``.
    """
    from .engine import run

    if cfg.controller.policy == "proposed":
        raise ConfigError("collect runs under the 'none' or 'baseline' policy")
    out = Path(out or cfg.output_dir())
    echo_config(cfg, out)
    written = {}
    for rate, seed, c in _run_configs(cfg):
        name = run_name(rate, seed)
        res = run(c, collect_features=True)
        if c.cycles.total == 0 or not any(res.datasets.values()):
            log.warning("run %s produced no feature samples", name)
        paths = {}
        for sink, rows in sorted(res.datasets.items()):
            paths[sink] = write_atomic(out / "collect" / name / f"sink_{sink}.csv", feature_csv_text(rows))
        written[name] = paths
        log.info("collected %s: %d samples", name, sum(len(r) for r in res.datasets.values()))
    return written


# -- label ---------------------------------------------------------------------

def _feature_files(directory: Path) -> List[Path]:
    files = sorted(Path(directory).glob("**/sink_*.csv"))
    if not files:
        raise FileNotFoundError(f"no sink_<id>.csv files under {directory}")
    return files


def label(collect_dir, out_dir, delta: int) -> Dict[str, dict]:
    """Label every feature file under ``collect_dir`` into the mirrored tree under ``out_dir``."""
    collect_dir, out_dir = Path(collect_dir), Path(out_dir)
    summary = {}
    for path in _feature_files(collect_dir):
        target = out_dir / path.relative_to(collect_dir)
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".tmp")
        summary[str(path.relative_to(collect_dir))] = label_feature_file(path, tmp, delta)
        tmp.replace(target)
    return summary


def load_labeled(labeled_dir) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    """Pool labeled files by sink id (the ``sink_<id>`` file stem) into ``(X, y)`` arrays."""
    parts: Dict[int, list] = {}
    for path in _feature_files(labeled_dir):
        sink = int(path.stem.split("_", 1)[1])
        _, X, y = read_labeled_arrays(path)
        parts.setdefault(sink, []).append((X, y))
    return {sink: (np.concatenate([X for X, _ in xs]), np.concatenate([y for _, y in xs]))
            for sink, xs in parts.items()}


# -- train ---------------------------------------------------------------------

@dataclass
class TrainResult:
    reports: List[dtree.AccuracyReport]     # pooled over sinks, one per depth
    recommended_depth: int
    chosen_depth: int
    models: Dict[Optional[int], dtree.DecisionTree]
    table: str
    per_sink: Dict[Optional[int], List[dtree.AccuracyReport]] = field(default_factory=dict)


def _pool_reports(per_sink: Dict[Optional[int], List[dtree.AccuracyReport]], depths) -> List[dtree.AccuracyReport]:
    out = []
    for i, d in enumerate(depths):
        conf = [[0, 0], [0, 0]]
        for reports in per_sink.values():
            for a in (0, 1):
                for b in (0, 1):
                    conf[a][b] += reports[i].confusion[a][b]

        def recall(c):
            n = conf[c][0] + conf[c][1]
            return 100.0 * conf[c][c] / n if n else math.nan

        out.append(dtree.AccuracyReport(recall(0), recall(1), conf, d))
    return out


def train_models(
    datasets: Dict[int, object],
    depths: Sequence[int] = SWEEP_DEPTHS,
    depth: Optional[int] = None,
    shared: bool = False,
    train_fraction: float = 0.7,
    seed: int = 0,
    min_leaf: int = 5,
    class_weight: Optional[str] = "balanced",
    delta: Optional[int] = None,
) -> TrainResult:
    """Depth sweep per sink (or on the pooled data when ``shared``).

    ``datasets`` maps each sink to labeled samples or an ``(X, y)`` pair.

    Accuracy is measured on each sink's held-out 30% and pooled over sinks.
    The saved models use ``depth`` when given, else the recommended depth.
    """
    if not datasets:
        raise TrainingError("no labeled samples to train on")
    arrays = {sink: dtree.as_arrays(data) for sink, data in sorted(datasets.items())}
    groups: Dict[Optional[int], Tuple[np.ndarray, np.ndarray]]
    if shared:
        groups = {None: (np.concatenate([X for X, _ in arrays.values()]),
                         np.concatenate([y for _, y in arrays.values()]))}
    else:
        groups = arrays
    depths = tuple(depths)
    per_sink, trees = {}, {}
    for key, data in groups.items():
        if not len(data[1]):
            raise TrainingError(f"sink {key} has no samples")
        if len(np.unique(data[1])) < 2:
            log.warning("sink %s: single label class; the model is a constant leaf", key)
        reports, _, by_depth = dtree.depth_sweep(data, depths, train_fraction, seed, min_leaf, class_weight)
        per_sink[key] = reports
        trees[key] = by_depth
    pooled = _pool_reports(per_sink, depths)
    recommended = dtree.recommend_depth(pooled)
    chosen = depth if depth is not None else recommended
    if chosen not in depths:
        for key, data in groups.items():
            _, _, by_depth = dtree.depth_sweep(data, (chosen,), train_fraction, seed, min_leaf, class_weight)
            trees[key][chosen] = by_depth[chosen]
    models = {key: trees[key][chosen] for key in groups}
    for key, tree in models.items():
        tree.metadata.update({"sink": key, "depth": chosen, "train_fraction": train_fraction, "seed": seed,
                              "min_leaf": min_leaf, "class_weight": class_weight})
        if delta is not None:
            tree.metadata["delta"] = delta
    table = dtree.format_accuracy_table(pooled, "Accuracy (%) of decision trees with different depths")
    return TrainResult(pooled, recommended, chosen, models, table, per_sink)


def save_models(result: TrainResult, directory) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for key, tree in sorted(result.models.items(), key=lambda kv: -1 if kv[0] is None else kv[0]):
        p = model_path(directory, key)
        dtree.save_model(tree, p)
        paths.append(p)
    lines = [result.table, "", f"recommended depth: {result.recommended_depth}",
             f"saved depth: {result.chosen_depth}", ""]
    write_atomic(directory / "accuracy.txt", "\n".join(lines))
    return paths


def models_dir(cfg: RunConfig) -> Path:
    return Path(cfg.controller.model_dir) if cfg.controller.model_dir else cfg.output_dir() / "models"


def load_models(cfg: RunConfig, sinks: Iterable[int]) -> Dict[int, dtree.DecisionTree]:
    """Per-sink models from the model directory; a shared model serves every sink."""
    directory = models_dir(cfg)
    sinks = list(sinks)
    if cfg.controller.shared_model:
        tree = dtree.load_model(model_path(directory, None))
        return {s: tree for s in sinks}
    missing = [s for s in sinks if not model_path(directory, s).exists()]
    if missing:
        raise ModelLoadError(f"no model files in {directory} for sinks {missing}")
    return {s: dtree.load_model(model_path(directory, s)) for s in sinks}


# -- evaluate --------------------------------------------------------------------

@dataclass
class EvalResult:
    rows: List[dict]
    reports: Dict[Tuple[str, float], List[MetricsReport]]

    def mean(self, policy: str, rate: float) -> MetricsReport:
        return mean_report(self.reports[policy, rate])


def evaluate(cfg: RunConfig, policies: Sequence[str], models=None) -> EvalResult:
    """Run every policy on identical workloads and seeds across the rate sweep."""
    from .engine import build_mesh, run

    if "proposed" in policies and models is None:
        topo = build_mesh(cfg.mesh.to_mesh_config())
        models = load_models(cfg, tuple(topo.llc_nodes) + tuple(topo.memory_controllers))
    rows, reports = [], {}
    for rate, seed, c in _run_configs(cfg):
        for policy in policies:
            res = run(c.with_policy(policy), models=models if policy == "proposed" else None)
            m = res.metrics
            reports.setdefault((policy, rate), []).append(m)
            rows.append({"policy": policy, "rate": rate, "seed": seed, **m.as_row()})
    return EvalResult(rows, reports)


def write_eval(result: EvalResult, out_dir, policies: Sequence[str]) -> List[Path]:
    out_dir = Path(out_dir)
    paths = [write_atomic(out_dir / "metrics.csv", metrics_csv(result.rows))]
    rates = sorted({rate for _, rate in result.reports})
    for name in METRIC_NAMES:
        plot_rows = []
        for rate in rates:
            row = {"rate": rate}
            for policy in policies:
                row[policy] = getattr(result.mean(policy, rate), name)
            plot_rows.append(row)
        paths.append(write_atomic(out_dir / f"{name}.csv", metrics_csv(plot_rows)))
    if "baseline" in policies and "proposed" in policies:
        blocks = []
        for rate in rates:
            table = compare_runs(result.mean("baseline", rate), result.mean("proposed", rate),
                                 ("baseline", "proposed"))
            blocks.append(f"injection rate {rate:g}\n{table.to_text()}\n")
        paths.append(write_atomic(out_dir / "comparison.txt", "\n".join(blocks)))
    return paths


__all__ = [
    "EvalResult",
    "SWEEP_DEPTHS",
    "TrainResult",
    "collect",
    "echo_config",
    "evaluate",
    "label",
    "load_labeled",
    "load_models",
    "model_path",
    "models_dir",
    "run_name",
    "save_models",
    "train_models",
    "write_atomic",
    "write_eval",
]
