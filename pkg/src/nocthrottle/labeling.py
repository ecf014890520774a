"""Time-reversal labeling of per-sink feature samples, and train/validation splits.

A sample taken at cycle ``t`` is labeled 1 when some packet later deflected
at the same sink left its source within ``delta`` cycles of ``t``: had the
source been throttled around that time, the deflection would not have
happened.  The timestamp recorded for a deflected packet is the cycle it was
injected into the network, which is when the source made its decision.
"""

from __future__ import annotations

import bisect
import csv
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .features import FEATURE_NAMES, NUM_FEATURES

log = logging.getLogger(__name__)

DEFAULT_DELTA = 5
FEATURE_COLUMNS = tuple(f"f{i + 1}" for i in range(NUM_FEATURES))


@dataclass(frozen=True)
class DeflectionRecord:
    d: int
    sink: int = -1


@dataclass(frozen=True)
class LabeledSample:
    features: Tuple[float, ...]
    t: int
    label: int


def _check_delta(delta: int) -> None:
    if delta < 0:
        raise ConfigError(f"labeling window must be non-negative, got {delta}")


def label_times(times: Sequence[int], deflection_times: Iterable[int], delta: int) -> List[int]:
    """Labels for sample ``times`` given deflected-packet generation times.

    Binary search over the sorted generation times: a sample is positive iff
    the nearest generation time is within ``delta``.
    """
    _check_delta(delta)
    ds = sorted(deflection_times)
    if not ds:
        return [0] * len(times)
    labels = []
    for t in times:
        k = bisect.bisect_left(ds, t - delta)
        labels.append(1 if k < len(ds) and ds[k] <= t + delta else 0)
    return labels


def label_dataset(samples, deflections, delta: int = DEFAULT_DELTA) -> List[LabeledSample]:
    """Attach labels to ``(features, t)`` pairs.

    ``deflections`` may hold :class:`DeflectionRecord` objects or bare
    generation timestamps.
    """
    _check_delta(delta)
    ds = [d.d if isinstance(d, DeflectionRecord) else int(d) for d in deflections]
    labels = label_times([t for _, t in samples], ds, delta)
    return [LabeledSample(tuple(f), t, lab) for (f, t), lab in zip(samples, labels)]


def split_indices(labels: Sequence[int], train_fraction: float = 0.7, seed: int = 0):
    """Stratified random split of ``range(len(labels))`` into sorted ``(train, validation)`` index lists.

    Each class is shuffled and cut separately so both halves keep the label
    proportions.  Validation receives at least one sample of every class that
    has two or more members.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = random.Random(seed)
    by_label = {0: [], 1: []}
    for i, lab in enumerate(labels):
        by_label[int(lab)].append(i)
    present = [lab for lab, idx in by_label.items() if idx]
    if len(present) < 2:
        log.warning("dataset has a single label class %s; falling back to an unstratified split", present)
        groups = [list(range(len(labels)))]
    else:
        groups = [by_label[0], by_label[1]]

    train_idx, val_idx = [], []
    for group in groups:
        rng.shuffle(group)
        n_train = int(round(train_fraction * len(group)))
        if len(group) >= 2:
            n_train = min(max(n_train, 1), len(group) - 1)
        train_idx.extend(group[:n_train])
        val_idx.extend(group[n_train:])
    train_idx.sort()
    val_idx.sort()
    return train_idx, val_idx


def split_dataset(dataset: Sequence[LabeledSample], train_fraction: float = 0.7, seed: int = 0):
    """Stratified random split of labeled samples into ``(train, validation)``."""
    train_idx, val_idx = split_indices([s.label for s in dataset], train_fraction, seed)
    return [dataset[i] for i in train_idx], [dataset[i] for i in val_idx]


# -- dataset files -----------------------------------------------------------

def read_feature_csv(path) -> Tuple[List[Tuple[Tuple[float, ...], int]], List[DeflectionRecord]]:
    """Read a ``t,f1..f14,gen_deflected`` file into samples and deflection records."""
    samples = []
    deflections = []
    sink = _sink_from_path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["t", *FEATURE_COLUMNS, "gen_deflected"]
        if header != expected:
            raise ConfigError(f"{path}: unexpected header {header}")
        for row in reader:
            t = int(row[0])
            samples.append((tuple(float(x) for x in row[1 : 1 + NUM_FEATURES]), t))
            if row[-1] != "":
                deflections.append(DeflectionRecord(int(row[-1]), sink))
    return samples, deflections


def write_labeled_csv(path, dataset: Sequence[LabeledSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *FEATURE_COLUMNS, "label"])
        for s in dataset:
            w.writerow([s.t, *(repr(float(x)) for x in s.features), s.label])


def read_labeled_csv(path) -> List[LabeledSample]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", *FEATURE_COLUMNS, "label"]:
            raise ConfigError(f"{path}: unexpected header {header}")
        for row in reader:
            out.append(LabeledSample(tuple(float(x) for x in row[1:-1]), int(row[0]), int(row[-1])))
    return out


def label_feature_file(src, dst, delta: int) -> dict:
    """Label a feature file into ``dst`` without re-parsing the feature columns."""
    _check_delta(delta)
    with open(src, newline="") as fh:
        header = fh.readline().rstrip("\r\n")
        if header != ",".join(["t", *FEATURE_COLUMNS, "gen_deflected"]):
            raise ConfigError(f"{src}: unexpected header {header}")
        lines = fh.read().splitlines()
    times, bodies, ds = [], [], []
    for line in lines:
        head, _, last = line.rpartition(",")
        bodies.append(head)
        times.append(int(head[:head.index(",")]))
        if last:
            ds.append(int(last))
    labels = label_times(times, ds, delta)
    with open(dst, "w", newline="") as fh:
        fh.write(",".join(["t", *FEATURE_COLUMNS, "label"]) + "\n")
        fh.writelines(f"{b},{lab}\n" for b, lab in zip(bodies, labels))
    ones = sum(labels)
    return {"delta": delta, "samples": len(labels), "label0": len(labels) - ones, "label1": ones}


def read_labeled_arrays(path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(t, X, y)`` arrays from a labeled file."""
    with open(path) as fh:
        header = fh.readline().rstrip("\r\n")
        has_rows = bool(fh.readline())
    if header != ",".join(["t", *FEATURE_COLUMNS, "label"]):
        raise ConfigError(f"{path}: unexpected header {header}")
    if has_rows:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    else:
        data = np.zeros((0, NUM_FEATURES + 2))
    return data[:, 0].astype(np.int64), data[:, 1:-1], data[:, -1].astype(np.int64)


def label_summary(dataset: Sequence[LabeledSample], delta: int) -> dict:
    ones = sum(s.label for s in dataset)
    return {"delta": delta, "samples": len(dataset), "label0": len(dataset) - ones, "label1": ones}


def _sink_from_path(path) -> int:
    stem = Path(path).stem
    if stem.startswith("sink_"):
        try:
            return int(stem.split("_", 1)[1])
        except ValueError:
            pass
    return -1


__all__ = [
    "DEFAULT_DELTA",
    "DeflectionRecord",
    "FEATURE_COLUMNS",
    "FEATURE_NAMES",
    "LabeledSample",
    "label_dataset",
    "label_feature_file",
    "label_summary",
    "label_times",
    "read_feature_csv",
    "read_labeled_arrays",
    "read_labeled_csv",
    "split_dataset",
    "split_indices",
    "write_labeled_csv",
]
