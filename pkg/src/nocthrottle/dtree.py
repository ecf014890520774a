"""Depth-capped binary decision trees (CART, Gini impurity) built from scratch.

Trees are stored as flat node arrays so that they serialize to a small JSON
document and evaluate with a tight loop at runtime::

    tree = train(samples, max_depth=4)
    tree.predict(features)          # -> 0 or 1
    save_model(tree, "sink_7.model")
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ModelLoadError, TrainingError
from .features import FEATURE_NAMES, NUM_FEATURES
from .labeling import split_indices

MODEL_FORMAT = "nocthrottle-dtree"
MODEL_VERSION = 1
DEFAULT_DEPTH = 4
LEAF = -1
_TIE = 1e-12

ClassWeight = Union[None, str, Dict[int, float]]


@dataclass
class DecisionTree:
    """Flat binary tree; node ``i`` is a leaf iff ``feature[i] == -1``.

    Descent goes left iff ``x[feature] < threshold``.
    """

    feature: List[int]
    threshold: List[float]
    left: List[int]
    right: List[int]
    label: List[int]
    max_depth: int
    metadata: dict = field(default_factory=dict)
    # weighted-majority label of every node, leaves and splits alike; filled by
    # train() so truncate() can turn a split into a leaf; never serialized
    majority: List[int] = field(default_factory=list, repr=False, compare=False)

    @classmethod
    def leaf(cls, label: int, max_depth: int = 1, metadata: Optional[dict] = None) -> "DecisionTree":
        return cls([LEAF], [0.0], [LEAF], [LEAF], [int(label)], max_depth, dict(metadata or {}))

    @classmethod
    def stump(cls, feature: int, threshold: float, below: int = 0, above: int = 1) -> "DecisionTree":
        return cls(
            [feature, LEAF, LEAF],
            [float(threshold), 0.0, 0.0],
            [1, LEAF, LEAF],
            [2, LEAF, LEAF],
            [LEAF, int(below), int(above)],
            1,
        )

    def __len__(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] == LEAF:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    @property
    def is_leaf(self) -> bool:
        return self.feature[0] == LEAF

    def predict(self, x: Sequence[float]) -> int:
        feature, threshold, left, right = self.feature, self.threshold, self.left, self.right
        i = 0
        while feature[i] != LEAF:
            i = left[i] if x[feature[i]] < threshold[i] else right[i]
        return self.label[i]

    def predict_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(len(X), dtype=np.int64)
        stack = [(0, np.arange(len(X)))]
        while stack:
            i, rows = stack.pop()
            if not len(rows):
                continue
            f = self.feature[i]
            if f == LEAF:
                out[rows] = self.label[i]
                continue
            go_left = X[rows, f] < self.threshold[i]
            stack.append((self.left[i], rows[go_left]))
            stack.append((self.right[i], rows[~go_left]))
        return out


def gini(weights0: float, weights1: float) -> float:
    total = weights0 + weights1
    if total <= 0:
        return 0.0
    p0, p1 = weights0 / total, weights1 / total
    return 1.0 - p0 * p0 - p1 * p1


def as_arrays(dataset) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple) and len(dataset) == 2:
        X, y = dataset
        return np.asarray(X, dtype=float), np.asarray(y, dtype=np.int64)
    X = np.array([s.features for s in dataset], dtype=float)
    y = np.array([s.label for s in dataset], dtype=np.int64)
    return X, y


def class_weights(y: np.ndarray, class_weight: ClassWeight) -> np.ndarray:
    """Per-sample weights; ``"balanced"`` weights each class by ``n / (2 * n_class)``."""
    if class_weight is None:
        return np.ones(len(y))
    if class_weight == "balanced":
        n = len(y)
        counts = np.bincount(y, minlength=2).astype(float)
        w = np.where(counts > 0, n / (2.0 * np.maximum(counts, 1)), 0.0)
        return w[y]
    if isinstance(class_weight, dict):
        return np.array([float(class_weight.get(int(c), 1.0)) for c in y])
    raise TrainingError(f"unknown class_weight {class_weight!r}")


def best_split(X: np.ndarray, y: np.ndarray, w: np.ndarray, min_leaf: int = 1):
    """Lowest weighted-Gini split of the rows given.

    Returns ``(impurity, feature, threshold)`` or ``None`` when no admissible
    split exists.  Ties go to the lowest feature index, then the lowest
    threshold.
    """
    n = len(y)
    if n < 2 * min_leaf:
        return None
    total = w.sum()
    w1 = w * (y == 1)
    w0 = w - w1
    total0, total1 = w0.sum(), w1.sum()
    best = None
    ks = np.arange(1, n)
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        c0 = np.cumsum(w0[order])[:-1]
        c1 = np.cumsum(w1[order])[:-1]
        valid = (xs[1:] > xs[:-1]) & (ks >= min_leaf) & (n - ks >= min_leaf)
        if not valid.any():
            continue
        wl = c0 + c1
        wr = total - wl
        r0 = total0 - c0
        r1 = total1 - c1
        with np.errstate(invalid="ignore", divide="ignore"):
            gl = np.where(wl > 0, 1.0 - (c0 * c0 + c1 * c1) / (wl * wl), 0.0)
            gr = np.where(wr > 0, 1.0 - (r0 * r0 + r1 * r1) / (wr * wr), 0.0)
        imp = (wl * gl + wr * gr) / total
        imp = np.where(valid, imp, np.inf)
        # impurities closer than _TIE count as equal, so rounding noise
        # cannot override the lowest-feature, lowest-threshold tie rule
        k = int(np.argmax(imp <= imp.min() + _TIE))
        if best is None or imp[k] < best[0] - _TIE:
            lo, hi = xs[k], xs[k + 1]
            thr = (lo + hi) / 2.0
            if not lo < thr <= hi:
                thr = hi
            best = (float(imp[k]), f, float(thr))
    return best


def train(
    dataset,
    max_depth: int = DEFAULT_DEPTH,
    min_leaf: int = 1,
    class_weight: ClassWeight = "balanced",
    metadata: Optional[dict] = None,
) -> DecisionTree:
    """Greedy recursive partitioning on weighted Gini impurity.

    ``dataset`` is a sequence of :class:`LabeledSample` or an ``(X, y)`` pair.
    Leaves take the weighted-majority label; an exact tie goes to 1, the
    throttling side.
    """
    X, y = as_arrays(dataset)
    if len(y) == 0:
        raise TrainingError("cannot train a decision tree on an empty dataset")
    if max_depth < 1:
        raise TrainingError(f"max_depth must be positive, got {max_depth}")
    if min_leaf < 1:
        raise TrainingError(f"min_leaf must be positive, got {min_leaf}")
    w = class_weights(y, class_weight)
    tree = DecisionTree([], [], [], [], [], max_depth, dict(metadata or {}))

    def add_leaf(majority: int) -> int:
        tree.feature.append(LEAF)
        tree.threshold.append(0.0)
        tree.left.append(LEAF)
        tree.right.append(LEAF)
        tree.label.append(majority)
        tree.majority.append(majority)
        return len(tree.feature) - 1

    def grow(rows: np.ndarray, depth: int) -> int:
        labels = y[rows]
        wr = w[rows]
        w1 = float(wr[labels == 1].sum())
        w0 = float(wr.sum()) - w1
        majority = 1 if w1 >= w0 else 0
        if depth >= max_depth or labels.min() == labels.max():
            return add_leaf(majority)
        parent = gini(w0, w1)
        split = best_split(X[rows], labels, wr, min_leaf)
        if split is None or not split[0] < parent - _TIE:
            return add_leaf(majority)
        _, f, thr = split
        idx = len(tree.feature)
        tree.feature.append(f)
        tree.threshold.append(thr)
        tree.left.append(LEAF)
        tree.right.append(LEAF)
        tree.label.append(LEAF)
        tree.majority.append(majority)
        go_left = X[rows, f] < thr
        tree.left[idx] = grow(rows[go_left], depth + 1)
        tree.right[idx] = grow(rows[~go_left], depth + 1)
        return idx

    grow(np.arange(len(y)), 0)
    return tree


def predict(tree: DecisionTree, features: Sequence[float]) -> int:
    return tree.predict(features)


def truncate(tree: DecisionTree, max_depth: int) -> DecisionTree:
    """The tree ``train`` would have grown with a smaller depth cap.

    Greedy splits do not depend on the cap, so cutting a deeper tree and
    turning the cut splits into majority leaves gives the same nodes in the
    same order.
    """
    if max_depth < 1:
        raise TrainingError(f"max_depth must be positive, got {max_depth}")
    if len(tree.majority) != len(tree):
        raise TrainingError("truncate needs a tree built by train()")
    out = DecisionTree([], [], [], [], [], max_depth, dict(tree.metadata))

    def copy(i: int, depth: int) -> int:
        idx = len(out.feature)
        out.majority.append(tree.majority[i])
        if tree.feature[i] == LEAF or depth >= max_depth:
            out.feature.append(LEAF)
            out.threshold.append(0.0)
            out.left.append(LEAF)
            out.right.append(LEAF)
            out.label.append(tree.majority[i])
            return idx
        out.feature.append(tree.feature[i])
        out.threshold.append(tree.threshold[i])
        out.left.append(LEAF)
        out.right.append(LEAF)
        out.label.append(LEAF)
        out.left[idx] = copy(tree.left[i], depth + 1)
        out.right[idx] = copy(tree.right[i], depth + 1)
        return idx

    copy(0, 0)
    return out


# -- evaluation --------------------------------------------------------------

@dataclass
class AccuracyReport:
    acc_label0: float
    acc_label1: float
    confusion: List[List[int]]  # confusion[true][predicted]
    depth: int

    @property
    def total(self) -> int:
        return sum(map(sum, self.confusion))


def evaluate(tree: DecisionTree, validation) -> AccuracyReport:
    """Per-class recall in percent; NaN for a class absent from ``validation``."""
    X, y = as_arrays(validation)
    if len(y) == 0:
        raise TrainingError("cannot evaluate on an empty validation set")
    pred = tree.predict_many(X)
    confusion = [[0, 0], [0, 0]]
    for true in (0, 1):
        for p in (0, 1):
            confusion[true][p] = int(np.sum((y == true) & (pred == p)))

    def recall(c):
        n = confusion[c][0] + confusion[c][1]
        return 100.0 * confusion[c][c] / n if n else math.nan

    return AccuracyReport(recall(0), recall(1), confusion, tree.max_depth)


def resubstitution_accuracy(tree: DecisionTree, dataset, class_weight: ClassWeight = None) -> float:
    X, y = as_arrays(dataset)
    w = class_weights(y, class_weight)
    return float(np.sum(w * (tree.predict_many(X) == y)) / np.sum(w))


def recommend_depth(reports: Sequence[AccuracyReport]) -> int:
    """Depth with the best label-1 accuracy; ties go to the shallower tree."""
    if not reports:
        raise TrainingError("no reports to choose from")

    def key(r):
        a1 = r.acc_label1 if not math.isnan(r.acc_label1) else -math.inf
        return (-a1, r.depth)

    return min(reports, key=key).depth


def depth_sweep(
    dataset,
    depths: Sequence[int] = tuple(range(2, 9)),
    split_fraction: float = 0.7,
    seed: int = 0,
    min_leaf: int = 1,
    class_weight: ClassWeight = "balanced",
):
    """Train one tree per depth on a shared split.

    Returns ``(reports, recommended_depth, trees)``.
    """
    if not depths:
        raise TrainingError("depth sweep needs at least one depth")
    X, y = as_arrays(dataset)
    tr, va = split_indices(y.tolist(), split_fraction, seed)
    if not va:
        va = tr
    train_set, val_set = (X[tr], y[tr]), (X[va], y[va])
    reports, trees = [], {}
    deepest = train(train_set, max(depths), min_leaf, class_weight)
    for d in depths:
        tree = truncate(deepest, d)
        trees[d] = tree
        reports.append(evaluate(tree, val_set))
    return reports, recommend_depth(reports), trees


def format_accuracy_table(reports: Sequence[AccuracyReport], title: str = "") -> str:
    """Plain-text table with one column per depth and one row per label."""

    def cell(v):
        return "n/a" if math.isnan(v) else f"{v:.1f}"

    depths = [str(r.depth) for r in reports]
    width = max(6, *(len(d) for d in depths))
    lines = []
    if title:
        lines.append(title)
    lines.append("depth   | " + " | ".join(d.rjust(width) for d in depths))
    lines.append("Label-0 | " + " | ".join(cell(r.acc_label0).rjust(width) for r in reports))
    lines.append("Label-1 | " + " | ".join(cell(r.acc_label1).rjust(width) for r in reports))
    return "\n".join(lines)


# -- model files -------------------------------------------------------------

def serialize(tree: DecisionTree) -> str:
    nodes = []
    for i in range(len(tree)):
        if tree.feature[i] == LEAF:
            nodes.append({"id": i, "label": tree.label[i]})
        else:
            nodes.append(
                {
                    "id": i,
                    "feature": tree.feature[i],
                    "threshold": float(tree.threshold[i]),
                    "left": tree.left[i],
                    "right": tree.right[i],
                }
            )
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "features": list(FEATURE_NAMES),
        "max_depth": tree.max_depth,
        "metadata": tree.metadata,
        "nodes": nodes,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def deserialize(text: str) -> DecisionTree:
    if not text or not text.strip():
        raise ModelLoadError("model file is empty")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelLoadError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelLoadError("not a decision-tree model file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelLoadError(f"unsupported model version {doc.get('version')!r}")
    if list(doc.get("features", [])) != list(FEATURE_NAMES):
        raise ModelLoadError("model feature list does not match this build")
    raw = doc.get("nodes")
    if not isinstance(raw, list) or not raw:
        raise ModelLoadError("model has no nodes")
    n = len(raw)
    tree = DecisionTree([LEAF] * n, [0.0] * n, [LEAF] * n, [LEAF] * n, [LEAF] * n,
                        int(doc.get("max_depth", 1)), dict(doc.get("metadata") or {}))
    try:
        for pos, node in enumerate(raw):
            i = int(node.get("id", pos))
            if i != pos:
                raise ModelLoadError(f"node ids must be consecutive, found {i} at position {pos}")
            if "label" in node:
                if node["label"] not in (0, 1):
                    raise ModelLoadError(f"node {i}: leaf label must be 0 or 1")
                tree.label[i] = int(node["label"])
            else:
                f = int(node["feature"])
                if not 0 <= f < NUM_FEATURES:
                    raise ModelLoadError(f"node {i}: feature index {f} out of range")
                tree.feature[i] = f
                tree.threshold[i] = float(node["threshold"])
                tree.left[i] = int(node["left"])
                tree.right[i] = int(node["right"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelLoadError(f"malformed node: {exc}") from None
    _check_structure(tree)
    return tree


def _check_structure(tree: DecisionTree) -> None:
    n = len(tree)
    seen = [False] * n
    stack = [(0, 0)]
    while stack:
        i, depth = stack.pop()
        if not 0 <= i < n or seen[i]:
            raise ModelLoadError(f"node {i} is out of range or reached twice")
        seen[i] = True
        if depth > tree.max_depth:
            raise ModelLoadError(f"node {i} lies deeper than max_depth {tree.max_depth}")
        if tree.feature[i] != LEAF:
            stack.append((tree.left[i], depth + 1))
            stack.append((tree.right[i], depth + 1))
    if not all(seen):
        raise ModelLoadError("model contains unreachable nodes")


def save_model(tree: DecisionTree, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(serialize(tree))
    tmp.replace(path)


def load_model(path) -> DecisionTree:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ModelLoadError(f"cannot read model {path}: {exc}") from None
    return deserialize(text)
