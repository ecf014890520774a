"""Independent reference implementations used by the tests."""

from __future__ import annotations

import random
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple


def window_labels(times: Sequence[int], deflections: Sequence[int], delta: int) -> List[int]:
    """Label 1 iff a sample time lies in some window ``[d - delta, d + delta]``."""
    covered = set()
    for d in deflections:
        covered.update(range(d - delta, d + delta + 1))
    return [int(t in covered) for t in times]


def _gini(n0: int, n1: int) -> Fraction:
    n = n0 + n1
    if n == 0:
        return Fraction(0)
    return 1 - Fraction(n0 * n0 + n1 * n1, n * n)


def best_stump(X: Sequence[Sequence[float]], y: Sequence[int]) -> Optional[Tuple[int, float, int, int]]:
    """Exhaustive unweighted Gini stump in exact arithmetic.

    Tries every feature and every midpoint between consecutive distinct
    values.  Returns ``(feature, threshold, left_label, right_label)``, or
    None when no split beats the parent impurity.  Ties go to the lowest
    feature, then the lowest threshold; leaf labels are the majority with
    ties going to 1.
    """
    n = len(y)
    n1 = sum(y)
    parent = _gini(n - n1, n1)
    best = None
    for f in range(len(X[0])):
        values = sorted(set(row[f] for row in X))
        for lo, hi in zip(values, values[1:]):
            thr = (lo + hi) / 2.0
            left = [y[i] for i in range(n) if X[i][f] < thr]
            l1 = sum(left)
            r1 = n1 - l1
            nl, nr = len(left), n - len(left)
            imp = (nl * _gini(nl - l1, l1) + nr * _gini(nr - r1, r1)) / n
            if best is None or imp < best[0]:
                best = (imp, f, thr, int(l1 * 2 >= nl), int(r1 * 2 >= nr))
    if best is None or not best[0] < parent:
        return None
    return best[1:]


def random_dataset(rng: random.Random, n: int, n_features: int, discrete: bool = False):
    """Noisy threshold concept; ``discrete`` draws values from a small grid to force ties."""
    X = []
    for _ in range(n):
        if discrete:
            X.append([float(rng.randrange(6)) for _ in range(n_features)])
        else:
            X.append([rng.uniform(-1, 1) for _ in range(n_features)])
    y = [int((row[0] + 0.5 * row[-1] > 0.2) != (rng.random() < 0.2)) for row in X]
    return X, y
