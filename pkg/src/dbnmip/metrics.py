"""Reconstruction quality of an estimated graph against a known truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import TimeSeriesPanel
from .graph import DbnGraph, threshold
from .objective import fit_term

DEFAULT_DELTA_GRID = tuple(np.logspace(-3, 0, 40))
G_SCORE_DEFINITION = "sqrt(precision * recall)"


@dataclass(frozen=True)
class EdgeCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MetricReport:
    shd: float
    precision: float
    recall: float
    f1: float
    g_score: float
    sigma_p: float
    frobenius: float
    delta_used: float = 0.0
    intra: EdgeCounts = field(default=None)
    inter: EdgeCounts = field(default=None)


def _check(est: DbnGraph, truth: DbnGraph) -> None:
    if est.W.shape != truth.W.shape or est.A.shape != truth.A.shape:
        raise ValueError(
            f"shape mismatch: est is d={est.d}, p={est.p}; truth is d={truth.d}, p={truth.p}"
        )


def shd(est: DbnGraph, truth: DbnGraph, literal: bool = False) -> float:
    """Structural Hamming distance over the intra graph and every lag matrix.

    Each ordered pair costs 0 when both graphs agree on it and 1 otherwise,
    except that an intra edge present in reverse costs 1/2 on each of its two
    ordered pairs, so a reversal counts 1 in total. With ``literal`` the pair
    holding the estimated edge costs 1/2 and the other costs 1, for 1.5.
    Lag edges have no reversal: variable ``i`` at an earlier time and ``j``
    now are not the same adjacency read backwards.
    """
    _check(est, truth)
    E, T = est.W != 0, truth.W != 0
    total = 0.0
    d = est.d
    for i in range(d):
        for j in range(d):
            if i == j or E[i, j] == T[i, j]:
                continue
            reversed_pair = (E[i, j] and T[j, i] and not T[i, j] and not E[j, i]) or (
                T[i, j] and E[j, i] and not E[i, j] and not T[j, i]
            )
            if not reversed_pair:
                total += 1.0
            elif literal:
                total += 0.5 if E[i, j] else 1.0
            else:
                total += 0.5
    total += float(np.count_nonzero((est.A != 0) != (truth.A != 0)))
    return total


def _counts(e: np.ndarray, t: np.ndarray) -> EdgeCounts:
    return EdgeCounts(int(np.sum(e & t)), int(np.sum(e & ~t)), int(np.sum(~e & t)))


def edge_counts(est: DbnGraph, truth: DbnGraph) -> tuple[EdgeCounts, EdgeCounts]:
    """Directed true/false positive and false negative counts, intra and lagged."""
    _check(est, truth)
    return _counts(est.W != 0, truth.W != 0), _counts(est.A != 0, truth.A != 0)


def _rates(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    if tp + fp + fn == 0:
        # nothing to find and nothing claimed: a perfect match
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def precision_recall_f1(est: DbnGraph, truth: DbnGraph) -> tuple[float, float, float]:
    """Rates over directed edges, pooled across the intra graph and all lags."""
    a, b = edge_counts(est, truth)
    return _rates(a.tp + b.tp, a.fp + b.fp, a.fn + b.fn)


def g_score(est: DbnGraph, truth: DbnGraph) -> float:
    p, r, _ = precision_recall_f1(est, truth)
    return math.sqrt(p * r)


def sigma_p(est: DbnGraph, truth: DbnGraph, panel: TimeSeriesPanel) -> float:
    """Absolute difference of the unregularized fit terms."""
    _check(est, truth)
    return abs(fit_term(est, panel) - fit_term(truth, panel))


def frobenius_distance(est: DbnGraph, truth: DbnGraph) -> float:
    _check(est, truth)
    dw = est.W - truth.W
    da = est.A - truth.A
    return float(math.sqrt(np.sum(dw * dw) + np.sum(da * da)))


def evaluate(est: DbnGraph, truth: DbnGraph, panel: TimeSeriesPanel | None = None,
             delta: float = 0.0, literal_shd: bool = False) -> MetricReport:
    """All metrics for ``est`` thresholded at ``delta``."""
    g = threshold(est, delta) if delta > 0 else est
    intra, inter = edge_counts(g, truth)
    p, r, f1 = _rates(intra.tp + inter.tp, intra.fp + inter.fp, intra.fn + inter.fn)
    return MetricReport(
        shd=shd(g, truth, literal_shd),
        precision=p,
        recall=r,
        f1=f1,
        g_score=math.sqrt(p * r),
        sigma_p=sigma_p(g, truth, panel) if panel is not None else math.nan,
        frobenius=frobenius_distance(g, truth),
        delta_used=float(delta),
        intra=intra,
        inter=inter,
    )


def best_delta_sweep(est: DbnGraph, truth: DbnGraph, panel: TimeSeriesPanel | None = None,
                     delta_grid=DEFAULT_DELTA_GRID, literal_shd: bool = False
                     ) -> tuple[float, MetricReport]:
    """Threshold giving the highest F1; ties go to the smaller threshold."""
    grid = [float(x) for x in delta_grid]
    if not grid:
        raise ValueError("delta grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("delta grid must be sorted ascending")
    best_delta, best_f1 = grid[0], -1.0
    for delta in grid:
        f1 = precision_recall_f1(threshold(est, delta), truth)[2]
        if f1 > best_f1:
            best_delta, best_f1 = delta, f1
    return best_delta, evaluate(est, truth, panel, best_delta, literal_shd)
