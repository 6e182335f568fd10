"""Classification metrics and the per-cell median evaluation protocol.

Each cell of a forecast grid yields a temporal vector of (score, truth)
pairs over the predicted, valid months; a metric is computed per cell and
the grid is summarized by the median over cells where the metric is
defined.  Cells with single-class truth leave ROC/PR undefined (NaN) and
are excluded from the median.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDataError

F1_PROB_THRESHOLD = 0.5


def _rank_with_ties(scores):
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank of the tie group
        i = j + 1
    return ranks


def roc_auc(scores, labels):
    """P(random positive outscores random negative), ties counted 1/2.

    Returns NaN when labels are single-class (undefined metric).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = _rank_with_ties(scores)
    return (float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def pr_auc(scores, labels):
    """Average precision: mean of precision at each positive's rank.

    Scores are walked in descending order; ties keep the stable input
    order.  Returns NaN when there are no positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        return math.nan
    order = np.argsort(-scores, kind="mergesort")
    hits = (labels[order] == 1).astype(np.float64)
    cum_hits = np.cumsum(hits)
    ranks = np.arange(1, labels.size + 1, dtype=np.float64)
    return float((cum_hits[hits == 1.0] / ranks[hits == 1.0]).sum() / n_pos)


def f1(pred_labels, labels):
    """Binary F1 of class 1; 0 when precision + recall is 0."""
    pred = np.asarray(pred_labels)
    truth = np.asarray(labels)
    tp = int(((pred == 1) & (truth == 1)).sum())
    fp = int(((pred == 1) & (truth != 1)).sum())
    fn = int(((pred != 1) & (truth == 1)).sum())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def accuracy(pred_labels, labels):
    """Fraction of exact matches; NaN on empty input."""
    pred = np.asarray(pred_labels)
    truth = np.asarray(labels)
    if truth.size == 0:
        return math.nan
    return float((pred == truth).sum() / truth.size)


_METRICS = ("roc_auc", "pr_auc", "f1", "accuracy")


def _cell_metric(metric, probs_cell, truth_cell):
    # probs_cell: (n_months, n_classes) for the gathered months of one cell
    if metric == "roc_auc":
        return roc_auc(probs_cell[:, 1], truth_cell)
    if metric == "pr_auc":
        return pr_auc(probs_cell[:, 1], truth_cell)
    if metric == "f1":
        return f1((probs_cell[:, 1] >= F1_PROB_THRESHOLD).astype(np.int16), truth_cell)
    if metric == "accuracy":
        return accuracy(np.argmax(probs_cell, axis=1), truth_cell)
    raise ValueError(f"unknown metric {metric!r}; choose from {_METRICS}")


@dataclass(frozen=True, eq=False)
class MetricMap:
    """Per-cell metric grid; NaN marks cells where the metric is undefined."""

    values: np.ndarray
    median: float
    n_defined: int


def per_cell_map(forecast, labels, metric):
    """Compute one metric per cell over its predicted, valid months."""
    if (forecast.t_len, forecast.rows, forecast.cols) != (labels.t_len, labels.rows, labels.cols):
        raise ValueError("forecast and labels dimensions differ")
    if metric in ("roc_auc", "pr_auc", "f1") and forecast.n_classes != 2:
        raise ValueError(f"{metric} requires a binary forecast")
    if not forecast.predicted.any():
        raise ValueError("forecast has no predicted months")
    rows, cols = forecast.rows, forecast.cols
    values = np.full((rows, cols), np.nan, dtype=np.float64)
    pred_months = forecast.predicted
    for r in range(rows):
        for c in range(cols):
            take = pred_months & labels.mask[:, r, c]
            if not take.any():
                continue
            values[r, c] = _cell_metric(metric, forecast.probs[take, :, r, c], labels.labels[take, r, c])
    defined = values[np.isfinite(values)]
    if defined.size == 0:
        raise EmptyDataError("no cell has a defined metric")
    return MetricMap(values=values, median=float(np.median(defined)), n_defined=int(defined.size))


def median_of_map_region(metric_map, r0, r1, c0, c1):
    """Median over defined cells inside a sub-window of a metric map."""
    region = metric_map.values[r0:r1, c0:c1]
    defined = region[np.isfinite(region)]
    if defined.size == 0:
        raise EmptyDataError("no defined cells in the requested region")
    return float(np.median(defined))


def export_metric_map_csv(metric_map, path):
    """Write `row,col,value` records; undefined cells carry literal `nan`."""
    with open(path, "w") as fh:
        fh.write("row,col,value\n")
        rows, cols = metric_map.values.shape
        for r in range(rows):
            for c in range(cols):
                v = metric_map.values[r, c]
                text = "nan" if not np.isfinite(v) else format(v, ".17g")
                fh.write(f"{r},{c},{text}\n")


def load_metric_map_csv(path):
    """Read a `row,col,value` export back into a MetricMap."""
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["row", "col", "value"]:
            raise EmptyDataError(f"{path}: expected header row,col,value")
        for line in reader:
            if not line:
                continue
            entries.append((int(line[0]), int(line[1]), float(line[2])))
    if not entries:
        raise EmptyDataError(f"{path}: no records")
    rows = max(e[0] for e in entries) + 1
    cols = max(e[1] for e in entries) + 1
    values = np.full((rows, cols), np.nan, dtype=np.float64)
    for r, c, v in entries:
        values[r, c] = v
    defined = values[np.isfinite(values)]
    if defined.size == 0:
        raise EmptyDataError(f"{path}: every cell is undefined")
    return MetricMap(values=values, median=float(np.median(defined)), n_defined=int(defined.size))
