"""Gradient-boosted regression trees with exact greedy second-order splits.

Binary boosting fits one tree per round against the logistic loss;
multiclass fits one tree per class per round against the softmax loss.
Split gain is the usual regularized second-order criterion

    0.5 * (GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda)) - gamma

maximized over every feature and every midpoint between adjacent distinct
training values.  No randomness is used anywhere, so a (data, hyper) pair
fully determines the model.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import UnsupportedVersionError


@dataclass(frozen=True)
class GbdtHyper:
    max_depth: int = 3
    n_rounds: int = 200
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    patience: int = 20

    def __post_init__(self):
        if self.max_depth < 1 or self.n_rounds < 0:
            raise ValueError("max_depth must be >= 1 and n_rounds >= 0")
        if self.learning_rate <= 0.0 or self.reg_lambda < 0.0:
            raise ValueError("learning_rate must be > 0 and reg_lambda >= 0")


class TreeNode:
    """Split node (feature, threshold, children) or leaf (log-odds increment)."""

    __slots__ = ("feature", "threshold", "left", "right", "leaf_value", "gain")

    def __init__(self, feature=None, threshold=None, left=None, right=None, leaf_value=None, gain=None):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.leaf_value = leaf_value
        self.gain = gain

    @property
    def is_leaf(self):
        return self.left is None


@dataclass
class GbdtModel:
    """Boosted ensemble: rounds x classes tree grid plus per-class base score."""

    trees: list
    base_score: np.ndarray
    n_classes: int
    feature_width: int
    hyper: GbdtHyper
    status: str = "ok"
    train_logloss: list = field(default_factory=list)

    @property
    def n_rounds_fitted(self):
        return len(self.trees)


def best_split(gradients, hessians, feature_values, hyper):
    """Exact greedy split over all features: (feature, threshold, gain) or None.

    Ties prefer the lowest feature index, then the lowest threshold.
    """
    gradients = np.asarray(gradients, dtype=np.float64)
    hessians = np.asarray(hessians, dtype=np.float64)
    x = np.asarray(feature_values, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    best = None
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j], kind="mergesort")
        found = _kernels.split_scan(
            np.ascontiguousarray(x[order, j]),
            np.ascontiguousarray(gradients[order]),
            np.ascontiguousarray(hessians[order]),
            hyper.reg_lambda,
            hyper.gamma,
            hyper.min_child_weight,
        )
        if found is not None and (best is None or found[0] > best[2]):
            best = (j, found[1], found[0])
    return best


def _grow_tree(x, sorted_ids, member, grads, hess, hyper, depth):
    ids = sorted_ids[0][member[sorted_ids[0]]]
    g_sum = float(grads[ids].sum())
    h_sum = float(hess[ids].sum())
    leaf = -g_sum / (h_sum + hyper.reg_lambda) * hyper.learning_rate
    if depth >= hyper.max_depth or ids.size < 2:
        return TreeNode(leaf_value=leaf)

    best = None
    for j in range(x.shape[1]):
        idx = sorted_ids[j][member[sorted_ids[j]]]
        found = _kernels.split_scan(
            np.ascontiguousarray(x[idx, j]),
            np.ascontiguousarray(grads[idx]),
            np.ascontiguousarray(hess[idx]),
            hyper.reg_lambda,
            hyper.gamma,
            hyper.min_child_weight,
        )
        if found is not None and (best is None or found[0] > best[2]):
            best = (j, found[1], found[0])
    if best is None:
        return TreeNode(leaf_value=leaf)

    feature, threshold, gain = best
    member_left = member & (x[:, feature] <= threshold)
    member_right = member & ~(x[:, feature] <= threshold)
    node = TreeNode(feature=feature, threshold=threshold, gain=gain)
    node.left = _grow_tree(x, sorted_ids, member_left, grads, hess, hyper, depth + 1)
    node.right = _grow_tree(x, sorted_ids, member_right, grads, hess, hyper, depth + 1)
    return node


def _tree_apply(node, x):
    out = np.empty(x.shape[0], dtype=np.float64)
    stack = [(node, np.arange(x.shape[0]))]
    while stack:
        nd, idx = stack.pop()
        if nd.is_leaf:
            out[idx] = nd.leaf_value
            continue
        go_left = x[idx, nd.feature] <= nd.threshold
        stack.append((nd.left, idx[go_left]))
        stack.append((nd.right, idx[~go_left]))
    return out


def _binary_grad_hess(scores, y):
    p = 1.0 / (1.0 + np.exp(-scores))
    return p - y, p * (1.0 - p)


def _softmax_rows(scores):
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _mean_logloss(scores, y, n_classes):
    if n_classes == 2:
        z = scores
        return float((np.logaddexp(0.0, z) - y * z).mean())
    logits = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=1))
    return float((logz - logits[np.arange(y.size), y]).mean())


def fit_gbdt(design, hyper=None, val_design=None):
    """Boost trees against the logistic/softmax loss.

    With a validation design, rounds stop early once the validation logloss
    has not improved for `hyper.patience` rounds, and the model keeps only
    the best prefix.  A single-class training set yields a base-score-only
    model with status "single-class".
    """
    hyper = hyper or GbdtHyper()
    x = np.asarray(design.features, dtype=np.float64)
    y = np.asarray(design.targets, dtype=np.int64)
    n, _ = x.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    k = design.n_classes

    counts = np.bincount(y, minlength=k).astype(np.float64)
    prior = np.clip(counts / counts.sum(), 1e-12, 1.0 - 1e-12)
    if k == 2:
        base = np.array([float(np.log(prior[1] / prior[0]))])
    else:
        base = np.log(prior)

    if np.unique(y).size < 2:
        warnings.warn("training labels contain a single class; returning base-score-only model")
        return GbdtModel(
            trees=[], base_score=base, n_classes=k, feature_width=x.shape[1],
            hyper=hyper, status="single-class",
        )

    sorted_ids = [np.argsort(x[:, j], kind="mergesort") for j in range(x.shape[1])]
    all_members = np.ones(n, dtype=bool)

    if k == 2:
        y_float = y.astype(np.float64)
        scores = np.full(n, base[0])
    else:
        scores = np.tile(base, (n, 1))
    val_scores = None
    if val_design is not None:
        xv = np.asarray(val_design.features, dtype=np.float64)
        yv = np.asarray(val_design.targets, dtype=np.int64)
        val_scores = np.full(xv.shape[0], base[0]) if k == 2 else np.tile(base, (xv.shape[0], 1))

    trees = []
    losses = []
    best_val = np.inf
    best_round = 0
    since_best = 0
    for _ in range(hyper.n_rounds):
        round_trees = []
        if k == 2:
            g, h = _binary_grad_hess(scores, y_float)
            tree = _grow_tree(x, sorted_ids, all_members, g, h, hyper, depth=0)
            scores += _tree_apply(tree, x)
            round_trees.append(tree)
            if val_scores is not None:
                val_scores += _tree_apply(tree, xv)
            losses.append(_mean_logloss(scores, y_float, 2))
        else:
            p = _softmax_rows(scores)
            for cls in range(k):
                g = p[:, cls] - (y == cls).astype(np.float64)
                h = p[:, cls] * (1.0 - p[:, cls])
                tree = _grow_tree(x, sorted_ids, all_members, g, h, hyper, depth=0)
                scores[:, cls] += _tree_apply(tree, x)
                round_trees.append(tree)
                if val_scores is not None:
                    val_scores[:, cls] += _tree_apply(tree, xv)
            losses.append(_mean_logloss(scores, y, k))
        trees.append(round_trees)
        if val_scores is not None:
            val_loss = _mean_logloss(val_scores, yv if k != 2 else yv.astype(np.float64), k)
            if val_loss < best_val:
                best_val = val_loss
                best_round = len(trees)
                since_best = 0
            else:
                since_best += 1
                if since_best > hyper.patience:
                    trees = trees[:best_round]
                    losses = losses[:best_round]
                    break
    return GbdtModel(
        trees=trees, base_score=base, n_classes=k, feature_width=x.shape[1],
        hyper=hyper, train_logloss=losses,
    )


def predict_gbdt(model, design_or_features):
    """Per-sample class probabilities from base score plus all leaf values."""
    x = design_or_features.features if hasattr(design_or_features, "features") else design_or_features
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != model.feature_width:
        raise ValueError(f"feature width {x.shape[1]} != model width {model.feature_width}")
    n = x.shape[0]
    if model.n_classes == 2:
        scores = np.full(n, model.base_score[0])
        for round_trees in model.trees:
            scores += _tree_apply(round_trees[0], x)
        p1 = 1.0 / (1.0 + np.exp(-scores))
        return np.column_stack((1.0 - p1, p1))
    scores = np.tile(model.base_score, (n, 1))
    for round_trees in model.trees:
        for cls, tree in enumerate(round_trees):
            scores[:, cls] += _tree_apply(tree, x)
    return _softmax_rows(scores)


_GBDT_MAGIC = "droughtcast-gbdt"


def _dump_node(node, out):
    if node.is_leaf:
        out.append(f"L {format(node.leaf_value, '.17g')}")
    else:
        out.append(f"S {node.feature} {format(node.threshold, '.17g')}")
        _dump_node(node.left, out)
        _dump_node(node.right, out)


def format_gbdt(model):
    """Versioned plain-text dump: header, then each tree pre-order."""
    h = model.hyper
    lines = [
        f"{_GBDT_MAGIC} 1",
        f"n_classes {model.n_classes}",
        f"feature_width {model.feature_width}",
        f"status {model.status}",
        f"base_score {' '.join(format(float(v), '.17g') for v in model.base_score)}",
        (
            f"hyper {h.max_depth} {h.n_rounds} {format(h.learning_rate, '.17g')} "
            f"{format(h.reg_lambda, '.17g')} {format(h.gamma, '.17g')} "
            f"{format(h.min_child_weight, '.17g')} {h.patience}"
        ),
        f"n_rounds_fitted {model.n_rounds_fitted}",
    ]
    for r, round_trees in enumerate(model.trees):
        for cls, tree in enumerate(round_trees):
            lines.append(f"tree {r} {cls}")
            _dump_node(tree, lines)
    return "\n".join(lines) + "\n"


def save_gbdt(model, path):
    with open(path, "w") as fh:
        fh.write(format_gbdt(model))


def _parse_node(lines, pos):
    parts = lines[pos].split()
    if parts[0] == "L":
        return TreeNode(leaf_value=float(parts[1])), pos + 1
    node = TreeNode(feature=int(parts[1]), threshold=float(parts[2]))
    node.left, pos = _parse_node(lines, pos + 1)
    node.right, pos = _parse_node(lines, pos)
    return node, pos


def parse_gbdt(text):
    lines = [line for line in text.splitlines() if line.strip()]
    first = lines[0].split()
    if len(first) != 2 or first[0] != _GBDT_MAGIC:
        raise UnsupportedVersionError("not a gbdt model file")
    if first[1] != "1":
        raise UnsupportedVersionError(f"unsupported gbdt version {first[1]}")
    fields = {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("tree "):
        key, _, rest = lines[pos].partition(" ")
        fields[key] = rest.strip()
        pos += 1
    hp = fields["hyper"].split()
    hyper = GbdtHyper(
        max_depth=int(hp[0]),
        n_rounds=int(hp[1]),
        learning_rate=float(hp[2]),
        reg_lambda=float(hp[3]),
        gamma=float(hp[4]),
        min_child_weight=float(hp[5]),
        patience=int(hp[6]),
    )
    n_classes = int(fields["n_classes"])
    trees_per_round = 1 if n_classes == 2 else n_classes
    trees = []
    while pos < len(lines):
        assert lines[pos].startswith("tree ")
        pos += 1
        tree, pos = _parse_node(lines, pos)
        if not trees or len(trees[-1]) == trees_per_round:
            trees.append([])
        trees[-1].append(tree)
    model = GbdtModel(
        trees=trees,
        base_score=np.array([float(v) for v in fields["base_score"].split()]),
        n_classes=n_classes,
        feature_width=int(fields["feature_width"]),
        hyper=hyper,
        status=fields.get("status", "ok"),
    )
    if model.n_rounds_fitted != int(fields["n_rounds_fitted"]):
        raise UnsupportedVersionError("tree count mismatch")
    return model


def load_gbdt(path):
    with open(path) as fh:
        return parse_gbdt(fh.read())
