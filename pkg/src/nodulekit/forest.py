"""Deterministic random-forest classifier for 1-5 malignancy ratings.

Each tree trains on a bootstrap resample drawn from its own RNG stream
(seed + tree index), examines a fresh feature subset at every node, and
splits at midpoints between consecutive distinct sorted values by weighted
Gini impurity. Ties break toward the lower feature index, then the lower
threshold; vote ties break toward the lower label. Identical data, params
and seed reproduce the forest bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

FORMAT_VERSION = 1


@dataclass
class ForestParams:
    n_trees: int = 200
    features_per_split: int | None = None  # None -> floor(sqrt(d))
    min_leaf: int = 1
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@dataclass
class _Tree:
    feature: np.ndarray    # (nodes,) int, -1 for leaves
    threshold: np.ndarray  # (nodes,) float
    left: np.ndarray       # (nodes,) int
    right: np.ndarray      # (nodes,) int
    counts: np.ndarray     # (nodes, n_classes) class counts (meaningful at leaves)


@dataclass
class Forest:
    trees: list[_Tree]
    classes: np.ndarray  # sorted label list
    d: int
    params: ForestParams


def _as_matrix(x) -> np.ndarray:
    """Accept an (n, d) array or a list of FeatureVector-likes."""
    if isinstance(x, np.ndarray):
        return np.asarray(x, dtype=float)
    rows = [np.asarray(getattr(r, "values", r), dtype=float) for r in x]
    return np.vstack(rows)


def _best_split(xs: np.ndarray, y_idx: np.ndarray, feat_subset: np.ndarray,
                n_classes: int, min_leaf: int) -> tuple[float, int, float] | None:
    """Lowest weighted-Gini split over the feature subset; None if no valid one."""
    n = len(y_idx)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y_idx] = 1.0
    best: tuple[float, int, float] | None = None
    for f in feat_subset:
        v = xs[:, f]
        order = np.argsort(v, kind="stable")
        sv = v[order]
        cum = np.cumsum(onehot[order], axis=0)
        splits = np.flatnonzero(sv[:-1] != sv[1:])
        if len(splits) == 0:
            continue
        n_left = splits + 1.0
        n_right = n - n_left
        ok = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not ok.any():
            continue
        splits = splits[ok]
        n_left = n_left[ok]
        n_right = n_right[ok]
        counts_left = cum[splits]
        counts_right = cum[-1] - counts_left
        score = 1.0 - ((counts_left**2).sum(axis=1) / n_left
                       + (counts_right**2).sum(axis=1) / n_right) / n
        k = int(np.argmin(score))  # first minimum = lowest threshold
        gini = float(score[k])
        thr = float((sv[splits[k]] + sv[splits[k] + 1]) / 2.0)
        if best is None or gini < best[0] or (
                gini == best[0] and (f, thr) < (best[1], best[2])):
            best = (gini, int(f), thr)
    return best


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p**2).sum())


def _build_tree(xs: np.ndarray, y_idx: np.ndarray, n_classes: int,
                params: ForestParams, k_features: int,
                rng: np.random.Generator) -> _Tree:
    d = xs.shape[1]
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[np.ndarray] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.zeros(n_classes))
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(y_idx)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        node_counts = np.bincount(y_idx[idx], minlength=n_classes).astype(float)
        counts[node] = node_counts
        pure = (node_counts > 0).sum() <= 1
        too_small = len(idx) < 2 * params.min_leaf
        at_depth = params.max_depth is not None and depth >= params.max_depth
        if pure or too_small or at_depth:
            continue
        subset = np.sort(rng.choice(d, size=k_features, replace=False))
        best = _best_split(xs[idx], y_idx[idx], subset, n_classes, params.min_leaf)
        if best is None or best[0] >= _gini(node_counts):
            continue
        _, f, thr = best
        go_left = xs[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left_id = new_node()
        right_id = new_node()
        left[node] = left_id
        right[node] = right_id
        # push right first so the left child expands next (preorder)
        stack.append((right_id, idx[~go_left], depth + 1))
        stack.append((left_id, idx[go_left], depth + 1))
    return _Tree(feature=np.asarray(feature, dtype=np.int64),
                 threshold=np.asarray(threshold, dtype=float),
                 left=np.asarray(left, dtype=np.int64),
                 right=np.asarray(right, dtype=np.int64),
                 counts=np.asarray(counts, dtype=float))


def train(x, y, params: ForestParams | None = None) -> Forest:
    """Grow a forest of bagged Gini trees."""
    params = params or ForestParams()
    xs = _as_matrix(x)
    ys = np.asarray(y)
    if len(xs) != len(ys):
        raise ValueError(f"{len(xs)} samples but {len(ys)} labels")
    if len(xs) < 2:
        raise ValueError("need at least 2 training samples")
    if not np.isfinite(xs).all():
        raise ValueError("features must be finite")
    classes = np.unique(ys)
    class_index = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([class_index[v] for v in ys], dtype=np.int64)
    n, d = xs.shape
    k_features = params.features_per_split or max(1, int(math.isqrt(d)))
    if not 1 <= k_features <= d:
        raise ValueError(f"features_per_split must be in [1, {d}], got {k_features}")
    trees = []
    for t in range(params.n_trees):
        rng = np.random.Generator(np.random.PCG64(params.seed + t))
        bootstrap = rng.integers(0, n, size=n)
        trees.append(_build_tree(xs[bootstrap], y_idx[bootstrap], len(classes),
                                 params, k_features, rng))
    return Forest(trees=trees, classes=classes, d=d, params=params)


def _tree_votes(tree: _Tree, xs: np.ndarray) -> np.ndarray:
    """Leaf-majority class index per query row (vectorized routing)."""
    pos = np.zeros(len(xs), dtype=np.int64)
    active = tree.feature[pos] >= 0
    while active.any():
        rows = np.flatnonzero(active)
        node = pos[rows]
        go_left = xs[rows, tree.feature[node]] <= tree.threshold[node]
        pos[rows] = np.where(go_left, tree.left[node], tree.right[node])
        active = tree.feature[pos] >= 0
    return np.argmax(tree.counts[pos], axis=1)  # first max = lowest label


def predict(f: Forest, x) -> tuple[int, dict]:
    """Majority vote over trees for one sample; ties go to the lower label."""
    xs = _as_matrix([x] if not isinstance(x, (list, np.ndarray)) or (
        isinstance(x, np.ndarray) and x.ndim == 1) else x)
    if xs.shape[1] != f.d:
        raise ValueError(f"feature dimension {xs.shape[1]} != forest dimension {f.d}")
    tally = np.zeros(len(f.classes), dtype=np.int64)
    for tree in f.trees:
        tally[_tree_votes(tree, xs[:1])[0]] += 1
    winner = f.classes[int(np.argmax(tally))]
    votes = {int(c): int(tally[i]) for i, c in enumerate(f.classes) if tally[i] > 0}
    return int(winner), votes


def predict_batch(f: Forest, x) -> np.ndarray:
    """Vote-majority labels for an (n, d) batch."""
    xs = _as_matrix(x)
    if xs.shape[1] != f.d:
        raise ValueError(f"feature dimension {xs.shape[1]} != forest dimension {f.d}")
    tally = np.zeros((len(xs), len(f.classes)), dtype=np.int64)
    rows = np.arange(len(xs))
    for tree in f.trees:
        tally[rows, _tree_votes(tree, xs)] += 1
    return f.classes[np.argmax(tally, axis=1)]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save(f: Forest, path: str | Path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "classes": [int(c) for c in f.classes],
        "d": f.d,
        "params": {
            "n_trees": f.params.n_trees,
            "features_per_split": f.params.features_per_split,
            "min_leaf": f.params.min_leaf,
            "max_depth": f.params.max_depth,
            "seed": f.params.seed,
        },
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "counts": t.counts.tolist(),
            }
            for t in f.trees
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load(path: str | Path) -> Forest:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot load forest from {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported forest format version {doc.get('format_version')!r}")
    try:
        params = ForestParams(**doc["params"])
        trees = [
            _Tree(feature=np.asarray(t["feature"], dtype=np.int64),
                  threshold=np.asarray(t["threshold"], dtype=float),
                  left=np.asarray(t["left"], dtype=np.int64),
                  right=np.asarray(t["right"], dtype=np.int64),
                  counts=np.asarray(t["counts"], dtype=float))
            for t in doc["trees"]
        ]
        return Forest(trees=trees, classes=np.asarray(doc["classes"]),
                      d=int(doc["d"]), params=params)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: corrupt forest file: {exc}") from exc
