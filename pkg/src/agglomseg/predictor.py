"""Boundary confidence functions and their training.

A confidence near 1 means the boundary is believed to be real (keep it), near
0 means it is an over-segmentation artifact (merge it). Class 1 in all
training data is "true boundary".
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .agglomerate import AgglomConfig, agglomerate_delayed
from .features import edge_features, feature_length
from .rag import CYTO, MITO, _cross_pairs

log = logging.getLogger(__name__)

FOREST_FORMAT = "agglomseg-forest"
FOREST_VERSION = 1


class SingleClassError(ValueError):
    """Training data contains only one class."""


# ground truth ---------------------------------------------------------------

def region_gt_overlaps(overseg, gt):
    """{region: Counter(gt id -> voxel overlap)}."""
    overseg = np.asarray(overseg)
    gt = np.asarray(gt)
    if overseg.shape != gt.shape:
        raise ValueError(f"shape mismatch: {overseg.shape} vs {gt.shape}")
    pairs = np.stack([overseg.ravel().astype(np.int64), gt.ravel().astype(np.int64)], axis=1)
    uniq, n = np.unique(pairs, axis=0, return_counts=True)
    out = {}
    for (s, g), c in zip(uniq.tolist(), n.tolist()):
        out.setdefault(s, Counter())[g] = c
    return out


def majority_label(overlap):
    """gt id with the largest overlap; ties go to the lower id."""
    return min(overlap.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def assign_gt_labels(overseg, gt):
    """Map each region to its ground-truth body and label every boundary.

    Returns ``(region -> gt id, (lo, hi) -> 0/1)`` where 1 means the two
    regions belong to different ground-truth bodies.
    """
    overlaps = region_gt_overlaps(overseg, gt)
    lmap = {s: majority_label(c) for s, c in overlaps.items()}
    labels = np.asarray(overseg).astype(np.int64)
    p, q = _cross_pairs(labels)
    flat = labels.ravel()
    a, b = flat[p], flat[q]
    pairs = np.unique(np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1), axis=0)
    edges = {(int(x), int(y)): int(lmap[int(x)] != lmap[int(y)]) for x, y in pairs.tolist()}
    return lmap, edges


# forest ---------------------------------------------------------------------

@dataclass
class Tree:
    """Flat binary tree; ``feature[i] < 0`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def depth(self):
        best = 0
        stack = [(0, 0)]
        while stack:
            i, d = stack.pop()
            if self.feature[i] < 0:
                best = max(best, d)
            else:
                stack.append((self.left[i], d + 1))
                stack.append((self.right[i], d + 1))
        return best

    def predict_one(self, x):
        feature, threshold = self.feature, self.threshold
        i = 0
        while feature[i] >= 0:
            i = self.left[i] if x[feature[i]] <= threshold[i] else self.right[i]
        return self.value[i]

    def predict_many(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            r = rows[inner]
            n = node[inner]
            go_left = X[r, f[inner]] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])


@dataclass
class Forest:
    trees: list
    n_features: int
    max_depth: int
    seed: int
    n_trees: int = field(init=False)

    def __post_init__(self):
        self.n_trees = len(self.trees)


def _gini_split(x, y):
    """Best (weighted gini, threshold) for one feature, or None."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    n = xs.size
    valid = np.flatnonzero(xs[1:] != xs[:-1]) + 1
    if valid.size == 0:
        return None
    pos = np.cumsum(ys)
    total = pos[-1]
    n_left = valid.astype(np.float64)
    p_left = pos[valid - 1]
    n_right = n - n_left
    p_right = total - p_left
    # n * gini = n - (pos^2 + neg^2) / n = 2 * pos * neg / n
    cost = 2.0 * p_left * (n_left - p_left) / n_left + 2.0 * p_right * (n_right - p_right) / n_right
    k = int(np.argmin(cost))
    i = valid[k]
    lo, hi = xs[i - 1], xs[i]
    thr = lo + (hi - lo) / 2.0
    if not (lo <= thr < hi):
        thr = lo
    return cost[k], thr


def _grow_tree(X, y, rows, max_depth, n_candidates, rng, min_samples_split=2):
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, rows, 0)]
    d = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        yy = y[idx]
        frac = float(yy.mean())
        value[node] = frac
        if depth >= max_depth or idx.size < min_samples_split or frac in (0.0, 1.0):
            continue
        best = None
        for f in rng.choice(d, size=n_candidates, replace=False):
            res = _gini_split(X[idx, f], yy)
            if res is not None and (best is None or res[0] < best[0]):
                best = (res[0], int(f), res[1])
        if best is None:
            continue
        _, f, thr = best
        go_left = X[idx, f] <= thr
        li, ri = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
        stack.append((ri, idx[~go_left], depth + 1))
        stack.append((li, idx[go_left], depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=np.float64))


def train_forest(X, y, n_trees=50, max_depth=20, seed=0, *, bootstrap=True,
                 max_features="sqrt", allow_single_class=False):
    """Random forest of gini trees storing class-1 fractions at the leaves.

    Each tree sees a bootstrap resample and ``sqrt(d)`` random candidate
    features per split. ``max_depth=None`` grows trees until leaves are pure.
    Fully determined by ``seed``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data is empty")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y lengths differ")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if np.unique(y).size < 2 and not allow_single_class:
        raise SingleClassError(f"training data has a single class ({int(y[0])})")
    if max_depth is None:
        max_depth = 10**6
    d = X.shape[1]
    if max_features == "sqrt":
        n_candidates = max(1, int(math.sqrt(d)))
    elif max_features is None:
        n_candidates = d
    else:
        n_candidates = int(max_features)
    trees = []
    n = X.shape[0]
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(_grow_tree(X, y, rows, max_depth, n_candidates, rng))
    return Forest(trees, d, max_depth, seed)


def predict(forest, x):
    """Mean leaf class-1 fraction over the trees, in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (forest.n_features,):
        raise ValueError(f"feature length {x.shape} does not match forest ({forest.n_features})")
    return math.fsum(t.predict_one(x) for t in forest.trees) / len(forest.trees)


def predict_many(forest, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise ValueError(f"feature length {X.shape[-1]} does not match forest ({forest.n_features})")
    return np.mean([t.predict_many(X) for t in forest.trees], axis=0)


def forest_to_dict(forest):
    return {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "n_features": forest.n_features,
        "max_depth": forest.max_depth,
        "seed": forest.seed,
        "trees": [{"feature": t.feature.tolist(), "threshold": t.threshold.tolist(),
                   "left": t.left.tolist(), "right": t.right.tolist(),
                   "value": t.value.tolist()} for t in forest.trees],
    }


def forest_from_dict(doc):
    if doc.get("format") != FOREST_FORMAT:
        raise ValueError("not a forest document")
    if doc.get("version") != FOREST_VERSION:
        raise ValueError(f"unsupported forest version {doc.get('version')!r}")
    trees = [Tree(np.array(t["feature"], dtype=np.int64), np.array(t["threshold"], dtype=np.float64),
                  np.array(t["left"], dtype=np.int64), np.array(t["right"], dtype=np.int64),
                  np.array(t["value"], dtype=np.float64)) for t in doc["trees"]]
    return Forest(trees, int(doc["n_features"]), int(doc["max_depth"]), int(doc["seed"]))


def save_forest(forest, path):
    with open(path, "w") as fh:
        json.dump(forest_to_dict(forest), fh, sort_keys=True)
        fh.write("\n")


def load_forest(path):
    with open(path) as fh:
        return forest_from_dict(json.load(fh))


# confidence functions ---------------------------------------------------------

def mean_boundary_confidence(g, e, channel="boundary"):
    """Mean boundary-channel probability over the edge's samples."""
    try:
        idx = g.channels.index(channel)
    except ValueError:
        raise ValueError(f"graph has no {channel!r} channel") from None
    return e.hists[idx].mean


def forest_confidence(forest):
    """h(g, e) = forest prediction on the edge's feature vector."""
    def h(g, e):
        return predict(forest, edge_features(g, e))
    return h


# training regimes -------------------------------------------------------------

@dataclass
class TrainingSet:
    X: np.ndarray
    y: np.ndarray
    iteration: np.ndarray

    def __len__(self):
        return int(self.y.shape[0])

    @classmethod
    def empty(cls, n_features):
        return cls(np.empty((0, n_features)), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))

    def union(self, other):
        return TrainingSet(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]),
                           np.concatenate([self.iteration, other.iteration]))


def _context_eligible(g, e):
    return g.nodes[e.a].type_tag == CYTO and g.nodes[e.b].type_tag == CYTO


def _is_mito_cyto(g, e):
    return {g.nodes[e.a].type_tag, g.nodes[e.b].type_tag} == {CYTO, MITO}


def initial_training_set(g, overseg, gt, context=False):
    """Rows for every initial edge of ``g``.

    In context mode mito-mito edges are skipped and mito-cytoplasm borders are
    labeled as true boundaries.
    """
    lmap, _ = assign_gt_labels(overseg, gt)
    rows, labels = [], []
    for key in sorted(g.edges):
        e = g.edges[key]
        if context:
            if _is_mito_cyto(g, e):
                lab = 1
            elif _context_eligible(g, e):
                lab = int(lmap[e.a] != lmap[e.b])
            else:
                continue
        else:
            lab = int(lmap[e.a] != lmap[e.b])
        rows.append(edge_features(g, e))
        labels.append(lab)
    n_feat = feature_length(len(g.channels))
    X = np.array(rows).reshape(-1, n_feat)
    y = np.array(labels, dtype=np.int64)
    return TrainingSet(X, y, np.ones(y.shape[0], dtype=np.int64))


def popped_training_set(g0, overseg, gt, forest, iteration, delta=0.5, context=False):
    """Run delayed agglomeration on a copy of ``g0`` and label each popped edge."""
    g = g0.copy()
    overlaps = region_gt_overlaps(overseg, gt)
    rows, labels = [], []

    def on_pop(g, e, c):
        rows.append(edge_features(g, e))
        labels.append(int(majority_label(overlaps[e.a]) != majority_label(overlaps[e.b])))

    def on_merge(g, keep, absorb):
        overlaps[keep] = overlaps[keep] + overlaps.pop(absorb)

    agglomerate_delayed(g, forest_confidence(forest), AgglomConfig(delta=delta),
                        eligible=_context_eligible if context else None,
                        on_pop=on_pop, on_merge=on_merge)
    n_feat = feature_length(len(g0.channels))
    y = np.array(labels, dtype=np.int64)
    return TrainingSet(np.array(rows).reshape(-1, n_feat), y,
                       np.full(y.shape[0], iteration, dtype=np.int64))


@dataclass
class TrainingRun:
    forest: Forest
    sets: list
    rows_per_iteration: list


def iterative_train(g0, overseg, gt, iterations=1, accumulate=False, *, n_trees=50,
                    max_depth=20, seed=0, delta=0.5, context=False):
    """Train a boundary forest, optionally over several agglomeration passes.

    Iteration 1 uses every initial edge. Each later iteration agglomerates a
    fresh copy of ``g0`` with the current forest, labels every popped edge,
    and retrains on either the union of all rows so far (``accumulate``) or
    the newest rows only.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    current = initial_training_set(g0, overseg, gt, context)
    sets = [current]
    forest = train_forest(current.X, current.y, n_trees, max_depth, seed)
    rows = [len(current)]
    log.info("iteration 1: %d rows", len(current))
    for it in range(2, iterations + 1):
        new = popped_training_set(g0, overseg, gt, forest, it, delta, context)
        current = current.union(new) if accumulate else new
        sets.append(current)
        rows.append(len(current))
        log.info("iteration %d: %d rows", it, len(current))
        forest = train_forest(current.X, current.y, n_trees, max_depth, seed)
    return TrainingRun(forest, sets, rows)
