"""Region adjacency graph built from a label volume.

Nodes are regions; an edge joins two regions that share at least one
face-adjacent voxel pair (4-neighbourhood in 2D, 6 in 3D). Each cross pair
contributes both of its voxels' channel values to the edge histograms, and
``face_length`` counts the cross pairs.

Merging keeps the graph identical to a rebuild from the relabeled volume:
counts, adjacency, face lengths and histograms all match exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import (FIXED_SHIFT, N_BINS, MomentHistogram, bin_index,
                       hist_stats, merge_hist, merge_into, to_fixed)

CYTO = "Cyto"
MITO = "Mito"

ACTIVE = "ACTIVE"
DELAY = "DELAY"

DEFAULT_CHANNELS = ("boundary", "cytoplasm", "mitochondria", "mito_boundary")

_HALF = FIXED_SHIFT // 2
_LOW_MASK = (1 << _HALF) - 1


@dataclass
class ProbabilityStack:
    """Named per-voxel probability channels sharing one grid."""

    channels: list
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channels = list(self.channels)
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("channel names must be unique")
        missing = [c for c in self.channels if c not in self.data]
        if missing:
            raise ValueError(f"missing channel data: {missing}")
        shapes = {np.shape(self.data[c]) for c in self.channels}
        if len(shapes) > 1:
            raise ValueError(f"channel shapes differ: {shapes}")
        for c in self.channels:
            arr = np.asarray(self.data[c])
            if arr.size and (np.nanmin(arr) < 0 or np.nanmax(arr) > 1
                             or not np.all(np.isfinite(arr))):
                raise ValueError(f"channel {c!r} has values outside [0, 1]")
            self.data[c] = arr

    @classmethod
    def from_arrays(cls, **arrays):
        return cls(list(arrays), dict(arrays))

    @property
    def shape(self):
        if not self.channels:
            return None
        return np.shape(self.data[self.channels[0]])

    def __getitem__(self, name):
        return self.data[name]

    def __contains__(self, name):
        return name in self.data


class RegionNode:
    __slots__ = ("id", "voxel_count", "type_tag", "hists", "version", "_stats")

    def __init__(self, id, voxel_count, hists, type_tag=CYTO):
        self.id = id
        self.voxel_count = voxel_count
        self.type_tag = type_tag
        self.hists = hists
        self.version = 0
        self._stats = None

    def __repr__(self):
        return f"RegionNode({self.id}, count={self.voxel_count}, {self.type_tag})"


class BoundaryEdge:
    __slots__ = ("a", "b", "face_length", "hists", "flag", "cached_confidence",
                 "cache_version", "version", "_stats")

    def __init__(self, a, b, face_length, hists, version=0):
        if a > b:
            a, b = b, a
        self.a = a
        self.b = b
        self.face_length = face_length
        self.hists = hists
        self.flag = ACTIVE
        self.cached_confidence = None
        self.cache_version = -1
        self.version = version
        self._stats = None

    @property
    def key(self):
        return (self.a, self.b)

    def other(self, node_id):
        return self.b if node_id == self.a else self.a

    def __repr__(self):
        return f"BoundaryEdge({self.a}, {self.b}, face={self.face_length})"


def edge_key(a, b):
    if a == b:
        raise ValueError(f"self edge on region {a}")
    return (a, b) if a < b else (b, a)


class RegionGraph:
    """Mutable region adjacency graph with a union-find record of merges."""

    def __init__(self, channels=()):
        self.channels = list(channels)
        self.nodes = {}
        self.edges = {}
        self.adjacency = {}
        self.parent = {}
        self._clock = 0

    def tick(self):
        self._clock += 1
        return self._clock

    def add_node(self, id, voxel_count, hists=None, type_tag=CYTO):
        if hists is None:
            hists = [MomentHistogram() for _ in self.channels]
        self.nodes[id] = RegionNode(id, voxel_count, hists, type_tag)
        self.adjacency.setdefault(id, set())
        self.parent[id] = id

    def add_edge(self, a, b, face_length, hists=None):
        key = edge_key(a, b)
        if hists is None:
            hists = [MomentHistogram() for _ in self.channels]
        e = BoundaryEdge(key[0], key[1], face_length, hists, self.tick())
        self.edges[key] = e
        self.adjacency[a].add(b)
        self.adjacency[b].add(a)
        return e

    def edge(self, a, b):
        try:
            return self.edges[edge_key(a, b)]
        except KeyError:
            raise KeyError(f"no edge between {a} and {b}") from None

    def has_edge(self, a, b):
        return a != b and edge_key(a, b) in self.edges

    def incident(self, node_id):
        for b in self.adjacency[node_id]:
            yield self.edges[edge_key(node_id, b)]

    def find(self, label):
        """Current region id holding an original label."""
        root = label
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[label] != root:
            self.parent[label], label = root, self.parent[label]
        return root

    def label_map(self):
        return {lab: self.find(lab) for lab in self.parent}

    def relabel(self, labels):
        """Apply the merge record to an original label volume."""
        labels = np.asarray(labels)
        keys = np.array(sorted(self.parent), dtype=np.int64)
        if keys.size == 0:
            return labels.copy()
        vals = np.array([self.find(int(k)) for k in keys], dtype=labels.dtype)
        idx = np.searchsorted(keys, labels)
        idx = np.clip(idx, 0, keys.size - 1)
        if not np.array_equal(keys[idx], labels):
            raise ValueError("label volume contains ids unknown to the graph")
        return vals[idx]

    def node_stats(self, node):
        cached = node._stats
        if cached is None or cached[0] != node.version:
            stats = np.array([hist_stats(h) for h in node.hists])
            node._stats = cached = (node.version, stats)
        return cached[1]

    def edge_stats(self, edge):
        cached = edge._stats
        if cached is None or cached[0] != edge.version:
            stats = np.array([hist_stats(h) for h in edge.hists])
            edge._stats = cached = (edge.version, stats)
        return cached[1]

    def total_face_length(self, node_id):
        return sum(e.face_length for e in self.incident(node_id))

    def copy(self):
        g = RegionGraph(self.channels)
        g._clock = self._clock
        for nid, n in self.nodes.items():
            m = RegionNode(nid, n.voxel_count, [h.copy() for h in n.hists], n.type_tag)
            m.version = n.version
            g.nodes[nid] = m
        for key, e in self.edges.items():
            f = BoundaryEdge(e.a, e.b, e.face_length, [h.copy() for h in e.hists], e.version)
            f.flag = e.flag
            f.cached_confidence = e.cached_confidence
            f.cache_version = e.cache_version
            g.edges[key] = f
        g.adjacency = {k: set(v) for k, v in self.adjacency.items()}
        g.parent = dict(self.parent)
        return g

    def __len__(self):
        return len(self.nodes)

    def __repr__(self):
        return f"RegionGraph({len(self.nodes)} nodes, {len(self.edges)} edges)"


def _validate_labels(labels):
    labels = np.asarray(labels)
    if labels.ndim not in (1, 2, 3):
        raise ValueError(f"label volume must be 2D or 3D, got {labels.ndim}D")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integers")
    if labels.size == 0:
        raise ValueError("empty label volume")
    if labels.min() < 0:
        raise ValueError("negative labels")
    if np.any(labels == 0):
        raise ValueError("label 0 (unassigned) present in volume")
    return labels.astype(np.int64, copy=False)


def _grouped_hists(group, n_groups, values):
    """Per-group MomentHistograms of ``values`` (exact integer sums)."""
    values = np.asarray(values, dtype=np.float64)
    counts = np.bincount(group, minlength=n_groups)
    sums = _exact_group_sum(group, n_groups, to_fixed(values))
    sumsq = _exact_group_sum(group, n_groups, to_fixed(values * values))
    bins = np.bincount(group * N_BINS + bin_index(values),
                       minlength=n_groups * N_BINS).reshape(n_groups, N_BINS)
    return [MomentHistogram(counts[i], sums[i], sumsq[i], bins[i])
            for i in range(n_groups)]


def _exact_group_sum(group, n_groups, fixed):
    # split into 26-bit halves so float64 bincount stays exact (< 2**53)
    if group.size >= (1 << (53 - _HALF - 1)):
        raise ValueError("too many samples for exact accumulation")
    hi = np.bincount(group, weights=(fixed >> _HALF).astype(np.float64), minlength=n_groups)
    lo = np.bincount(group, weights=(fixed & _LOW_MASK).astype(np.float64), minlength=n_groups)
    return [(int(h) << _HALF) + int(l) for h, l in zip(hi, lo)]


def _cross_pairs(labels):
    """Flat indices (p, q) of face-adjacent voxel pairs with differing labels."""
    flat_idx = np.arange(labels.size, dtype=np.int64).reshape(labels.shape)
    ps, qs = [], []
    for axis in range(labels.ndim):
        lo = [slice(None)] * labels.ndim
        hi = [slice(None)] * labels.ndim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        a, b = labels[tuple(lo)], labels[tuple(hi)]
        diff = a != b
        ps.append(flat_idx[tuple(lo)][diff])
        qs.append(flat_idx[tuple(hi)][diff])
    return np.concatenate(ps), np.concatenate(qs)


def build_rag(labels, probs=None, connectivity=1):
    """Build the region graph of ``labels`` with channel summaries from ``probs``.

    Only face connectivity (``connectivity=1``) is supported.
    """
    if connectivity != 1:
        raise ValueError("only face adjacency (connectivity=1) is supported")
    labels = _validate_labels(labels)
    if probs is None:
        probs = ProbabilityStack([], {})
    if probs.channels and probs.shape != labels.shape:
        raise ValueError(f"probability shape {probs.shape} does not match labels {labels.shape}")
    channels = probs.channels
    g = RegionGraph(channels)

    flat = labels.ravel()
    ids, inv, counts = np.unique(flat, return_inverse=True, return_counts=True)
    node_hists = [_grouped_hists(inv, ids.size, np.asarray(probs[c], dtype=np.float64).ravel())
                  for c in channels]
    for i, nid in enumerate(ids.tolist()):
        g.add_node(nid, int(counts[i]), [node_hists[c][i] for c in range(len(channels))])

    p, q = _cross_pairs(labels)
    if p.size == 0:
        return g
    la, lb = flat[p], flat[q]
    lo = np.minimum(la, lb)
    hi = np.maximum(la, lb)
    span = int(ids[-1]) + 1
    code = lo * span + hi
    codes, pair_inv, faces = np.unique(code, return_inverse=True, return_counts=True)
    group = np.concatenate([pair_inv, pair_inv])
    samples = np.concatenate([p, q])
    edge_hists = [_grouped_hists(group, codes.size, np.asarray(probs[c], dtype=np.float64).ravel()[samples])
                  for c in channels]
    for i, c in enumerate(codes.tolist()):
        a, b = divmod(c, span)
        g.add_edge(a, b, int(faces[i]), [edge_hists[k][i] for k in range(len(channels))])
    return g


def neighbors(g, node_id):
    if node_id not in g.nodes:
        raise KeyError(f"unknown region {node_id}")
    return set(g.adjacency[node_id])


def merge_regions(g, keep, absorb):
    """Merge region ``absorb`` into ``keep``; ``keep`` survives.

    Parallel faces to a shared neighbour are unioned. Every edge incident to
    the merged region gets a fresh version stamp.
    """
    if keep == absorb:
        raise ValueError(f"cannot merge region {keep} with itself")
    key = edge_key(keep, absorb)
    if key not in g.edges:
        raise KeyError(f"no edge between {keep} and {absorb}")
    nk, na = g.nodes[keep], g.nodes[absorb]
    nk.voxel_count += na.voxel_count
    for hk, ha in zip(nk.hists, na.hists):
        merge_into(hk, ha)
    if nk.type_tag == CYTO or na.type_tag == CYTO:
        nk.type_tag = CYTO
    nk.version += 1

    del g.edges[key]
    adj = g.adjacency
    adj[keep].discard(absorb)
    adj[absorb].discard(keep)
    for b in adj[absorb]:
        old = g.edges.pop(edge_key(absorb, b))
        adj[b].discard(absorb)
        new_key = edge_key(keep, b)
        existing = g.edges.get(new_key)
        if existing is None:
            old.a, old.b = new_key
            g.edges[new_key] = old
            adj[keep].add(b)
            adj[b].add(keep)
        else:
            existing.face_length += old.face_length
            existing.hists = [merge_hist(x, y) for x, y in zip(existing.hists, old.hists)]
    del adj[absorb]
    del g.nodes[absorb]
    g.parent[absorb] = keep
    for b in adj[keep]:
        g.edges[edge_key(keep, b)].version = g.tick()
