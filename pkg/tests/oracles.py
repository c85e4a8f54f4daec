"""Independent slow reference implementations used as test oracles."""

import hashlib
import itertools
import struct

import numpy as np

from agglomseg.rag import edge_key, merge_regions


def hashed_confidence(g, e, salt=0):
    """Deterministic pseudo-random confidence of an edge's current state.

    Acts as a lazily tabulated h: the value depends on the endpoint ids,
    their voxel counts and the face length, so every merge that touches an
    edge draws a fresh value.
    """
    na, nb = g.nodes[e.a], g.nodes[e.b]
    payload = struct.pack("<6q", salt, e.a, e.b, na.voxel_count, nb.voxel_count, e.face_length)
    d = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(d, "little") / 2.0**64


def table_confidence(table, default=0.9):
    """h looked up by (lo, hi, count_lo, count_hi)."""
    def h(g, e):
        key = (e.a, e.b, g.nodes[e.a].voxel_count, g.nodes[e.b].voxel_count)
        return table.get(key, default)
    return h


def reference_standard(g, h, delta):
    """Step-by-step interpreter of the standard algorithm: full rescans."""
    steps = []
    while g.edges:
        conf = {k: h(g, e) for k, e in g.edges.items()}
        k = min(conf, key=lambda k: (conf[k], k))
        if conf[k] > delta:
            break
        merge_regions(g, *k)
        steps.append((len(steps), k[0], k[1], conf[k], 1))
    return steps


def reference_delayed(g, h, delta, eligible=None):
    """Literal interpreter of delayed agglomeration with full scans per step.

    W is the set of ACTIVE edges; a step merges min over W if it is <= delta,
    otherwise DELAY edges within range are reactivated (new sweep) or the
    run ends.
    """
    def ok(e):
        return eligible is None or eligible(g, e)

    conf = {}
    flag = {}
    for k, e in g.edges.items():
        if ok(e):
            conf[k] = h(g, e)
            flag[k] = "ACTIVE"
    steps = []
    sweep = 1
    while True:
        w = [k for k in flag if flag[k] == "ACTIVE" and conf[k] <= delta]
        if not w:
            back = [k for k in flag if flag[k] == "DELAY" and conf[k] <= delta]
            if not back:
                break
            for k in back:
                flag[k] = "ACTIVE"
            sweep += 1
            continue
        k = min(w, key=lambda k: (conf[k], k))
        i, j = k
        prior_i = {b: conf.get(edge_key(i, b)) for b in g.adjacency[i] if b != j}
        prior_j = {b: conf.get(edge_key(j, b)) for b in g.adjacency[j] if b != i}
        for b in prior_i:
            conf.pop(edge_key(i, b), None)
            flag.pop(edge_key(i, b), None)
        for b in prior_j:
            conf.pop(edge_key(j, b), None)
            flag.pop(edge_key(j, b), None)
        c = conf.pop(k)
        flag.pop(k)
        merge_regions(g, i, j)
        steps.append((len(steps), i, j, c, sweep))
        for b in g.adjacency[i]:
            kk = edge_key(i, b)
            if not ok(g.edges[kk]):
                continue
            conf[kk] = h(g, g.edges[kk])
            priors = [p for p in (prior_i.get(b), prior_j.get(b)) if p is not None]
            flag[kk] = "ACTIVE" if priors and conf[kk] > min(priors) else "DELAY"
    return steps


def brute_adjacency(labels):
    """{(lo, hi): face count} by visiting every face-adjacent voxel pair."""
    labels = np.asarray(labels)
    faces = {}
    for idx in itertools.product(*[range(s) for s in labels.shape]):
        for ax in range(labels.ndim):
            nb = list(idx)
            nb[ax] += 1
            if nb[ax] >= labels.shape[ax]:
                continue
            a, b = int(labels[idx]), int(labels[tuple(nb)])
            if a != b:
                k = (min(a, b), max(a, b))
                faces[k] = faces.get(k, 0) + 1
    return faces


def brute_edge_samples(labels, values):
    """{(lo, hi): list of both-voxel samples of every cross pair}."""
    labels = np.asarray(labels)
    out = {}
    for idx in itertools.product(*[range(s) for s in labels.shape]):
        for ax in range(labels.ndim):
            nb = list(idx)
            nb[ax] += 1
            if nb[ax] >= labels.shape[ax]:
                continue
            nb = tuple(nb)
            a, b = int(labels[idx]), int(labels[nb])
            if a != b:
                k = (min(a, b), max(a, b))
                out.setdefault(k, []).extend([float(values[idx]), float(values[nb])])
    return out


def reference_flood(prob, theta_seed):
    """Priority flood by explicit frontier scans (quadratic, tiny inputs only).

    Seeds are 4/6-connected components of prob < theta_seed numbered in
    raster order of their first voxel. At every step the frontier candidate
    with the smallest (probability, linear index, seed label) is assigned.
    """
    prob = np.asarray(prob, dtype=np.float64)
    shape = prob.shape
    flat = prob.ravel()
    n = flat.size
    labels = np.zeros(n, dtype=np.int64)
    coords = list(itertools.product(*[range(s) for s in shape]))

    def nbrs(i):
        c = coords[i]
        for ax in range(len(shape)):
            for d in (-1, 1):
                x = list(c)
                x[ax] += d
                if 0 <= x[ax] < shape[ax]:
                    yield int(np.ravel_multi_index(tuple(x), shape))

    nxt = 0
    for i in range(n):
        if flat[i] < theta_seed and labels[i] == 0:
            nxt += 1
            stack = [i]
            labels[i] = nxt
            while stack:
                j = stack.pop()
                for k in nbrs(j):
                    if labels[k] == 0 and flat[k] < theta_seed:
                        labels[k] = nxt
                        stack.append(k)
    if nxt == 0:
        raise ValueError("no seeds")
    while (labels == 0).any():
        best = None
        for i in range(n):
            if labels[i] != 0:
                continue
            for k in nbrs(i):
                if labels[k] != 0:
                    cand = (flat[i], i, labels[k])
                    if best is None or cand < best:
                        best = cand
        labels[best[1]] = best[2]
    return labels.reshape(shape)


def pair_enumeration_re(seg, gt):
    """(RE_UE, RE_OE) by enumerating every unordered voxel pair."""
    s = np.asarray(seg).ravel()
    g = np.asarray(gt).ravel()
    n = s.size
    total = ue = oe = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += 1
            same_s = s[i] == s[j]
            same_g = g[i] == g[j]
            if same_g and not same_s:
                oe += 1
            if same_s and not same_g:
                ue += 1
    return ue / total, oe / total


def gini_stump(x, y):
    """Best single threshold on 1-D data by exhaustive Gini search."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    best = (np.inf, None)
    for i in range(1, len(xs)):
        if xs[i] == xs[i - 1]:
            continue
        left, right = ys[:i], ys[i:]
        cost = sum(len(part) * (1 - (part.mean() ** 2 + (1 - part.mean()) ** 2))
                   for part in (left, right)) / len(ys)
        if cost < best[0]:
            best = (cost, (xs[i] + xs[i - 1]) / 2)
    return best[1]


def auc(scores, labels):
    """ROC AUC by an exhaustive sweep over all thresholds."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        wins += np.sum(p > neg) + 0.5 * np.sum(p == neg)
    return wins / (len(pos) * len(neg))



def graph_signature(g):
    """Everything observable about a graph except version stamps."""
    nodes = {nid: (n.voxel_count, n.type_tag, tuple(n.hists)) for nid, n in g.nodes.items()}
    edges = {k: (e.face_length, tuple(e.hists)) for k, e in g.edges.items()}
    adj = {k: frozenset(v) for k, v in g.adjacency.items()}
    return nodes, edges, adj


def random_regions(rng, shape, n_regions):
    """Label volume of nearest-site regions with ids 1..n (some may vanish)."""
    sites = rng.random((n_regions, len(shape))) * np.array(shape)
    grid = np.indices(shape).reshape(len(shape), -1).T + 0.5
    d = ((grid[:, None, :] - sites[None, :, :]) ** 2).sum(-1)
    lab = d.argmin(1) + 1
    # renumber to consecutive ids
    _, lab = np.unique(lab, return_inverse=True)
    return (lab + 1).reshape(shape).astype(np.int64)
