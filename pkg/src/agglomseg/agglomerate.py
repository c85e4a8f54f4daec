"""Agglomerative clustering engines over a :class:`RegionGraph`.

Two policies are provided:

``standard``
    Repeatedly merge the edge of lowest confidence until the minimum exceeds
    ``delta``. After every merge the confidences of all edges incident to the
    merged region are recomputed and re-queued.

``delayed``
    Same ascending order, but after a merge an incident edge stays in the
    active set only if its recomputed confidence strictly exceeds the prior
    confidence of the face(s) it replaces. All other incident edges are set
    aside (DELAY) until the active set has no candidate at or below
    ``delta``; then every delayed edge with confidence <= ``delta`` is
    reactivated and a new sweep starts.

The delayed engine has an optional lazy mode: instead of recomputing and
re-queueing incident edges at merge time, the edge keeps the queue entry of
the face it replaces (whose key is a lower bound of the new confidence when
the edge stays active) and is only evaluated when that entry surfaces, when
the edge is about to be merged over, or at the end of a sweep. Merge traces
are identical to the eager mode; only the counters differ.

A confidence function ``h(g, edge) -> float`` must return a finite value in
[0, 1] that depends only on the edge and its two endpoint regions.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

from .rag import ACTIVE, DELAY, edge_key, merge_regions

STANDARD = "standard"
DELAYED = "delayed"


@dataclass
class AgglomConfig:
    delta: float = 0.2
    policy: str = DELAYED
    lazy_updates: bool = False
    tie_break: str = "lowest-edge-id"

    def __post_init__(self):
        if not (0.0 <= self.delta <= 1.0):
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        if self.policy not in (STANDARD, DELAYED):
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.tie_break != "lowest-edge-id":
            raise ValueError(f"unsupported tie break {self.tie_break!r}")


class MergeStep(NamedTuple):
    step: int
    kept: int
    absorbed: int
    confidence: float
    sweep: int


TRACE_COLUMNS = ("step", "kept", "absorbed", "confidence", "sweep")


@dataclass
class MergeTrace:
    steps: list = field(default_factory=list)
    pushes: int = 0
    pops: int = 0
    recomputations: int = 0
    sweeps: int = 1

    def record(self, kept, absorbed, confidence, sweep):
        self.steps.append(MergeStep(len(self.steps), kept, absorbed, confidence, sweep))

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    @property
    def merges(self):
        return [(s.kept, s.absorbed) for s in self.steps]

    def counters(self):
        return {"merges": len(self.steps), "pushes": self.pushes, "pops": self.pops,
                "recomputations": self.recomputations, "sweeps": self.sweeps}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for s in self.steps:
                w.writerow([s.step, s.kept, s.absorbed, repr(float(s.confidence)), s.sweep])

    def write_counters(self, path):
        with open(path, "w") as fh:
            json.dump(self.counters(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_trace_csv(path):
    trace = MergeTrace()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            trace.steps.append(MergeStep(int(row["step"]), int(row["kept"]),
                                         int(row["absorbed"]), float(row["confidence"]),
                                         int(row["sweep"])))
    return trace


class _Scorer:
    """Evaluates ``h`` with per-version caching on the edge objects."""

    def __init__(self, g, h, trace):
        self.g = g
        self.h = h
        self.trace = trace
        # caches from earlier runs may belong to a different h
        for e in g.edges.values():
            e.cache_version = -1

    def __call__(self, e):
        if e.cache_version == e.version:
            return e.cached_confidence
        c = self.h(self.g, e)
        try:
            c = float(c)
        except (TypeError, ValueError):
            raise ValueError(f"confidence for {e.key} is not a number: {c!r}") from None
        if not math.isfinite(c):
            raise ValueError(f"non-finite confidence {c} for edge {e.key}")
        if not (0.0 <= c <= 1.0):
            raise ValueError(f"confidence {c} for edge {e.key} outside [0, 1]")
        self.trace.recomputations += 1
        e.cached_confidence = c
        e.cache_version = e.version
        return c


def agglomerate_standard(g, h, cfg=None, *, eligible=None, on_pop=None, on_merge=None):
    """Plain ascending-confidence agglomeration; mutates ``g``."""
    cfg = cfg or AgglomConfig(policy=STANDARD)
    delta = cfg.delta
    trace = MergeTrace()
    score = _Scorer(g, h, trace)
    heap = [(score(e), key[0], key[1], e.version) for key, e in g.edges.items()
            if eligible is None or eligible(g, e)]
    heapq.heapify(heap)
    trace.pushes += len(heap)
    edges = g.edges
    while heap:
        c, a, b, ver = heapq.heappop(heap)
        trace.pops += 1
        e = edges.get((a, b))
        if e is None or e.version != ver:
            continue
        if on_pop is not None:
            on_pop(g, e, c)
        if c > delta:
            break
        merge_regions(g, a, b)
        trace.record(a, b, c, 1)
        if on_merge is not None:
            on_merge(g, a, b)
        for nb in sorted(g.adjacency[a]):
            e2 = edges[edge_key(a, nb)]
            if eligible is None or eligible(g, e2):
                heapq.heappush(heap, (score(e2), e2.a, e2.b, e2.version))
                trace.pushes += 1
    return trace


class _DelayedRun:
    def __init__(self, g, h, cfg, eligible, on_pop, on_merge):
        self.g = g
        self.delta = cfg.delta
        self.lazy = cfg.lazy_updates
        self.eligible = eligible
        self.on_pop = on_pop
        self.on_merge = on_merge
        self.trace = MergeTrace()
        self.score = _Scorer(g, h, self.trace)
        self.heap = []
        self.entry = {}      # edge key -> live token
        self.tok_key = {}    # live token -> edge key
        self.n_tokens = 0
        self.delayed = set()
        self.pending = {}    # lazy: edge key -> baseline confidence

    def is_eligible(self, e):
        return self.eligible is None or self.eligible(self.g, e)

    def push(self, c, key):
        tok = self.n_tokens
        self.n_tokens += 1
        heapq.heappush(self.heap, (c, key[0], key[1], tok))
        self.entry[key] = tok
        self.tok_key[tok] = key
        self.trace.pushes += 1

    def drop_entry(self, key):
        tok = self.entry.pop(key, None)
        if tok is not None:
            del self.tok_key[tok]
        return tok

    def attach(self, tok, key):
        self.entry[key] = tok
        self.tok_key[tok] = key

    def peek(self):
        heap = self.heap
        while heap and heap[0][3] not in self.tok_key:
            heapq.heappop(heap)
            self.trace.pops += 1
        return heap[0] if heap else None

    def resolve(self, key):
        """Decide the flag of a pending edge; returns its confidence."""
        base = self.pending.pop(key)
        e = self.g.edges[key]
        c = self.score(e)
        if c > base:
            e.flag = ACTIVE
        else:
            e.flag = DELAY
            self.delayed.add(key)
            self.drop_entry(key)
        return c

    def pop_candidate(self):
        """Lowest-confidence ACTIVE edge as (confidence, edge), or None."""
        edges = self.g.edges
        while True:
            top = self.peek()
            if top is None:
                return None
            k, lo, hi, tok = heapq.heappop(self.heap)
            self.trace.pops += 1
            key = self.tok_key.pop(tok)
            del self.entry[key]
            e = edges[key]
            if key in self.pending:
                self.resolve(key)
                if e.flag == DELAY:
                    continue
            c = self.score(e)
            if c > k:
                # entry key was only a lower bound
                nxt = self.peek()
                if nxt is not None and (c, key[0], key[1]) > nxt[:3]:
                    self.push(c, key)
                    continue
            return c, e

    def flag_after_merge(self, key, priors):
        e = self.g.edges[key]
        if not self.is_eligible(e):
            return
        known = [(p, tok) for p, tok in priors if p is not None]
        base = min(p for p, _ in known) if known else None
        if self.lazy and base is not None:
            for p, tok in known:
                if p == base and tok is not None:
                    self.attach(tok, key)
                    self.pending[key] = base
                    return
        c = self.score(e)
        if base is not None and c > base:
            e.flag = ACTIVE
            self.push(c, key)
        else:
            # no increase, or a face with no comparable predecessor
            e.flag = DELAY
            self.delayed.add(key)

    def merge(self, c, e, sweep):
        g = self.g
        keep, absorb = e.a, e.b
        adj = g.adjacency
        nbrs_k = adj[keep] - {absorb}
        nbrs_a = adj[absorb] - {keep}
        if self.lazy:
            for nb in sorted(nbrs_k):
                if edge_key(keep, nb) in self.pending:
                    self.resolve(edge_key(keep, nb))
            for nb in sorted(nbrs_a):
                if edge_key(absorb, nb) in self.pending:
                    self.resolve(edge_key(absorb, nb))

        def side(node, nb):
            key = edge_key(node, nb)
            ed = g.edges[key]
            prior = self.score(ed) if self.is_eligible(ed) else None
            tok = self.drop_entry(key)
            self.delayed.discard(key)
            return prior, tok

        sides_k = {nb: side(keep, nb) for nb in nbrs_k}
        sides_a = {nb: side(absorb, nb) for nb in nbrs_a}
        self.drop_entry(e.key)
        self.delayed.discard(e.key)

        merge_regions(g, keep, absorb)
        self.trace.record(keep, absorb, c, sweep)
        if self.on_merge is not None:
            self.on_merge(g, keep, absorb)

        for nb in sorted(adj[keep]):
            priors = [sides_k.get(nb, (None, None)), sides_a.get(nb, (None, None))]
            self.flag_after_merge(edge_key(keep, nb), priors)

    def end_sweep(self):
        for key in sorted(self.pending):
            self.resolve(key)
        self.heap.clear()
        self.entry.clear()
        self.tok_key.clear()

    def run(self):
        g = self.g
        for key, e in g.edges.items():
            if self.is_eligible(e):
                e.flag = ACTIVE
                self.push(self.score(e), key)
        sweep = 1
        while True:
            cand = self.pop_candidate()
            if cand is not None:
                c, e = cand
                if self.on_pop is not None:
                    self.on_pop(g, e, c)
                if c <= self.delta:
                    self.merge(c, e, sweep)
                    continue
            self.end_sweep()
            react = sorted(k for k in self.delayed
                           if self.score(g.edges[k]) <= self.delta)
            if not react:
                break
            sweep += 1
            for key in react:
                self.delayed.discard(key)
                g.edges[key].flag = ACTIVE
                self.push(self.score(g.edges[key]), key)
        self.trace.sweeps = sweep
        return self.trace


def agglomerate_delayed(g, h, cfg=None, *, eligible=None, on_pop=None, on_merge=None):
    """Delayed agglomeration; mutates ``g`` and returns the merge trace.

    ``eligible(g, edge)`` restricts the candidate set; ineligible edges are
    never flagged, compared or merged.
    """
    cfg = cfg or AgglomConfig(policy=DELAYED)
    return _DelayedRun(g, h, cfg, eligible, on_pop, on_merge).run()


def agglomerate(g, h, cfg, **kwargs):
    if cfg.policy == STANDARD:
        return agglomerate_standard(g, h, cfg, **kwargs)
    return agglomerate_delayed(g, h, cfg, **kwargs)
