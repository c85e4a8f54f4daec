"""Two-phase context-aware agglomeration.

Regions are split into cytoplasm and mitochondria candidates by their mean
mitochondria probability. Phase 1 agglomerates cytoplasm-cytoplasm edges with
the learned boundary predictor. Phase 2 absorbs mitochondria into cytoplasm,
scoring each mito-cyto edge by how much of the mitochondrion's boundary it
covers: ``h_m = 1 - rho`` with ``rho = face / total face of the mito region``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .agglomerate import AgglomConfig, DELAYED, MergeTrace, agglomerate
from .predictor import forest_confidence, mean_boundary_confidence
from .rag import CYTO, MITO, build_rag

MITO_CHANNEL = "mitochondria"


@dataclass
class ContextConfig:
    theta_mito: float = 0.5
    delta_c: float = 0.2
    delta_m: float = 0.8
    policy: str = DELAYED
    lazy_updates: bool = False
    context: bool = True

    def __post_init__(self):
        for name in ("theta_mito", "delta_c", "delta_m"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def partition_superpixels(g, theta_mito, channel=MITO_CHANNEL):
    """Tag regions Mito when their mean mito probability is >= ``theta_mito``."""
    try:
        idx = g.channels.index(channel)
    except ValueError:
        raise ValueError(f"graph has no {channel!r} channel") from None
    for node in g.nodes.values():
        node.type_tag = MITO if node.hists[idx].mean >= theta_mito else CYTO


def _mito_end(g, e):
    ta, tb = g.nodes[e.a].type_tag, g.nodes[e.b].type_tag
    if ta == MITO and tb == CYTO:
        return e.a
    if tb == MITO and ta == CYTO:
        return e.b
    raise ValueError(f"edge {e.key} is not a mito-cytoplasm edge ({ta}, {tb})")


def overlap_ratio(g, e):
    """Fraction of the mito region's total boundary shared with the cyto side."""
    m = _mito_end(g, e)
    total = g.total_face_length(m)
    if total == 0:
        raise ValueError(f"region {m} has no boundary")
    return e.face_length / total


def mito_confidence(g, e):
    return 1.0 - overlap_ratio(g, e)


def is_cyto_pair(g, e):
    return g.nodes[e.a].type_tag == CYTO and g.nodes[e.b].type_tag == CYTO


def is_mito_cyto(g, e):
    return (g.nodes[e.a].type_tag == MITO) != (g.nodes[e.b].type_tag == MITO)


def agglomerate_mito(g, delta_m, *, lazy_updates=False, on_pop=None, on_merge=None):
    """Absorb mitochondria into cytoplasm in descending overlap ratio.

    Only mito-cyto edges are candidates. The merged region is cytoplasm, so a
    mitochondrion reachable only through another one becomes a candidate once
    that one has been absorbed.
    """
    cfg = AgglomConfig(delta=delta_m, policy=DELAYED, lazy_updates=lazy_updates)
    return agglomerate(g, mito_confidence, cfg, eligible=is_mito_cyto,
                       on_pop=on_pop, on_merge=on_merge)


@dataclass
class PipelineResult:
    labels: object
    cyto_trace: MergeTrace
    mito_trace: MergeTrace
    graph: object


def run_context_pipeline(labels, probs, forest, cfg=None, *, estimator=None):
    """Build the graph, partition, then run both agglomeration phases.

    ``forest`` may be None when ``estimator="mean"`` (mean boundary
    probability) is used instead of the learned predictor. With
    ``cfg.context`` off the partition is skipped and a single phase runs over
    all edges.
    """
    cfg = cfg or ContextConfig()
    g = build_rag(labels, probs)
    return run_context_on_graph(g, labels, forest, cfg, estimator=estimator)


def run_context_on_graph(g, labels, forest, cfg, *, estimator=None):
    if estimator == "mean":
        h = mean_boundary_confidence
    elif forest is None:
        raise ValueError("a forest is required unless estimator='mean'")
    else:
        h = forest_confidence(forest)
    if cfg.context:
        partition_superpixels(g, cfg.theta_mito)
        eligible = is_cyto_pair
    else:
        eligible = None
    phase1 = AgglomConfig(delta=cfg.delta_c, policy=cfg.policy, lazy_updates=cfg.lazy_updates)
    cyto_trace = agglomerate(g, h, phase1, eligible=eligible)
    if cfg.context:
        mito_trace = agglomerate_mito(g, cfg.delta_m, lazy_updates=cfg.lazy_updates)
    else:
        mito_trace = MergeTrace()
    return PipelineResult(g.relabel(labels), cyto_trace, mito_trace, g)
