"""Split variation of information and split Rand error.

Both metrics are computed from a contingency table of voxel overlaps between
a ground truth and a segmentation. Over-segmentation terms are non-zero
exactly when a ground-truth region is fragmented; under-segmentation terms
when a segment spans several ground-truth regions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass
class ContingencyTable:
    """Sparse joint counts |g_i ∩ r_j| with marginals."""

    counts: dict
    gt_sizes: dict
    seg_sizes: dict
    total: int

    def transpose(self):
        return ContingencyTable({(s, g): n for (g, s), n in self.counts.items()},
                                dict(self.seg_sizes), dict(self.gt_sizes), self.total)


def contingency(seg, gt, exclude_zero=True):
    """Overlap counts between ``gt`` (rows) and ``seg`` (columns).

    With ``exclude_zero`` voxels labeled 0 in either volume are dropped.
    """
    seg = np.asarray(seg)
    gt = np.asarray(gt)
    if seg.shape != gt.shape:
        raise ValueError(f"shape mismatch: seg {seg.shape} vs gt {gt.shape}")
    s = seg.ravel().astype(np.int64)
    g = gt.ravel().astype(np.int64)
    if exclude_zero:
        keep = (s != 0) & (g != 0)
        s, g = s[keep], g[keep]
    pairs = np.stack([g, s], axis=1)
    if pairs.size == 0:
        return ContingencyTable({}, {}, {}, 0)
    uniq, n = np.unique(pairs, axis=0, return_counts=True)
    counts = {(int(a), int(b)): int(c) for (a, b), c in zip(uniq, n)}
    gids, gn = np.unique(g, return_counts=True)
    sids, sn = np.unique(s, return_counts=True)
    return ContingencyTable(counts,
                            dict(zip(gids.tolist(), gn.tolist())),
                            dict(zip(sids.tolist(), sn.tolist())),
                            int(g.size))


def split_vi(table):
    """(VI_UE, VI_OE) in bits.

    VI_OE = -sum n_ij/Z log2(n_ij / |g_i|) and
    VI_UE = -sum n_ij/Z log2(n_ij / |r_j|).
    """
    if table.total <= 0:
        raise ValueError("empty contingency table")
    z = table.total
    items = [(gi, rj, n) for (gi, rj), n in table.counts.items() if n > 0]
    # fsum keeps the result independent of table ordering
    oe = -math.fsum(n / z * math.log2(n / table.gt_sizes[gi]) for gi, _, n in items)
    ue = -math.fsum(n / z * math.log2(n / table.seg_sizes[rj]) for _, rj, n in items)
    return ue + 0.0, oe + 0.0


@dataclass
class SplitRandError:
    """Pair-count rand errors as fractions of all unordered voxel pairs."""

    ue: float
    oe: float

    @property
    def ue_percent(self):
        return self.ue * 100.0

    @property
    def oe_percent(self):
        return self.oe * 100.0

    @property
    def ue_scaled(self):
        """Percentage in units of 1e-5, as plotted on the usual axes."""
        return self.ue_percent * 1e5

    @property
    def oe_scaled(self):
        return self.oe_percent * 1e5

    def __iter__(self):
        yield self.ue
        yield self.oe


def _pairs(n):
    return n * (n - 1) // 2


def split_re(table):
    """Split Rand error in closed form from the table's pair counts."""
    z = table.total
    if z < 2:
        raise ValueError("need at least two voxels")
    both = sum(_pairs(n) for n in table.counts.values())
    same_gt = sum(_pairs(n) for n in table.gt_sizes.values())
    same_seg = sum(_pairs(n) for n in table.seg_sizes.values())
    total = _pairs(z)
    return SplitRandError(ue=(same_seg - both) / total, oe=(same_gt - both) / total)


def evaluate(seg, gt, exclude_zero=True):
    """All four split metrics as a dict."""
    t = contingency(seg, gt, exclude_zero)
    vi_ue, vi_oe = split_vi(t)
    re = split_re(t)
    return {"VI_UE": vi_ue, "VI_OE": vi_oe, "RE_UE": re.ue, "RE_OE": re.oe}


METRIC_COLUMNS = ["delta", "VI_UE", "VI_OE", "RE_UE", "RE_OE"]


def write_metrics_csv(rows, path):
    """Write metric dicts (with an optional ``delta`` key) as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else repr(float(row[k])))
                        for k in METRIC_COLUMNS})
