"""Mergeable summary statistics and edge feature vectors.

Every region and boundary carries one :class:`MomentHistogram` per
probability channel. Histograms merge in O(B) time, so a merge in the region
graph never revisits voxels.

Sums are kept as exact integers in fixed point (``2**-52`` resolution) rather
than floats. Integer addition is associative, which makes merged summaries
bit-identical to summaries accumulated from scratch in any order.
"""

from __future__ import annotations

import math

import numpy as np

N_BINS = 25
FIXED_SHIFT = 52
FIXED_ONE = 1 << FIXED_SHIFT
# order of the six per-block statistics
STAT_NAMES = ("mean", "std", "q25", "q50", "q75", "q100")
BLOCK_NAMES = ("edge", "larger", "smaller", "absdiff")
N_STATS = len(STAT_NAMES)


def _check_unit(v):
    if not (0.0 <= v <= 1.0):
        raise ValueError(f"value {v!r} outside [0, 1]")


def bin_index(values):
    """Bin index of each value; bin b covers [b/B, (b+1)/B), last bin closed."""
    values = np.asarray(values, dtype=np.float64)
    return np.minimum((values * N_BINS).astype(np.int64), N_BINS - 1)


def to_fixed(values):
    """Quantize values (float64) to fixed-point int64, round half to even."""
    return np.rint(np.asarray(values, dtype=np.float64) * FIXED_ONE).astype(np.int64)


class MomentHistogram:
    """Count, fixed-point sum and sum of squares, and a 25-bin histogram."""

    __slots__ = ("count", "sum_fx", "sumsq_fx", "bins")

    def __init__(self, count=0, sum_fx=0, sumsq_fx=0, bins=None):
        self.count = int(count)
        self.sum_fx = int(sum_fx)
        self.sumsq_fx = int(sumsq_fx)
        if bins is None:
            bins = np.zeros(N_BINS, dtype=np.int64)
        self.bins = np.asarray(bins, dtype=np.int64)

    @classmethod
    def from_values(cls, values):
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("values outside [0, 1]")
        h = cls()
        if values.size:
            h.count = int(values.size)
            h.sum_fx = sum(int(q) for q in to_fixed(values))
            h.sumsq_fx = sum(int(q) for q in to_fixed(values * values))
            h.bins = np.bincount(bin_index(values), minlength=N_BINS).astype(np.int64)
        return h

    @property
    def sum(self):
        return self.sum_fx / FIXED_ONE

    @property
    def sum_sq(self):
        return self.sumsq_fx / FIXED_ONE

    @property
    def mean(self):
        if self.count == 0:
            raise ValueError("empty histogram")
        return self.sum_fx / (self.count * FIXED_ONE)

    @property
    def std(self):
        """Population standard deviation (0 for a single sample)."""
        if self.count == 0:
            raise ValueError("empty histogram")
        n = self.count
        # exact integer numerator; squares were quantized separately, so clamp
        num = n * self.sumsq_fx * FIXED_ONE - self.sum_fx * self.sum_fx
        if num <= 0:
            return 0.0
        return math.sqrt(num / (n * n * FIXED_ONE * FIXED_ONE))

    def copy(self):
        return MomentHistogram(self.count, self.sum_fx, self.sumsq_fx, self.bins.copy())

    def __eq__(self, other):
        if not isinstance(other, MomentHistogram):
            return NotImplemented
        return (self.count == other.count and self.sum_fx == other.sum_fx
                and self.sumsq_fx == other.sumsq_fx
                and np.array_equal(self.bins, other.bins))

    __hash__ = None

    def __repr__(self):
        if self.count:
            return f"MomentHistogram(count={self.count}, mean={self.mean:.4f})"
        return "MomentHistogram(count=0)"


def accumulate(h, v):
    """Add one sample ``v`` in [0, 1] to ``h`` in place."""
    v = float(v)
    _check_unit(v)
    h.count += 1
    h.sum_fx += round(v * FIXED_ONE)
    h.sumsq_fx += round(v * v * FIXED_ONE)
    h.bins[min(int(v * N_BINS), N_BINS - 1)] += 1


def merge_hist(a, b):
    """Fieldwise sum of two histograms; cost independent of sample counts."""
    if a.bins.shape != b.bins.shape:
        raise ValueError("histograms have different bin layouts")
    return MomentHistogram(a.count + b.count, a.sum_fx + b.sum_fx,
                           a.sumsq_fx + b.sumsq_fx, a.bins + b.bins)


def merge_into(a, b):
    """In-place ``a += b``."""
    if a.bins.shape != b.bins.shape:
        raise ValueError("histograms have different bin layouts")
    a.count += b.count
    a.sum_fx += b.sum_fx
    a.sumsq_fx += b.sumsq_fx
    a.bins += b.bins


def quartile(h, q):
    """Quantile estimate for q in {25, 50, 75, 100}.

    Interpolates linearly within the bin holding rank ``q/100 * count``;
    q=100 gives the upper edge of the highest occupied bin. The estimate lies
    in the same bin as the exact (inverted-CDF) order statistic, so the error
    is below one bin width.
    """
    if q not in (25, 50, 75, 100):
        raise ValueError(f"unsupported quartile {q!r}")
    if h.count == 0:
        raise ValueError("empty histogram")
    if q == 100:
        top = int(np.flatnonzero(h.bins)[-1])
        return (top + 1) / N_BINS
    cum = np.cumsum(h.bins)
    target = q / 100.0 * h.count
    b = int(np.searchsorted(cum, target, side="left"))
    below = cum[b] - h.bins[b]
    return (b + (target - below) / h.bins[b]) / N_BINS


def hist_stats(h):
    """[mean, std, q25, q50, q75, q100] of one histogram as float64 array."""
    if h.count == 0:
        raise ValueError("empty histogram")
    bins = h.bins
    cum = np.cumsum(bins)
    targets = np.array([0.25, 0.5, 0.75]) * h.count
    b = np.searchsorted(cum, targets, side="left")
    below = cum[b] - bins[b]
    qs = (b + (targets - below) / bins[b]) / N_BINS
    top = np.flatnonzero(bins)[-1]
    out = np.empty(N_STATS)
    out[0] = h.mean
    out[1] = h.std
    out[2:5] = qs
    out[5] = (top + 1) / N_BINS
    return out


def feature_length(n_channels):
    return len(BLOCK_NAMES) * N_STATS * n_channels


def feature_names(channels):
    return [f"{ch}.{block}.{stat}" for ch in channels
            for block in BLOCK_NAMES for stat in STAT_NAMES]


def _ordered_pair(g, edge):
    a, b = g.nodes[edge.a], g.nodes[edge.b]
    # larger voxel count first; ties go to the lower id
    if (b.voxel_count, -b.id) > (a.voxel_count, -a.id):
        a, b = b, a
    return a, b


def edge_features(g, edge):
    """Feature vector of a live edge.

    Per channel: edge block, larger-region block, smaller-region block and
    elementwise |larger - smaller|, six statistics each.
    """
    if edge.hists and edge.hists[0].count == 0:
        raise ValueError("empty edge histogram")
    big, small = _ordered_pair(g, edge)
    e_stats = g.edge_stats(edge)
    b_stats = g.node_stats(big)
    s_stats = g.node_stats(small)
    n_ch = len(edge.hists)
    blocks = np.empty((n_ch, 4, N_STATS))
    blocks[:, 0] = e_stats
    blocks[:, 1] = b_stats
    blocks[:, 2] = s_stats
    blocks[:, 3] = np.abs(b_stats - s_stats)
    return blocks.ravel()
