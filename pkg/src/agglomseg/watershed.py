"""Marker-based watershed over a boundary probability map."""

from __future__ import annotations

import heapq

import numpy as np
from scipy import ndimage


def seed_components(prob, theta_seed):
    """Face-connected components of ``prob < theta_seed``, raster-numbered."""
    structure = ndimage.generate_binary_structure(prob.ndim, 1)
    seeds, n = ndimage.label(prob < theta_seed, structure=structure)
    return seeds.astype(np.int64), n


def watershed(prob, theta_seed=0.1):
    """Priority-flood watershed seeded at low boundary probability.

    Every voxel is labeled (no ridge lines). Unlabeled voxels are claimed in
    ascending (probability, linear index, seed label) order from whichever
    labeled neighbour reaches them first in that order.
    """
    prob = np.asarray(prob, dtype=np.float64)
    if prob.size == 0:
        raise ValueError("empty probability map")
    if not np.all(np.isfinite(prob)) or prob.min() < 0 or prob.max() > 1:
        raise ValueError("probabilities must lie in [0, 1]")
    labels, n = seed_components(prob, theta_seed)
    if n == 0:
        raise ValueError(f"no seeds: theta_seed {theta_seed} is below the minimum {prob.min()}")
    shape = prob.shape
    flat_p = prob.ravel()
    flat_l = labels.ravel()
    strides = [int(np.prod(shape[ax + 1:], dtype=np.int64)) for ax in range(len(shape))]
    idx = np.arange(flat_l.size, dtype=np.int64).reshape(shape)

    heap = []
    for ax in range(len(shape)):
        lo = [slice(None)] * len(shape)
        hi = [slice(None)] * len(shape)
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        a, b = idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()
        for src, dst in ((a, b), (b, a)):
            m = (flat_l[src] > 0) & (flat_l[dst] == 0)
            heap.extend(zip(flat_p[dst[m]].tolist(), dst[m].tolist(), flat_l[src[m]].tolist()))
    heapq.heapify(heap)

    out = flat_l.tolist()
    probs = flat_p.tolist()
    dims = list(zip(strides, shape))
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        _, q, lab = pop(heap)
        if out[q]:
            continue
        out[q] = lab
        for stride, extent in dims:
            c = (q // stride) % extent
            if c > 0:
                r = q - stride
                if not out[r]:
                    push(heap, (probs[r], r, lab))
            if c < extent - 1:
                r = q + stride
                if not out[r]:
                    push(heap, (probs[r], r, lab))
    return np.array(out, dtype=np.int64).reshape(shape)
