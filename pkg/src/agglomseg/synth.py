"""Deterministic synthetic EM-like volumes with planted mitochondria.

Cells are a nearest-site partition of uniform random sites. Each cell holds a
random number of elliptical mitochondria that sit strictly inside it. The
four probability channels imitate the output of a pixel classifier:

- boundary: blurred cell-membrane indicator (each membrane gets its own
  contrast) plus a faint halo around mitochondria, plus noise
- mitochondria: blurred blob indicator plus noise
- mito_boundary: blurred blob-perimeter indicator
- cytoplasm: ``clip(1 - (boundary + mitochondria))``

Randomness comes from numpy's PCG64 generator seeded with ``seed``; the
stream is platform independent, so outputs are byte-identical everywhere.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .rag import DEFAULT_CHANNELS, ProbabilityStack

MAX_PLACEMENT_TRIES = 30
SHRINK = 0.8


@dataclass
class SynthParams:
    dims: tuple = (256, 256)
    n_cells: int = 24
    mito_per_cell: tuple = (2, 4)
    mito_radius: tuple = (5.0, 9.0)
    boundary_blur_sigma: float = 1.0
    noise_sigma: float = 0.12
    seed: int = 0
    # spatial correlation length of the noise field (voxels, 0 = white)
    noise_correlation: float = 4.0
    # per-membrane contrast drawn uniformly from this range
    membrane_strength: tuple = (0.4, 1.0)
    # relative strength of the mitochondrion outline in the boundary channel
    mito_boundary_leak: float = 0.8
    # baseline boundary probability in cytoplasm; near the watershed seed
    # threshold it fragments cells into several superpixels
    background: float = 0.15
    # amplitude of stripe texture inside mitochondria (membrane-like cristae)
    cristae: float = 1.0
    cristae_period: float = 5.0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.mito_per_cell = tuple(int(v) for v in self.mito_per_cell)
        self.mito_radius = tuple(float(v) for v in self.mito_radius)
        self.membrane_strength = tuple(float(v) for v in self.membrane_strength)
        if not 1 <= len(self.dims) <= 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be 1 to 3 positive extents, got {self.dims}")
        if self.cristae_period <= 0:
            raise ValueError("cristae_period must be positive")
        if self.n_cells < 1:
            raise ValueError("n_cells must be positive")
        lo, hi = self.mito_per_cell
        if lo < 0 or hi < lo:
            raise ValueError(f"bad mito_per_cell range {self.mito_per_cell}")
        rlo, rhi = self.mito_radius
        if rlo <= 0 or rhi < rlo:
            raise ValueError(f"bad mito_radius range {self.mito_radius}")
        slo, shi = self.membrane_strength
        if not 0 < slo <= shi <= 1:
            raise ValueError(f"bad membrane_strength range {self.membrane_strength}")
        for name in ("boundary_blur_sigma", "noise_sigma", "noise_correlation", "mito_boundary_leak",
                     "background", "cristae"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth parameters: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class SynthVolume:
    cells: np.ndarray  # uint32 cell ids 1..n
    mito: np.ndarray  # uint32 blob ids, 0 outside mitochondria
    probs: ProbabilityStack
    blob_cell: dict = field(default_factory=dict)  # blob id -> enclosing cell id

    @property
    def mito_mask(self):
        return self.mito > 0

    def __iter__(self):
        return iter((self.cells, self.mito, self.probs))


def voronoi_cells(dims, sites):
    grid = np.indices(dims, dtype=np.float64).reshape(len(dims), -1).T + 0.5
    _, nearest = cKDTree(sites).query(grid)
    return (nearest + 1).astype(np.uint32).reshape(dims)


def boundary_pairs(labels):
    """Yield (lo, hi) index tuples pairing each voxel with its next face neighbour."""
    for ax in range(labels.ndim):
        lo = [slice(None)] * labels.ndim
        hi = [slice(None)] * labels.ndim
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        yield tuple(lo), tuple(hi)


def membrane_map(cells, strength):
    """Per-voxel membrane contrast: max strength of any differing face pair."""
    out = np.zeros(cells.shape, dtype=np.float64)
    for lo, hi in boundary_pairs(cells):
        a, b = cells[lo].astype(np.int64), cells[hi].astype(np.int64)
        diff = a != b
        s = np.zeros(a.shape)
        s[diff] = strength[a[diff] - 1, b[diff] - 1]
        np.maximum(out[lo], s, out=out[lo])
        np.maximum(out[hi], s, out=out[hi])
    return out


def perimeter(mask):
    """Voxels of ``mask`` with a face neighbour outside it (image edge excluded)."""
    eroded = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(mask.ndim, 1),
                                    border_value=1)
    return mask & ~eroded


def random_rotation(rng, ndim):
    q, r = np.linalg.qr(rng.standard_normal((ndim, ndim)))
    return q * np.sign(np.diag(r))


def ellipsoid(dims, center, radii, rot):
    """Boolean mask of a rotated ellipse/ellipsoid, computed in its bounding box."""
    r = int(np.ceil(radii.max()))
    lo = np.maximum(np.floor(center).astype(int) - r, 0)
    hi = np.minimum(np.floor(center).astype(int) + r + 1, dims)
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    local = np.indices(hi - lo, dtype=np.float64).reshape(len(dims), -1).T + lo - center
    inside = np.sum((local @ rot / radii) ** 2, axis=1) <= 1.0
    out = np.zeros(dims, dtype=bool)
    out[box] = inside.reshape(hi - lo)
    return out


def place_blobs(rng, cells, p):
    """Plant elliptical blobs strictly inside their cells.

    A blob must keep one voxel of clearance from its cell's membrane voxels
    and from other blobs. Failed placements are retried; after
    ``MAX_PLACEMENT_TRIES`` failures the radii shrink and placement restarts,
    and a blob whose radii fall below one voxel is dropped.
    """
    ndim = cells.ndim
    mito = np.zeros(cells.shape, dtype=np.uint32)
    blob_cell = {}
    membrane = membrane_map(cells, np.ones((p.n_cells, p.n_cells))) > 0
    lo, hi = p.mito_per_cell
    counts = rng.integers(lo, hi + 1, size=p.n_cells)
    next_id = 1
    for cell in range(1, p.n_cells + 1):
        inside = cells == cell
        if not inside.any():
            continue
        for _ in range(int(counts[cell - 1])):
            radii = rng.uniform(p.mito_radius[0], p.mito_radius[1], size=ndim)
            rot = random_rotation(rng, ndim)
            placed = False
            while not placed and radii.min() >= 1.0:
                # room = interior voxels clear of membranes and existing blobs
                free = inside & ~membrane & ~ndimage.binary_dilation(mito > 0, iterations=2)
                clear = ndimage.binary_erosion(free, border_value=0)
                cand = np.flatnonzero(clear)
                for _ in range(MAX_PLACEMENT_TRIES if cand.size else 0):
                    center = np.array(np.unravel_index(cand[rng.integers(cand.size)], cells.shape),
                                      dtype=np.float64)
                    blob = ellipsoid(cells.shape, center, radii, rot)
                    if blob.any() and not np.any(blob & ~clear):
                        mito[blob] = next_id
                        blob_cell[next_id] = cell
                        next_id += 1
                        placed = True
                        break
                else:
                    radii = radii * SHRINK
    return mito, blob_cell


def _line_gain(sigma):
    """Scale so a blurred 2-voxel-thick unit membrane peaks at 1."""
    if sigma <= 0:
        return 1.0
    profile = np.zeros(64)
    profile[31:33] = 1.0
    return 1.0 / ndimage.gaussian_filter1d(profile, sigma).max()


def _blur(x, sigma):
    return ndimage.gaussian_filter(x, sigma, mode="nearest") if sigma > 0 else x


def cristae_texture(rng, mito, period):
    """Stripes in [0, 1] with a random orientation per blob, zero elsewhere."""
    out = np.zeros(mito.shape)
    grid = np.indices(mito.shape, dtype=np.float64)
    for b in range(1, int(mito.max()) + 1):
        m = mito == b
        d = rng.standard_normal(mito.ndim)
        d /= np.linalg.norm(d)
        phase = rng.uniform(0, 2 * np.pi)
        proj = np.tensordot(d, grid[:, m], axes=1)
        out[m] = 0.5 * (1 + np.cos(2 * np.pi * proj / period + phase))
    return out


def noise_field(rng, dims, sigma, correlation):
    if sigma <= 0:
        return np.zeros(dims)
    n = rng.standard_normal(dims)
    if correlation > 0:
        n = ndimage.gaussian_filter(n, correlation, mode="wrap")
        sd = n.std()
        if sd > 0:
            n /= sd
    return n * sigma


def synth_generate(p):
    """Generate (cells, mito, probs) for ``SynthParams`` ``p``."""
    rng = np.random.default_rng(p.seed)
    dims = p.dims
    sites = rng.random((p.n_cells, len(dims))) * np.array(dims)
    cells = voronoi_cells(dims, sites)

    s = rng.uniform(p.membrane_strength[0], p.membrane_strength[1], size=(p.n_cells, p.n_cells))
    s = np.triu(s) + np.triu(s, 1).T
    membrane = membrane_map(cells, s)
    mito, blob_cell = place_blobs(rng, cells, p)
    blob_mask = mito > 0
    outline = perimeter(blob_mask).astype(np.float64)

    sigma = p.boundary_blur_sigma
    gain = _line_gain(sigma)
    mitoch = _blur(blob_mask.astype(np.float64), sigma)
    boundary = _blur(np.maximum(membrane, p.mito_boundary_leak * outline), sigma) * gain
    boundary += p.background * (1.0 - mitoch)
    if p.cristae > 0:
        boundary += p.cristae * mitoch * cristae_texture(rng, mito, p.cristae_period)
    boundary = np.clip(boundary + noise_field(rng, dims, p.noise_sigma, p.noise_correlation), 0, 1)
    mitoch = np.clip(mitoch + noise_field(rng, dims, p.noise_sigma, p.noise_correlation), 0, 1)
    mito_bd = np.clip(_blur(outline, sigma) * gain, 0, 1)
    cyto = np.clip(1.0 - (boundary + mitoch), 0, 1)

    arrays = (boundary, cyto, mitoch, mito_bd)
    data = {c: a.astype(np.float32) for c, a in zip(DEFAULT_CHANNELS, arrays)}
    probs = ProbabilityStack(DEFAULT_CHANNELS, data)
    return SynthVolume(cells, mito, probs, blob_cell)
