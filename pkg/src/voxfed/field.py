"""Dense node-centred voxel grid holding density and 27 SH coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .geometry import rotate_sh

N_SH = 27
ACTIVATED = "activated"
LOGIT = "logit"

# slack for points that land on the far face through rounding
_EDGE_EPS = 1e-9


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class RegionBounds:
    min: tuple
    max: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.min)
        hi = tuple(float(v) for v in self.max)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)
        if not self.is_empty and any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"region min {lo} exceeds max {hi}")

    @classmethod
    def empty(cls) -> RegionBounds:
        return cls((np.inf,) * 3, (-np.inf,) * 3)

    @property
    def is_empty(self) -> bool:
        return any(a > b for a, b in zip(self.min, self.max)) and np.isinf(self.min[0])

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.min)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.max)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        if self.is_empty:
            return np.zeros(np.shape(points)[:-1], dtype=bool)
        p = np.asarray(points, dtype=np.float64)
        return np.all((p >= self.lo - tol) & (p <= self.hi + tol), axis=-1)

    def intersect(self, other: RegionBounds) -> RegionBounds:
        if self.is_empty or other.is_empty:
            return RegionBounds.empty()
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return RegionBounds.empty()
        return RegionBounds(lo, hi)

    def corners(self) -> np.ndarray:
        lo, hi = self.lo, self.hi
        return np.array(
            [[(lo, hi)[i][0], (lo, hi)[j][1], (lo, hi)[k][2]] for i in (0, 1) for j in (0, 1) for k in (0, 1)]
        )

    def transformed(self, pose) -> RegionBounds:
        """Axis-aligned box around this box mapped through ``pose``."""
        if self.is_empty:
            return self
        c = pose.apply(self.corners())
        return RegionBounds(c.min(axis=0), c.max(axis=0))

    def to_dict(self) -> dict:
        return {"min": list(self.min), "max": list(self.max)}

    @classmethod
    def from_dict(cls, d) -> RegionBounds:
        return cls(d["min"], d["max"])


@dataclass(eq=False)
class VoxelField:
    """Values live on nodes ``origin + voxel_size * (i, j, k)``.

    ``density`` holds sigma (activated mode) or raw pre-softplus values
    (logit mode); ``sh`` is laid out channel-major, ``sh[..., c * 9 + b]``.
    """

    origin: np.ndarray
    voxel_size: float
    density: np.ndarray
    sh: np.ndarray
    occupancy: np.ndarray
    mode: str = ACTIVATED

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.voxel_size = float(self.voxel_size)
        self.density = np.ascontiguousarray(self.density, dtype=np.float64)
        self.sh = np.ascontiguousarray(self.sh, dtype=np.float64)
        self.occupancy = np.ascontiguousarray(self.occupancy, dtype=bool)
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.density.ndim != 3 or min(self.density.shape) < 2:
            raise ValueError("dims must be >= 2 along every axis")
        if self.sh.shape != self.density.shape + (N_SH,):
            raise ValueError("sh shape must be dims + (27,)")
        if self.occupancy.shape != self.density.shape:
            raise ValueError("occupancy shape must match dims")
        if self.mode not in (ACTIVATED, LOGIT):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == ACTIVATED and np.any(self.density < 0):
            raise ValueError("activated density must be non-negative")

    @classmethod
    def zeros(cls, origin, voxel_size, dims, mode=ACTIVATED, fill_density=0.0) -> VoxelField:
        dims = tuple(int(d) for d in dims)
        return cls(
            origin,
            voxel_size,
            np.full(dims, fill_density, dtype=np.float64),
            np.zeros(dims + (N_SH,)),
            np.zeros(dims, dtype=bool),
            mode,
        )

    @classmethod
    def covering(cls, bounds: RegionBounds, voxel_size: float, mode=ACTIVATED, fill_density=0.0) -> VoxelField:
        """Smallest grid with the given spacing whose node box contains ``bounds``."""
        n = np.maximum(np.ceil(bounds.extent / voxel_size - 1e-9).astype(int) + 1, 2)
        return cls.zeros(bounds.lo, voxel_size, n, mode, fill_density)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.density.shape

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.voxel_size * (np.array(self.dims) - 1)

    @property
    def bounds(self) -> RegionBounds:
        return RegionBounds(self.origin, self.upper)

    def copy(self) -> VoxelField:
        return VoxelField(
            self.origin.copy(), self.voxel_size, self.density.copy(), self.sh.copy(), self.occupancy.copy(), self.mode
        )

    def same_geometry(self, other: VoxelField) -> bool:
        return (
            self.dims == other.dims
            and self.voxel_size == other.voxel_size
            and np.array_equal(self.origin, other.origin)
        )

    def activated_density(self) -> np.ndarray:
        return softplus(self.density) if self.mode == LOGIT else self.density

    def to_activated(self) -> VoxelField:
        return VoxelField(
            self.origin.copy(), self.voxel_size, self.activated_density(), self.sh.copy(), self.occupancy.copy()
        )

    def node_positions(self) -> np.ndarray:
        """World positions of all nodes, shape dims + (3,)."""
        idx = np.stack(np.meshgrid(*[np.arange(d) for d in self.dims], indexing="ij"), axis=-1)
        return self.origin + self.voxel_size * idx

    def node_position(self, index) -> np.ndarray:
        return self.origin + self.voxel_size * np.asarray(index, dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, VoxelField):
            return NotImplemented
        return (
            self.mode == other.mode
            and self.same_geometry(other)
            and np.array_equal(self.density, other.density)
            and np.array_equal(self.sh, other.sh)
            and np.array_equal(self.occupancy, other.occupancy)
        )


def world_to_grid(field: VoxelField, points) -> np.ndarray:
    return (np.asarray(points, dtype=np.float64) - field.origin) / field.voxel_size


def grid_to_world(field: VoxelField, coords) -> np.ndarray:
    return np.asarray(coords, dtype=np.float64) * field.voxel_size + field.origin


def trilinear(field: VoxelField, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flat node indices (N, 8), weights (N, 8) and inside mask (N,).

    Corner order is (di, dj, dk) in lexicographic order.  Rows for points
    outside the grid carry index 0 and zero weight.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    g = world_to_grid(field, pts)
    dims = np.array(field.dims)
    hi = dims - 1
    inside = np.all((g >= -_EDGE_EPS) & (g <= hi + _EDGE_EPS), axis=1) & np.all(np.isfinite(g), axis=1)
    g = np.where(inside[:, None], np.clip(g, 0.0, hi), 0.0)
    base = np.minimum(np.floor(g).astype(np.int64), hi - 1)
    frac = g - base
    sy, sz = dims[1] * dims[2], dims[2]
    flat0 = base[:, 0] * sy + base[:, 1] * sz + base[:, 2]
    idx = np.empty((len(pts), 8), dtype=np.int64)
    w = np.empty((len(pts), 8))
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    c = 0
    for di in (0, 1):
        wx = fx if di else 1.0 - fx
        for dj in (0, 1):
            wy = fy if dj else 1.0 - fy
            for dk in (0, 1):
                wz = fz if dk else 1.0 - fz
                idx[:, c] = flat0 + di * sy + dj * sz + dk
                w[:, c] = wx * wy * wz
                c += 1
    idx[~inside] = 0
    w[~inside] = 0.0
    return idx, w, inside


def interpolation_matrix(field: VoxelField, points) -> tuple[sparse.csr_matrix, np.ndarray, np.ndarray]:
    """Sparse (N, n_nodes) trilinear operator plus the raw (idx, inside)."""
    idx, w, inside = trilinear(field, points)
    n = len(idx)
    rows = np.repeat(np.arange(n), 8)
    mat = sparse.csr_matrix((w.reshape(-1), (rows, idx.reshape(-1))), shape=(n, field.n_nodes))
    return mat, idx, inside


def sample(field: VoxelField, points) -> tuple[np.ndarray, np.ndarray]:
    """Activated density and SH coefficients at world points.

    Accepts a single point (returns a scalar density and a 27-vector) or an
    (N, 3) array.  Points outside the grid give density 0 and zero
    coefficients.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    idx, w, inside = trilinear(field, pts)
    dens = np.einsum("nc,nc->n", field.density.reshape(-1)[idx], w)
    if field.mode == LOGIT:
        dens = softplus(dens)
    dens = np.where(inside, dens, 0.0)
    sh_flat = field.sh.reshape(-1, N_SH)
    coeffs = np.einsum("ncs,nc->ns", sh_flat[idx], w)
    if single:
        return float(dens[0]), coeffs[0]
    return dens, coeffs


def sample_with_weights(field: VoxelField, point):
    """Sample one interior point, also returning the 8 (index, weight) pairs.

    Indices are (i, j, k) triples.  Raises for points outside the grid.
    """
    idx, w, inside = trilinear(field, np.asarray(point, dtype=np.float64).reshape(1, 3))
    if not inside[0]:
        raise ValueError(f"point {point} outside the voxel grid")
    node_idx = np.stack(np.unravel_index(idx[0], field.dims), axis=-1)
    # same reductions as sample(), so the two agree bit for bit
    raw = np.einsum("nc,nc->n", field.density.reshape(-1)[idx], w)
    dens = float((softplus(raw) if field.mode == LOGIT else raw)[0])
    coeffs = np.einsum("ncs,nc->ns", field.sh.reshape(-1, N_SH)[idx], w)[0]
    return dens, coeffs, node_idx, w[0]


def occupied_bounds(field: VoxelField) -> RegionBounds:
    if not field.occupancy.any():
        return RegionBounds.empty()
    nz = np.nonzero(field.occupancy)
    lo = np.array([a.min() for a in nz])
    hi = np.array([a.max() for a in nz])
    return RegionBounds(field.node_position(lo), field.node_position(hi))


def cell_occupied(field: VoxelField, points) -> np.ndarray:
    """True where every corner of the cell containing the point is occupied."""
    idx, _, inside = trilinear(field, points)
    occ = field.occupancy.reshape(-1)[idx].all(axis=1)
    return occ & inside


def resample(src: VoxelField, pose, bounds: RegionBounds, voxel_size: float | None = None) -> VoxelField:
    """Activated copy of ``src`` on a grid covering ``bounds`` in a frame whose
    local-to-``src`` transform is ``pose``.  Occupancy follows density > 0."""
    out = VoxelField.covering(bounds, voxel_size or src.voxel_size)
    pts = pose.apply(out.node_positions().reshape(-1, 3))
    dens, coeffs = sample(src, pts)
    out.density[:] = np.asarray(dens).reshape(out.dims)
    coeffs = np.asarray(coeffs).reshape(out.sh.shape)
    if not np.array_equal(pose.rotation, np.eye(3)):
        # view directions turn with the frame
        coeffs = rotate_sh(coeffs, pose.rotation)
    out.sh[:] = coeffs
    out.occupancy[:] = out.density > 0
    return out
