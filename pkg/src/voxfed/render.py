"""Volume rendering of RGB, depth and opacity from a VoxelField.

Colour follows ``c = sigmoid(sum_lm k_lm Y_lm(d))`` per channel and pixels
composite front to back,
``C = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i`` with
``T_i = exp(-sum_{j<i} sigma_j delta_j)``.  Leftover transmittance
composites over black.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .field import LOGIT, N_SH, RegionBounds, VoxelField, sample
from ._march import march
from .geometry import Camera, Ray, pixel_ray, sh_basis

PSNR_CAP = 100.0
DEFAULT_SAMPLES = 512


@dataclass
class RaySamples:
    positions: np.ndarray
    deltas: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.positions) <= 0):
            raise ValueError("sample positions must be strictly ascending")
        if np.any(self.deltas <= 0):
            raise ValueError("sample spacings must be positive")

    @property
    def count(self) -> int:
        return len(self.positions)


@dataclass
class RenderOutput:
    color: np.ndarray
    depth: float
    opacity: float
    weights: np.ndarray


def stratified(near, far, n: int, jitter: bool = False, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-ray sample distances (R, n) and spacings (R, n).

    One sample per equal bin of [near, far]: the bin centre, or a uniform
    draw inside the bin when jittering.  The last spacing repeats the one
    before it.
    """
    near = np.asarray(near, dtype=np.float64).reshape(-1)
    far = np.asarray(far, dtype=np.float64).reshape(-1)
    if n < 2:
        raise ValueError("need at least 2 samples per ray")
    width = (far - near) / n
    if jitter:
        if rng is None:
            raise ValueError("jittered sampling needs an rng")
        u = rng.random((len(near), n))
    else:
        u = np.full((len(near), n), 0.5)
    s = near[:, None] + (np.arange(n)[None, :] + u) * width[:, None]
    if jitter:
        deltas = np.empty_like(s)
        deltas[:, :-1] = np.diff(s, axis=1)
        deltas[:, -1] = deltas[:, -2]
    else:
        deltas = np.repeat(width[:, None], n, axis=1)
    return s, deltas


def sample_ray(ray: Ray, near: float, far: float, n: int = DEFAULT_SAMPLES, jitter: bool = False, rng=None) -> RaySamples:
    if not 0 <= near < far:
        raise ValueError(f"need 0 <= near < far, got {near}, {far}")
    s, d = stratified([near], [far], n, jitter, rng)
    return RaySamples(s[0], d[0])


def sh_color(coeffs, d) -> np.ndarray:
    """RGB from 27 channel-major SH coefficients seen along direction ``d``."""
    basis = sh_basis(d)
    k = np.asarray(coeffs, dtype=np.float64).reshape(np.shape(coeffs)[:-1] + (3, 9))
    return expit(np.einsum("...cb,...b->...c", k, basis))


def transmittance(sigma, deltas) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Transmittance before each sample, per-sample weights and final T."""
    tau = np.asarray(sigma) * np.asarray(deltas)
    csum = np.cumsum(tau, axis=-1)
    # exclusive sum taken directly (csum - tau can tick upward by an ulp)
    before = np.concatenate([np.zeros(tau.shape[:-1] + (1,)), csum[..., :-1]], axis=-1)
    trans = np.exp(-before)
    alpha = -np.expm1(-tau)
    return trans, trans * alpha, np.exp(-csum[..., -1])


def composite(sigma, colors, deltas) -> RenderOutput:
    """Composite one ray's samples (sigma (n,), colors (n, 3), deltas (n,))."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("density must be non-negative")
    _, w, t_end = transmittance(sigma, deltas)
    color = w @ np.asarray(colors, dtype=np.float64)
    return RenderOutput(color, 0.0, float(1.0 - t_end), w)


def composite_depth(sigma, positions, deltas) -> float:
    """Expected termination distance, not normalised by opacity."""
    _, w, _ = transmittance(np.asarray(sigma, dtype=np.float64), deltas)
    return float(w @ np.asarray(positions, dtype=np.float64))


def ray_box(origins, dirs, box: RegionBounds) -> tuple[np.ndarray, np.ndarray]:
    """Slab-test entry/exit distances; near is clamped at 0, misses give near >= far."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (box.lo - origins) * inv
        t1 = (box.hi - origins) * inv
    lo_t, hi_t = np.minimum(t0, t1), np.maximum(t0, t1)
    # axis-parallel rays: inside the slab means unbounded, outside means miss
    par = dirs == 0
    inslab = (origins >= box.lo) & (origins <= box.hi)
    lo_t = np.where(par, np.where(inslab, -np.inf, np.inf), lo_t)
    hi_t = np.where(par, np.where(inslab, np.inf, -np.inf), hi_t)
    near = np.max(lo_t, axis=-1)
    far = np.min(hi_t, axis=-1)
    return np.maximum(near, 0.0), far


def clip_box(field: VoxelField, bounds: RegionBounds | None) -> RegionBounds:
    box = field.bounds
    if bounds is not None:
        box = box.intersect(bounds)
    return box


@dataclass
class RayBatchOutput:
    color: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray


def render_rays(
    field: VoxelField,
    origins,
    dirs,
    n_samples: int = DEFAULT_SAMPLES,
    bounds: RegionBounds | None = None,
    jitter: bool = False,
    rng=None,
    weight_skip: float = 0.0,
    chunk: int = 4096,
    near_far: tuple | None = None,
) -> RayBatchOutput:
    """Render a batch of rays.

    ``weight_skip`` > 0 evaluates colour only at samples whose compositing
    weight exceeds it; 0 is exact.  ``near_far`` overrides the box clip with
    explicit per-ray sampling intervals.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    color = np.zeros((n, 3))
    depth = np.zeros(n)
    opacity = np.zeros(n)
    if near_far is not None:
        near, far = (np.asarray(a, dtype=np.float64).reshape(-1) for a in near_far)
    else:
        box = clip_box(field, bounds)
        if box.is_empty or n == 0:
            return RayBatchOutput(color, depth, opacity)
        near, far = ray_box(origins, dirs, box)
    hit = np.nonzero(far > near)[0]
    dens_flat = np.ascontiguousarray(field.density.reshape(-1))
    sh_flat = np.ascontiguousarray(field.sh.reshape(-1, N_SH))
    dims = np.array(field.dims, dtype=np.int64)
    for start in range(0, len(hit), chunk):
        rows = hit[start : start + chunk]
        s, deltas = stratified(near[rows], far[rows], n_samples, jitter, rng)
        c, d, a = march(
            origins[rows], dirs[rows], s, deltas, sh_basis(dirs[rows]), dens_flat, sh_flat, dims,
            field.origin, field.voxel_size, field.mode == LOGIT, weight_skip,
        )
        color[rows], depth[rows], opacity[rows] = c, d, a
    return RayBatchOutput(color, depth, opacity)


def render_pixel(
    field: VoxelField, cam: Camera, px, n_samples: int = DEFAULT_SAMPLES, bounds: RegionBounds | None = None
) -> RenderOutput:
    """Single-pixel render that keeps the per-sample weights."""
    ray = pixel_ray(cam, px)
    box = clip_box(field, bounds)
    near, far = ray_box(ray.origin[None], ray.direction[None], box) if not box.is_empty else (np.zeros(1), np.zeros(1))
    if far[0] <= near[0]:
        return RenderOutput(np.zeros(3), 0.0, 0.0, np.zeros(n_samples))
    rs = sample_ray(ray, near[0], far[0], n_samples)
    pts = ray.at(rs.positions)
    sigma, coeffs = sample(field, pts)
    colors = sh_color(coeffs, np.broadcast_to(ray.direction, (n_samples, 3)))
    out = composite(sigma, colors, rs.deltas)
    out.depth = composite_depth(sigma, rs.positions, rs.deltas)
    return out


def render_image(
    field: VoxelField,
    cam: Camera,
    n_samples: int = DEFAULT_SAMPLES,
    bounds: RegionBounds | None = None,
    workers: int = 1,
    weight_skip: float = 0.0,
    rows_per_task: int = 16,
) -> tuple[np.ndarray, np.ndarray]:
    """RGB (H, W, 3) and depth (H, W).

    Row blocks are rendered independently, so any worker count gives
    bit-identical output.
    """
    h, w = cam.height, cam.width
    v, u = np.mgrid[0:h, 0:w]
    o, d = cam.rays(u.reshape(-1), v.reshape(-1))
    step = rows_per_task * w
    spans = [(a, min(a + step, h * w)) for a in range(0, h * w, step)]

    def task(span):
        a, b = span
        return render_rays(field, o[a:b], d[a:b], n_samples, bounds, weight_skip=weight_skip)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            outs = list(ex.map(task, spans))
    else:
        outs = [task(s) for s in spans]
    rgb = np.concatenate([x.color for x in outs]).reshape(h, w, 3)
    depth = np.concatenate([x.depth for x in outs]).reshape(h, w)
    return rgb, depth


def psnr(rendered, reference) -> float:
    """10 log10(1 / MSE) over all channels, capped at PSNR_CAP for identical inputs."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 10.0 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return float(-10.0 * np.log10(mse))
