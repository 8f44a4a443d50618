"""Client-side fitting of a logit-mode VoxelField to posed images.

Loss is the batch mean of ``||C_hat(r) - C(r)||^2``; gradients flow by hand
through compositing, the sigmoid SH colour, softplus density and trilinear
interpolation, then Adam updates the node values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import expit

from .field import LOGIT, N_SH, RegionBounds, VoxelField, interpolation_matrix, inverse_softplus, sample, softplus
from ._march import march_grad
from .geometry import sh_basis
from .io import JsonlLog
from .render import clip_box, ray_box, stratified, transmittance


@dataclass
class TrainConfig:
    batch_size: int = 8192
    epochs: int = 1
    lr_density: float = 5e-2
    lr_sh: float = 5e-2
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-15
    seed: int = 0
    n_samples: int = 512
    voxel_size: float = 0.25
    init_sigma: float = 0.01
    jitter: bool = True
    min_views: int = 1  # a touched node joins the occupancy only if this many cameras see it

    def __post_init__(self):
        if self.lr_density <= 0 or self.lr_sh <= 0:
            raise ValueError("learning rates must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")
        if self.min_views < 1 or self.n_samples < 2:
            raise ValueError("min_views >= 1 and n_samples >= 2 required")


@dataclass
class ClientDataset:
    """Images with cameras in the client's local frame.

    ``bounds`` is the local-frame working volume the client models.
    """

    images: list
    cameras: list
    bounds: RegionBounds

    def __post_init__(self):
        if len(self.images) != len(self.cameras):
            raise ValueError("images and cameras must pair up")

    def rays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All pixel rays (origins, directions) and their colours."""
        os, ds, cs = [], [], []
        for img, cam in zip(self.images, self.cameras):
            o, d = cam.all_rays()
            os.append(o)
            ds.append(d)
            cs.append(np.asarray(img, dtype=np.float64).reshape(-1, 3))
        return np.concatenate(os), np.concatenate(ds), np.concatenate(cs)


@dataclass
class Batch:
    origins: np.ndarray
    dirs: np.ndarray
    target: np.ndarray
    s: np.ndarray
    deltas: np.ndarray


def make_batch(field: VoxelField, origins, dirs, target, n_samples, bounds=None, jitter=False, rng=None) -> Batch:
    """Clip rays to the trainable box and place samples; misses are dropped."""
    box = clip_box(field, bounds)
    near, far = ray_box(origins, dirs, box)
    hit = far > near
    s, deltas = stratified(near[hit], far[hit], n_samples, jitter, rng)
    return Batch(origins[hit], dirs[hit], target[hit], s, deltas)


@dataclass
class Grads:
    density: np.ndarray
    sh: np.ndarray
    loss: float
    touched: np.ndarray = dc_field(default=None)


def forward_backward(field: VoxelField, batch: Batch, n_rays: int | None = None) -> Grads:
    """Loss and exact gradients w.r.t. every node's density value and SH.

    ``n_rays`` is the denominator of the batch mean (defaults to the number
    of rays in the batch).  Compiled per-ray kernel; forward_backward_sparse
    is the same computation written with a sparse interpolation operator.
    """
    r = len(batch.s)
    n_rays = r if n_rays is None else n_rays
    loss, g_dens, g_sh, touched = march_grad(
        batch.origins, batch.dirs, batch.s, batch.deltas, sh_basis(batch.dirs), batch.target,
        np.ascontiguousarray(field.density.reshape(-1)), np.ascontiguousarray(field.sh.reshape(-1, N_SH)),
        np.array(field.dims, dtype=np.int64), field.origin, field.voxel_size, field.mode == LOGIT, float(n_rays),
    )
    return Grads(g_dens.reshape(field.dims), g_sh.reshape(field.sh.shape), float(loss), np.nonzero(touched)[0])


def forward_backward_sparse(field: VoxelField, batch: Batch, n_rays: int | None = None) -> Grads:
    """Reference gradients through a sparse trilinear operator."""
    r, n = batch.s.shape
    n_rays = r if n_rays is None else n_rays
    pts = batch.origins[:, None, :] + batch.s[..., None] * batch.dirs[:, None, :]
    mat, idx, inside = interpolation_matrix(field, pts.reshape(-1, 3))
    raw = mat @ field.density.reshape(-1)
    if field.mode == LOGIT:
        sigma = softplus(raw)
        dsig = expit(raw)
    else:
        sigma = raw.copy()
        dsig = np.ones_like(raw)
    sigma = np.where(inside, sigma, 0.0).reshape(r, n)
    k = (mat @ field.sh.reshape(-1, N_SH)).reshape(r, n, 3, 9)
    basis = sh_basis(batch.dirs)
    c = expit(np.einsum("rncb,rb->rnc", k, basis))
    trans, w, _ = transmittance(sigma, batch.deltas)
    color = np.einsum("rn,rnc->rc", w, c)
    err = color - batch.target
    loss = float(np.sum(err**2) / n_rays)

    g_color = 2.0 * err / n_rays
    # dL/dc_i = w_i g ; through the sigmoid and the SH basis
    gc = w[..., None] * g_color[:, None, :]
    gz = gc * c * (1.0 - c)
    gk = gz[..., None] * basis[:, None, None, :]
    # dL/dsigma_i = delta_i (T_{i+1} c_i.g - sum_{j>i} w_j c_j.g)
    cg = np.einsum("rnc,rc->rn", c, g_color)
    a = w * cg
    after = np.cumsum(a[:, ::-1], axis=1)[:, ::-1] - a
    t_next = trans * np.exp(-sigma * batch.deltas)
    g_sigma = batch.deltas * (t_next * cg - after)
    g_raw = np.where(inside, g_sigma.reshape(-1) * dsig, 0.0)

    mat_t = mat.T.tocsr()
    g_dens = (mat_t @ g_raw).reshape(field.dims)
    g_sh = (mat_t @ gk.reshape(-1, N_SH)).reshape(field.sh.shape)
    touched = np.unique(idx[inside])
    return Grads(g_dens, g_sh, loss, touched)


def photometric_loss(field: VoxelField, batch: Batch, n_rays: int | None = None) -> float:
    """Mean squared colour error over the batch (forward pass only)."""
    r, n = batch.s.shape
    n_rays = r if n_rays is None else n_rays
    pts = batch.origins[:, None, :] + batch.s[..., None] * batch.dirs[:, None, :]
    sigma, coeffs = sample(field, pts.reshape(-1, 3))
    sigma = sigma.reshape(r, n)
    k = coeffs.reshape(r, n, 3, 9)
    c = expit(np.einsum("rncb,rb->rnc", k, sh_basis(batch.dirs)))
    _, w, _ = transmittance(sigma, batch.deltas)
    color = np.einsum("rn,rnc->rc", w, c)
    return float(np.sum((color - batch.target) ** 2) / n_rays)


@dataclass
class AdamState:
    m_density: np.ndarray
    v_density: np.ndarray
    m_sh: np.ndarray
    v_sh: np.ndarray
    step: int = 0

    @classmethod
    def for_field(cls, field: VoxelField) -> AdamState:
        return cls(
            np.zeros_like(field.density), np.zeros_like(field.density), np.zeros_like(field.sh), np.zeros_like(field.sh)
        )


def _adam(param, grad, m, v, lr, cfg: TrainConfig, step: int):
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * grad
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * grad * grad
    bc1 = 1.0 - cfg.beta1**step
    bc2 = 1.0 - cfg.beta2**step
    param -= (lr / bc1) * m / (np.sqrt(v / bc2) + cfg.eps)


def adam_step(field: VoxelField, state: AdamState, grads: Grads, cfg: TrainConfig) -> None:
    """In-place Adam update with bias correction."""
    if state.m_density.shape != field.density.shape or state.m_sh.shape != field.sh.shape:
        raise ValueError("optimizer state does not match the field")
    state.step += 1
    _adam(field.density, grads.density, state.m_density, state.v_density, cfg.lr_density, cfg, state.step)
    _adam(field.sh, grads.sh, state.m_sh, state.v_sh, cfg.lr_sh, cfg, state.step)


def init_field(bounds: RegionBounds, cfg: TrainConfig) -> VoxelField:
    return VoxelField.covering(bounds, cfg.voxel_size, mode=LOGIT, fill_density=float(inverse_softplus(cfg.init_sigma)))


def train_client(dataset: ClientDataset, cfg: TrainConfig, log: JsonlLog | None = None) -> VoxelField:
    """Fit a fresh logit-mode field; occupancy marks every node touched by a
    training sample.  Runs ``epochs * ceil(#pixels / batch_size)`` steps."""
    if not dataset.images:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    field = init_field(dataset.bounds, cfg)
    origins, dirs, colors = dataset.rays()
    n_pix = len(origins)
    steps_per_epoch = math.ceil(n_pix / cfg.batch_size)
    state = AdamState.for_field(field)
    occ = field.occupancy.reshape(-1)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_pix)
        for b in range(steps_per_epoch):
            sel = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            batch = make_batch(field, origins[sel], dirs[sel], colors[sel], cfg.n_samples, dataset.bounds, cfg.jitter, rng)
            if len(batch.s) == 0:
                continue
            grads = forward_backward(field, batch)
            adam_step(field, state, grads, cfg)
            occ[grads.touched] = True
            step += 1
            if log is not None:
                log.write(step=step, epoch=epoch, loss=grads.loss)
    if cfg.min_views > 1:
        field.occupancy &= view_counts(field, dataset.cameras) >= cfg.min_views
    return field


def view_counts(field: VoxelField, cameras) -> np.ndarray:
    """Number of cameras whose image contains each node."""
    pts = field.node_positions().reshape(-1, 3)
    counts = np.zeros(len(pts), dtype=np.int64)
    for cam in cameras:
        counts += cam.sees(pts)
    return counts.reshape(field.dims)
