import numpy as np

from voxfed.aggregate import REGION_MASK, ClientUpdate
from voxfed.field import LOGIT, VoxelField
from voxfed.geometry import Pose


def random_field(rng, dims=(4, 4, 4), voxel_size=0.5, origin=(-1.0, -1.0, -1.0), mode=LOGIT, scale=1.0):
    f = VoxelField.zeros(origin, voxel_size, dims, mode=mode)
    f.density[:] = rng.normal(0.0, scale, dims) if mode == LOGIT else rng.uniform(0.0, 2.0 * scale, dims)
    f.sh[:] = rng.normal(0.0, 0.5, f.sh.shape)
    f.occupancy[:] = True
    return f


def random_pose(rng, trans=2.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose.from_rotvec(axis * rng.uniform(-np.pi, np.pi), rng.uniform(-trans, trans, 3))


def random_batch(rng, field, n_rays=8, n_samples=16, jitter=False):
    """Rays from outside the grid aimed at random interior points."""
    from voxfed.train import make_batch

    lo, hi = field.origin, field.upper
    centre = (lo + hi) / 2
    radius = float(np.linalg.norm(hi - lo))
    d0 = rng.normal(size=(n_rays, 3))
    d0 /= np.linalg.norm(d0, axis=1, keepdims=True)
    origins = centre + radius * d0
    aim = rng.uniform(lo, hi, (n_rays, 3))
    dirs = aim - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    target = rng.uniform(0.0, 1.0, (n_rays, 3))
    return make_batch(field, origins, dirs, target, n_samples, jitter=jitter, rng=rng)


def fd_gradients(field, batch, h=1e-4, nodes=None):
    """Central differences of the forward-only loss w.r.t. density and SH."""
    from voxfed.train import photometric_loss

    f = field.copy()
    dens = f.density.reshape(-1)
    sh = f.sh.reshape(len(dens), -1)
    nodes = range(len(dens)) if nodes is None else nodes
    g_d = np.zeros(len(dens))
    g_s = np.zeros(sh.shape)

    def diff(arr, idx):
        keep = arr[idx]
        arr[idx] = keep + h
        up = photometric_loss(f, batch)
        arr[idx] = keep - h
        down = photometric_loss(f, batch)
        arr[idx] = keep
        return (up - down) / (2 * h)

    for i in nodes:
        g_d[i] = diff(dens, i)
        for j in range(sh.shape[1]):
            g_s[i, j] = diff(sh, (i, j))
    return g_d.reshape(field.dims), g_s.reshape(field.sh.shape)


def max_rel_error(analytic, reference) -> float:
    """Largest entry error relative to the largest reference entry."""
    scale = max(float(np.max(np.abs(reference))), 1e-12)
    return float(np.max(np.abs(np.asarray(analytic) - reference))) / scale


def _stack_loss(raw, coeffs, inside, batch, logit=True):
    """Loss for a stack of perturbed sample values: raw (P, R*N), coeffs (P, R*N, 27)."""
    r, n = batch.s.shape
    p = raw.shape[0]
    sigma = np.logaddexp(0.0, raw) if logit else raw
    sigma = np.where(inside, sigma, 0.0).reshape(p, r, n)
    from voxfed.geometry import sh_basis

    z = np.einsum("prncb,rb->prnc", coeffs.reshape(p, r, n, 3, 9), sh_basis(batch.dirs))
    c = 1.0 / (1.0 + np.exp(-z))
    tau = sigma * batch.deltas
    before = np.cumsum(tau, axis=-1) - tau
    w = np.exp(-before) * (1.0 - np.exp(-tau))
    color = np.einsum("prn,prnc->prc", w, c)
    return np.sum((color - batch.target) ** 2, axis=(1, 2)) / r


def fd_gradients_fast(field, batch, h=1e-4):
    """Central differences over every parameter at once.

    Each node perturbation shifts the interpolated sample values by ``h``
    times that node's trilinear weight, so all perturbed forward passes are
    evaluated as one stacked array.
    """
    from voxfed.field import interpolation_matrix

    pts = batch.origins[:, None, :] + batch.s[..., None] * batch.dirs[:, None, :]
    mat, _, inside = interpolation_matrix(field, pts.reshape(-1, 3))
    dense = mat.toarray()  # (samples, nodes)
    raw0 = dense @ field.density.reshape(-1)
    k0 = dense @ field.sh.reshape(-1, 27)
    logit = field.mode == LOGIT
    cols = np.nonzero(np.any(dense != 0, axis=0))[0]
    g_d = np.zeros(field.n_nodes)
    g_s = np.zeros((field.n_nodes, 27))
    step = h * dense[:, cols].T  # (P, S)
    up = _stack_loss(raw0 + step, np.broadcast_to(k0, (len(cols),) + k0.shape), inside, batch, logit)
    down = _stack_loss(raw0 - step, np.broadcast_to(k0, (len(cols),) + k0.shape), inside, batch, logit)
    g_d[cols] = (up - down) / (2 * h)
    for j in range(27):
        kp = np.repeat(k0[None], len(cols), axis=0)
        km = kp.copy()
        kp[:, :, j] += step
        km[:, :, j] -= step
        up = _stack_loss(np.broadcast_to(raw0, step.shape), kp, inside, batch, logit)
        down = _stack_loss(np.broadcast_to(raw0, step.shape), km, inside, batch, logit)
        g_s[cols, j] = (up - down) / (2 * h)
    return g_d.reshape(field.dims), g_s.reshape(field.sh.shape)


def random_update(rng, mode=LOGIT, mask_frac=0.8):
    f = random_field(rng, dims=tuple(rng.integers(3, 7, 3)), voxel_size=float(rng.uniform(0.3, 0.6)),
                     origin=tuple(rng.uniform(-2, 0, 3)), mode=mode)
    f.occupancy[:] = rng.random(f.dims) < mask_frac
    return ClientUpdate.from_field(f, random_pose(rng, trans=1.5))


def region_oracle(update, gfield, mode):
    """Exhaustive per-node containment, written out coordinate by coordinate."""
    lf = update.local_field
    world = gfield.node_positions().reshape(-1, 3)
    local = (world - update.corrected_pose.translation) @ update.corrected_pose.rotation
    lo, hi = update.region.lo, update.region.hi
    keep = np.all((local >= lo) & (local <= hi), axis=1)
    if mode == REGION_MASK:
        g = (local - lf.origin) / lf.voxel_size
        dims = np.array(lf.dims)
        ok = np.all((g >= -1e-9) & (g <= dims - 1 + 1e-9), axis=1)
        base = np.clip(np.floor(np.clip(g, 0, dims - 1)).astype(int), 0, dims - 2)
        occ = np.ones(len(g), bool)
        for corner in np.ndindex(2, 2, 2):
            c = base + np.array(corner)
            occ &= lf.occupancy[c[:, 0], c[:, 1], c[:, 2]]
        keep &= ok & occ
    return np.nonzero(keep)[0]
