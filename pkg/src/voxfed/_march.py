"""Compiled ray marcher behind render_rays.

Per ray: trilinear density at each sample, front-to-back weights, and SH
colour only where the weight passes the skip threshold.  Corner order and
clamping follow field.trilinear.
"""

import math

import numpy as np
from numba import njit

EDGE_EPS = 1e-9


@njit(cache=True, nogil=True, inline="always")
def _project(sh, idx, basis, proj):
    for q in range(8):
        node = idx[q]
        for ch in range(3):
            z = 0.0
            for b in range(9):
                z += sh[node, ch * 9 + b] * basis[b]
            proj[q, ch] = z


@njit(cache=True, nogil=True, inline="always")
def _scatter(g_sh, idx, basis, acc):
    for q in range(8):
        node = idx[q]
        for ch in range(3):
            for b in range(9):
                g_sh[node, ch * 9 + b] += acc[q, ch] * basis[b]


@njit(cache=True, nogil=True)
def march(origins, dirs, s, deltas, basis, density, sh, dims, origin, voxel_size, logit, weight_skip):
    n_rays, n = s.shape
    nx, ny, nz = dims[0], dims[1], dims[2]
    sy = ny * nz
    color = np.zeros((n_rays, 3))
    depth = np.zeros(n_rays)
    opacity = np.zeros(n_rays)
    idx = np.empty(8, dtype=np.int64)
    wc = np.empty(8)
    proj = np.empty((8, 3))
    for r in range(n_rays):
        csum = 0.0
        cell = -1  # corners whose SH . basis is cached in proj
        for i in range(n):
            gx = (origins[r, 0] + s[r, i] * dirs[r, 0] - origin[0]) / voxel_size
            gy = (origins[r, 1] + s[r, i] * dirs[r, 1] - origin[1]) / voxel_size
            gz = (origins[r, 2] + s[r, i] * dirs[r, 2] - origin[2]) / voxel_size
            inside = (
                gx >= -EDGE_EPS and gx <= nx - 1 + EDGE_EPS
                and gy >= -EDGE_EPS and gy <= ny - 1 + EDGE_EPS
                and gz >= -EDGE_EPS and gz <= nz - 1 + EDGE_EPS
            )
            sigma = 0.0
            if inside:
                gx = min(max(gx, 0.0), nx - 1.0)
                gy = min(max(gy, 0.0), ny - 1.0)
                gz = min(max(gz, 0.0), nz - 1.0)
                bx = min(int(math.floor(gx)), nx - 2)
                by = min(int(math.floor(gy)), ny - 2)
                bz = min(int(math.floor(gz)), nz - 2)
                fx, fy, fz = gx - bx, gy - by, gz - bz
                flat0 = bx * sy + by * nz + bz
                c = 0
                raw = 0.0
                for di in range(2):
                    wx = fx if di else 1.0 - fx
                    for dj in range(2):
                        wy = fy if dj else 1.0 - fy
                        for dk in range(2):
                            wz = fz if dk else 1.0 - fz
                            idx[c] = flat0 + di * sy + dj * nz + dk
                            wc[c] = wx * wy * wz
                            raw += density[idx[c]] * wc[c]
                            c += 1
                if logit:
                    sigma = max(raw, 0.0) + math.log1p(math.exp(-abs(raw)))
                else:
                    sigma = raw
            tau = sigma * deltas[r, i]
            w = math.exp(-csum) * -math.expm1(-tau)
            csum += tau
            depth[r] += w * s[r, i]
            if inside and w > 0.0 and (weight_skip <= 0.0 or w > weight_skip):
                if idx[0] != cell:
                    cell = idx[0]
                    _project(sh, idx, basis[r], proj)
                z0 = 0.0
                z1 = 0.0
                z2 = 0.0
                for q in range(8):
                    z0 += proj[q, 0] * wc[q]
                    z1 += proj[q, 1] * wc[q]
                    z2 += proj[q, 2] * wc[q]
                color[r, 0] += w / (1.0 + math.exp(-z0))
                color[r, 1] += w / (1.0 + math.exp(-z1))
                color[r, 2] += w / (1.0 + math.exp(-z2))
        opacity[r] = -math.expm1(-csum)
    return color, depth, opacity


@njit(cache=True, nogil=True)
def march_grad(origins, dirs, s, deltas, basis, target, density, sh, dims, origin, voxel_size, logit, n_rays_norm):
    """Squared-error loss and its gradients w.r.t. node density and SH.

    Returns (loss, g_density, g_sh, touched).  Accumulation runs ray by ray
    in order, so results are reproducible.
    """
    n_rays, n = s.shape
    nx, ny, nz = dims[0], dims[1], dims[2]
    sy = ny * nz
    n_nodes = nx * ny * nz
    g_dens = np.zeros(n_nodes)
    g_sh = np.zeros((n_nodes, 27))
    touched = np.zeros(n_nodes, dtype=np.bool_)
    idx = np.zeros((n, 8), dtype=np.int64)
    wc = np.zeros((n, 8))
    inside = np.zeros(n, dtype=np.bool_)
    sigma = np.zeros(n)
    dsig = np.zeros(n)
    col = np.zeros((n, 3))
    trans = np.zeros(n)
    w = np.zeros(n)
    proj = np.zeros((8, 3))
    acc = np.zeros((8, 3))
    last = np.zeros(8, dtype=np.int64)
    loss = 0.0
    for r in range(n_rays):
        csum = 0.0
        cell = -1
        rgb0 = 0.0
        rgb1 = 0.0
        rgb2 = 0.0
        for i in range(n):
            gx = (origins[r, 0] + s[r, i] * dirs[r, 0] - origin[0]) / voxel_size
            gy = (origins[r, 1] + s[r, i] * dirs[r, 1] - origin[1]) / voxel_size
            gz = (origins[r, 2] + s[r, i] * dirs[r, 2] - origin[2]) / voxel_size
            ins = (
                gx >= -EDGE_EPS and gx <= nx - 1 + EDGE_EPS
                and gy >= -EDGE_EPS and gy <= ny - 1 + EDGE_EPS
                and gz >= -EDGE_EPS and gz <= nz - 1 + EDGE_EPS
            )
            inside[i] = ins
            sigma[i] = 0.0
            dsig[i] = 0.0
            col[i, 0] = 0.5
            col[i, 1] = 0.5
            col[i, 2] = 0.5
            if ins:
                gx = min(max(gx, 0.0), nx - 1.0)
                gy = min(max(gy, 0.0), ny - 1.0)
                gz = min(max(gz, 0.0), nz - 1.0)
                bx = min(int(math.floor(gx)), nx - 2)
                by = min(int(math.floor(gy)), ny - 2)
                bz = min(int(math.floor(gz)), nz - 2)
                fx, fy, fz = gx - bx, gy - by, gz - bz
                flat0 = bx * sy + by * nz + bz
                c = 0
                raw = 0.0
                for di in range(2):
                    wx = fx if di else 1.0 - fx
                    for dj in range(2):
                        wy = fy if dj else 1.0 - fy
                        for dk in range(2):
                            wz = fz if dk else 1.0 - fz
                            idx[i, c] = flat0 + di * sy + dj * nz + dk
                            wc[i, c] = wx * wy * wz
                            raw += density[idx[i, c]] * wc[i, c]
                            c += 1
                if logit:
                    sigma[i] = max(raw, 0.0) + math.log1p(math.exp(-abs(raw)))
                    dsig[i] = 1.0 / (1.0 + math.exp(-raw))
                else:
                    sigma[i] = raw
                    dsig[i] = 1.0
                if idx[i, 0] != cell:
                    cell = idx[i, 0]
                    _project(sh, idx[i], basis[r], proj)
                z0 = 0.0
                z1 = 0.0
                z2 = 0.0
                for q in range(8):
                    z0 += proj[q, 0] * wc[i, q]
                    z1 += proj[q, 1] * wc[i, q]
                    z2 += proj[q, 2] * wc[i, q]
                col[i, 0] = 1.0 / (1.0 + math.exp(-z0))
                col[i, 1] = 1.0 / (1.0 + math.exp(-z1))
                col[i, 2] = 1.0 / (1.0 + math.exp(-z2))
            tau = sigma[i] * deltas[r, i]
            trans[i] = math.exp(-csum)
            w[i] = trans[i] * -math.expm1(-tau)
            csum += tau
            rgb0 += w[i] * col[i, 0]
            rgb1 += w[i] * col[i, 1]
            rgb2 += w[i] * col[i, 2]
        e0 = rgb0 - target[r, 0]
        e1 = rgb1 - target[r, 1]
        e2 = rgb2 - target[r, 2]
        loss += e0 * e0 + e1 * e1 + e2 * e2
        g0 = 2.0 * e0 / n_rays_norm
        g1 = 2.0 * e1 / n_rays_norm
        g2 = 2.0 * e2 / n_rays_norm
        after = 0.0
        cell = -1  # corners whose colour-logit gradients are pooled in acc
        for i in range(n - 1, -1, -1):
            cg = col[i, 0] * g0 + col[i, 1] * g1 + col[i, 2] * g2
            if inside[i]:
                t_next = trans[i] * math.exp(-sigma[i] * deltas[r, i])
                g_raw = deltas[r, i] * (t_next * cg - after) * dsig[i]
                gz0 = w[i] * g0 * col[i, 0] * (1.0 - col[i, 0])
                gz1 = w[i] * g1 * col[i, 1] * (1.0 - col[i, 1])
                gz2 = w[i] * g2 * col[i, 2] * (1.0 - col[i, 2])
                if idx[i, 0] != cell:
                    if cell >= 0:
                        _scatter(g_sh, last, basis[r], acc)
                    cell = idx[i, 0]
                    last[:] = idx[i]
                    acc[:] = 0.0
                for q in range(8):
                    node = idx[i, q]
                    wq = wc[i, q]
                    g_dens[node] += wq * g_raw
                    touched[node] = True
                    acc[q, 0] += gz0 * wq
                    acc[q, 1] += gz1 * wq
                    acc[q, 2] += gz2 * wq
            after += w[i] * cg
        if cell >= 0:
            _scatter(g_sh, last, basis[r], acc)
    return loss / n_rays_norm, g_dens, g_sh, touched
