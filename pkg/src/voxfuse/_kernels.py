"""Compiled inner loops: voxel walking, depth-prior splatting, ray casting.

Everything here works on plain arrays; the public wrappers live in
``gdp`` and ``synth``.  Grids are described by ``lo`` (corner), ``s`` (voxel
size) and ``dims``; rays by an origin and a unit direction in the grid frame.
"""

import math

import numba as nb
import numpy as np

_INF = np.inf
# Camera-depth floor used when clipping voxel boxes against the image plane.
_Z_EPS = 1e-6
# Relative slack on the truncation radius so centers at exactly k*sigma count.
_RADIUS_SLACK = 1e-9


@nb.njit(cache=True, inline="always")
def _axis_interval(o, d, lo, hi):
    # Parametric interval of the slab [lo, hi) along one axis.
    if d == 0.0:
        if lo <= o < hi:
            return -_INF, _INF
        return _INF, -_INF
    t1 = (lo - o) / d
    t2 = (hi - o) / d
    if t1 < t2:
        return t1, t2
    return t2, t1


@nb.njit(cache=True)
def ray_box(o, d, lo, hi):
    """Entry/exit parameters of the ray against the box ``[lo, hi)``."""
    t_in = -_INF
    t_out = _INF
    for k in range(3):
        a, b = _axis_interval(o[k], d[k], lo[k], hi[k])
        if a > t_in:
            t_in = a
        if b < t_out:
            t_out = b
    return t_in, t_out


@nb.njit(cache=True)
def dda(o, d, lo, s, dims, t0, t1, out_idx, out_t):
    """Walk the voxels pierced by ``o + t d`` for ``t`` in ``[t0, t1]``.

    Writes voxel indices and (entry, exit) parameters in increasing order and
    returns how many were written.  Zero-length grazes are skipped.  When the
    ray crosses several boundaries at the same parameter it steps along the
    lowest axis first.
    """
    hi = np.empty(3)
    for k in range(3):
        hi[k] = lo[k] + dims[k] * s
    g_in, g_out = ray_box(o, d, lo, hi)
    if g_in < t0:
        g_in = t0
    if g_out > t1:
        g_out = t1
    if not g_in < g_out:
        return 0

    idx = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    t_next = np.empty(3)
    for k in range(3):
        u = (o[k] + d[k] * g_in - lo[k]) / s
        if d[k] < 0.0:
            i = np.int64(math.ceil(u)) - 1
            step[k] = -1
        else:
            i = np.int64(math.floor(u))
            step[k] = 1
        if i < 0:
            i = 0
        if i > dims[k] - 1:
            i = dims[k] - 1
        idx[k] = i
        if d[k] > 0.0:
            t_next[k] = (lo[k] + (i + 1) * s - o[k]) / d[k]
        elif d[k] < 0.0:
            t_next[k] = (lo[k] + i * s - o[k]) / d[k]
        else:
            t_next[k] = _INF

    n = 0
    t_in = g_in
    cap = out_idx.shape[0]
    while n < cap:
        ax = 0
        if t_next[1] < t_next[ax]:
            ax = 1
        if t_next[2] < t_next[ax]:
            ax = 2
        t_out = t_next[ax]
        if t_out > g_out:
            t_out = g_out
        if t_out > t_in:
            out_idx[n, 0] = idx[0]
            out_idx[n, 1] = idx[1]
            out_idx[n, 2] = idx[2]
            out_t[n, 0] = t_in
            out_t[n, 1] = t_out
            n += 1
        if t_next[ax] >= g_out:
            break
        t_in = t_next[ax]
        i = idx[ax] + step[ax]
        if i < 0 or i >= dims[ax]:
            break
        idx[ax] = i
        if step[ax] > 0:
            t_next[ax] = (lo[ax] + (i + 1) * s - o[ax]) / d[ax]
        else:
            t_next[ax] = (lo[ax] + i * s - o[ax]) / d[ax]
    return n


@nb.njit(cache=True)
def _ray_window(t_hat, radius, half_diag):
    # Any voxel with center within `radius` of the peak is pierced inside this window.
    if radius == _INF:
        return 0.0, _INF
    a = t_hat - radius - half_diag
    if a < 0.0:
        a = 0.0
    return a, t_hat + radius + half_diag


@nb.njit(cache=True)
def _center_dist2(lo, s, i, j, k, p):
    cx = lo[0] + (i + 0.5) * s - p[0]
    cy = lo[1] + (j + 0.5) * s - p[1]
    cz = lo[2] + (k + 0.5) * s - p[2]
    return cx * cx + cy * cy + cz * cz


@nb.njit(cache=True)
def ray_weight_sums(origin, dirs, phat, t_hat, valid, lo, s, dims, sigma, radius):
    """Total truncated Gaussian weight deposited by each pixel ray."""
    npx = dirs.shape[0]
    out = np.zeros(npx)
    cap = dims[0] + dims[1] + dims[2] + 3
    idx = np.empty((cap, 3), np.int64)
    tt = np.empty((cap, 2))
    r2 = radius * radius * (1.0 + _RADIUS_SLACK)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    half_diag = 0.5 * math.sqrt(3.0) * s
    for p in range(npx):
        if not valid[p]:
            continue
        ta, tb = _ray_window(t_hat[p], radius, half_diag)
        n = dda(origin, dirs[p], lo, s, dims, ta, tb, idx, tt)
        total = 0.0
        for m in range(n):
            d2 = _center_dist2(lo, s, idx[m, 0], idx[m, 1], idx[m, 2], phat[p])
            if d2 <= r2:
                total += math.exp(-d2 * inv2s2)
        out[p] = total
    return out


@nb.njit(cache=True)
def _scatter_range(p0, p1, origin, dirs, phat, t_hat, valid, feats, ray_norm, lo, s, dims, sigma, radius,
                   acc, wsum, nrays):
    ny = dims[1]
    nz = dims[2]
    C = feats.shape[1]
    cap = dims[0] + dims[1] + dims[2] + 3
    idx = np.empty((cap, 3), np.int64)
    tt = np.empty((cap, 2))
    r2 = radius * radius * (1.0 + _RADIUS_SLACK)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    half_diag = 0.5 * math.sqrt(3.0) * s
    for p in range(p0, p1):
        if not valid[p]:
            continue
        ta, tb = _ray_window(t_hat[p], radius, half_diag)
        n = dda(origin, dirs[p], lo, s, dims, ta, tb, idx, tt)
        scale = 1.0
        if ray_norm[p] > 0.0:
            scale = 1.0 / ray_norm[p]
        for m in range(n):
            i = idx[m, 0]
            j = idx[m, 1]
            k = idx[m, 2]
            d2 = _center_dist2(lo, s, i, j, k, phat[p])
            if d2 > r2:
                continue
            w = math.exp(-d2 * inv2s2) * scale
            flat = (i * ny + j) * nz + k
            for c in range(C):
                acc[flat, c] += w * feats[p, c]
            wsum[flat] += w
            nrays[flat] += 1


@nb.njit(cache=True)
def scatter_strict(origin, dirs, phat, t_hat, valid, feats, ray_norm, lo, s, dims, sigma, radius):
    nvox = dims[0] * dims[1] * dims[2]
    acc = np.zeros((nvox, feats.shape[1]))
    wsum = np.zeros(nvox)
    nrays = np.zeros(nvox, np.int64)
    _scatter_range(0, dirs.shape[0], origin, dirs, phat, t_hat, valid, feats, ray_norm, lo, s, dims, sigma,
                   radius, acc, wsum, nrays)
    return acc, wsum, nrays


@nb.njit(cache=True, parallel=True)
def scatter_fast(origin, dirs, phat, t_hat, valid, feats, ray_norm, lo, s, dims, sigma, radius, nchunks):
    nvox = dims[0] * dims[1] * dims[2]
    C = feats.shape[1]
    npx = dirs.shape[0]
    acc = np.zeros((nchunks, nvox, C))
    wsum = np.zeros((nchunks, nvox))
    nrays = np.zeros((nchunks, nvox), np.int64)
    per = (npx + nchunks - 1) // nchunks
    for q in nb.prange(nchunks):
        p0 = q * per
        p1 = min(npx, p0 + per)
        _scatter_range(p0, p1, origin, dirs, phat, t_hat, valid, feats, ray_norm, lo, s, dims, sigma,
                       radius, acc[q], wsum[q], nrays[q])
    return acc.sum(axis=0), wsum.sum(axis=0), nrays.sum(axis=0)


@nb.njit(cache=True)
def _pixel_bbox(R, t, fx, fy, cx, cy, clo, chi):
    # Image-space bounding box of the part of a voxel in front of the camera.
    cam = np.empty((8, 3))
    for b in range(8):
        px = chi[0] if b & 1 else clo[0]
        py = chi[1] if b & 2 else clo[1]
        pz = chi[2] if b & 4 else clo[2]
        for r in range(3):
            cam[b, r] = R[r, 0] * px + R[r, 1] * py + R[r, 2] * pz + t[r]
    xmin = _INF
    xmax = -_INF
    ymin = _INF
    ymax = -_INF
    found = False
    for b in range(8):
        if cam[b, 2] >= _Z_EPS:
            u = fx * cam[b, 0] / cam[b, 2] + cx
            v = fy * cam[b, 1] / cam[b, 2] + cy
            xmin = min(xmin, u)
            xmax = max(xmax, u)
            ymin = min(ymin, v)
            ymax = max(ymax, v)
            found = True
    for b in range(8):
        for bit in (1, 2, 4):
            if b & bit:
                continue
            e = b | bit
            za = cam[b, 2]
            zb = cam[e, 2]
            if (za - _Z_EPS) * (zb - _Z_EPS) < 0.0:
                f = (_Z_EPS - za) / (zb - za)
                X = cam[b, 0] + f * (cam[e, 0] - cam[b, 0])
                Y = cam[b, 1] + f * (cam[e, 1] - cam[b, 1])
                u = fx * X / _Z_EPS + cx
                v = fy * Y / _Z_EPS + cy
                xmin = min(xmin, u)
                xmax = max(xmax, u)
                ymin = min(ymin, v)
                ymax = max(ymax, v)
                found = True
    return found, xmin, xmax, ymin, ymax


@nb.njit(cache=True, parallel=True)
def gather(origin, dirs, phat, valid, feats, ray_norm, R, t, fx, fy, cx, cy, W, H, lo, s, dims, sigma, radius,
           compensated):
    """Voxel-parallel dual of the scatter: each voxel collects every pixel whose ray pierces it."""
    nx = dims[0]
    ny = dims[1]
    nz = dims[2]
    nvox = nx * ny * nz
    C = feats.shape[1]
    acc = np.zeros((nvox, C))
    wsum = np.zeros(nvox)
    nrays = np.zeros(nvox, np.int64)
    r2 = radius * radius * (1.0 + _RADIUS_SLACK)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for flat in nb.prange(nvox):
        i = flat // (ny * nz)
        j = (flat // nz) % ny
        k = flat % nz
        clo = np.empty(3)
        chi = np.empty(3)
        ctr = np.empty(3)
        clo[0] = lo[0] + i * s
        clo[1] = lo[1] + j * s
        clo[2] = lo[2] + k * s
        chi[0] = lo[0] + (i + 1) * s
        chi[1] = lo[1] + (j + 1) * s
        chi[2] = lo[2] + (k + 1) * s
        ctr[0] = lo[0] + (i + 0.5) * s
        ctr[1] = lo[1] + (j + 0.5) * s
        ctr[2] = lo[2] + (k + 0.5) * s
        found, xmin, xmax, ymin, ymax = _pixel_bbox(R, t, fx, fy, cx, cy, clo, chi)
        if not found:
            continue
        if xmax < -1.0 or ymax < -1.0 or xmin > W or ymin > H:
            continue
        x0 = max(0, int(math.ceil(max(xmin, -1.0) - 1e-6)))
        x1 = min(W - 1, int(math.floor(min(xmax, W + 1.0) + 1e-6)))
        y0 = max(0, int(math.ceil(max(ymin, -1.0) - 1e-6)))
        y1 = min(H - 1, int(math.floor(min(ymax, H + 1.0) + 1e-6)))
        acc_v = np.zeros(C)
        comp_v = np.zeros(C)
        w_v = 0.0
        w_c = 0.0
        cnt = 0
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                p = y * W + x
                if not valid[p]:
                    continue
                dx = ctr[0] - phat[p, 0]
                dy = ctr[1] - phat[p, 1]
                dz = ctr[2] - phat[p, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 > r2:
                    continue
                t_in, t_out = ray_box(origin, dirs[p], clo, chi)
                if t_in < 0.0:
                    t_in = 0.0
                if not t_out > t_in:
                    continue
                w = math.exp(-d2 * inv2s2)
                if ray_norm[p] > 0.0:
                    w = w / ray_norm[p]
                cnt += 1
                if compensated:
                    for c in range(C):
                        yv = w * feats[p, c] - comp_v[c]
                        tv = acc_v[c] + yv
                        comp_v[c] = (tv - acc_v[c]) - yv
                        acc_v[c] = tv
                    yw = w - w_c
                    tw = w_v + yw
                    w_c = (tw - w_v) - yw
                    w_v = tw
                else:
                    for c in range(C):
                        acc_v[c] += w * feats[p, c]
                    w_v += w
        if cnt > 0:
            for c in range(C):
                acc[flat, c] = acc_v[c]
            wsum[flat] = w_v
            nrays[flat] = cnt
    return acc, wsum, nrays


@nb.njit(cache=True, parallel=True)
def raycast_labels(origins, dirs, labels, lo, s, dims, empty, unknown):
    """First non-empty voxel along each ray: (entry t, label, flat index); label -1 if none."""
    npx = dirs.shape[0]
    t_hit = np.full(npx, np.nan)
    lab = np.full(npx, -1, np.int64)
    hit = np.full(npx, -1, np.int64)
    ny = dims[1]
    nz = dims[2]
    cap = dims[0] + dims[1] + dims[2] + 3
    for p in nb.prange(npx):
        idx = np.empty((cap, 3), np.int64)
        tt = np.empty((cap, 2))
        n = dda(origins[p], dirs[p], lo, s, dims, 0.0, _INF, idx, tt)
        for m in range(n):
            v = labels[idx[m, 0], idx[m, 1], idx[m, 2]]
            if v != empty and v != unknown:
                t_hit[p] = tt[m, 0]
                lab[p] = v
                hit[p] = (idx[m, 0] * ny + idx[m, 1]) * nz + idx[m, 2]
                break
    return t_hit, lab, hit

