"""Hot numeric kernels with numba and numpy implementations.

Each kernel ``foo`` has ``foo_nb`` (numba loops) and ``foo_np`` (vectorized
numpy / scipy). The public name is bound to one of them at import time
according to :mod:`gesturepipe._accel`. Both variants must agree exactly;
``tests/test_kernels.py`` checks that.
"""
from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# Euclidean clustering: connected components of the epsilon graph
# ---------------------------------------------------------------------------


@njit(cache=True)
def _uf_find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(cache=True)
def cluster_labels_nb(points, eps):
    """Component label per point (labels are the smallest member index)."""
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int64)
    if n == 0:
        return labels
    eps2 = eps * eps
    cell = np.empty((n, 3), dtype=np.int64)
    for i in range(n):
        for a in range(3):
            cell[i, a] = np.int64(np.floor(np.float64(points[i, a]) / eps))
    lo = np.empty(3, dtype=np.int64)
    dim = np.empty(3, dtype=np.int64)
    for a in range(3):
        lo[a] = cell[:, a].min()
        dim[a] = cell[:, a].max() - lo[a] + 1
    keys = np.empty(n, dtype=np.int64)
    for i in range(n):
        keys[i] = ((cell[i, 0] - lo[0]) * dim[1] + (cell[i, 1] - lo[1])) * dim[2] + (cell[i, 2] - lo[2])
    order = np.argsort(keys, kind="mergesort")
    skeys = keys[order]

    parent = np.arange(n)
    for i in range(n):
        xi = np.float64(points[i, 0])
        yi = np.float64(points[i, 1])
        zi = np.float64(points[i, 2])
        for dx in range(-1, 2):
            cx = cell[i, 0] - lo[0] + dx
            if cx < 0 or cx >= dim[0]:
                continue
            for dy in range(-1, 2):
                cy = cell[i, 1] - lo[1] + dy
                if cy < 0 or cy >= dim[1]:
                    continue
                for dz in range(-1, 2):
                    cz = cell[i, 2] - lo[2] + dz
                    if cz < 0 or cz >= dim[2]:
                        continue
                    key = (cx * dim[1] + cy) * dim[2] + cz
                    start = np.searchsorted(skeys, key, side="left")
                    stop = np.searchsorted(skeys, key, side="right")
                    for s in range(start, stop):
                        j = order[s]
                        if j <= i:
                            continue
                        ddx = np.float64(points[j, 0]) - xi
                        ddy = np.float64(points[j, 1]) - yi
                        ddz = np.float64(points[j, 2]) - zi
                        if ddx * ddx + ddy * ddy + ddz * ddz <= eps2:
                            ri = _uf_find(parent, i)
                            rj = _uf_find(parent, j)
                            if ri != rj:
                                if ri < rj:
                                    parent[rj] = ri
                                else:
                                    parent[ri] = rj
    for i in range(n):
        labels[i] = _uf_find(parent, i)
    return labels


def cluster_labels_np(points, eps):
    n = len(points)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    pts = np.asarray(points, dtype=np.float64)
    pairs = cKDTree(pts).query_pairs(eps, output_type="ndarray")
    graph = coo_matrix(
        (np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])), shape=(n, n)
    )
    _, comp = connected_components(graph, directed=False)
    # relabel each component by its smallest member index
    first = np.full(comp.max() + 1, n, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(n))
    return first[comp]


# ---------------------------------------------------------------------------
# Ray casting against capsules and a ground plane
# ---------------------------------------------------------------------------


@njit(cache=True)
def _ray_sphere(ox, oy, oz, dx, dy, dz, cx, cy, cz, r):
    px = ox - cx
    py = oy - cy
    pz = oz - cz
    b = px * dx + py * dy + pz * dz
    c = px * px + py * py + pz * pz - r * r
    h = b * b - c
    if h < 0.0:
        return np.inf
    t = -b - np.sqrt(h)
    if t <= 0.0:
        return np.inf
    return t


@njit(cache=True)
def raycast_nb(origin, dirs, capsules, ground_z, ground_range):
    """Nearest hit distance and id per ray.

    ``capsules`` rows are ``(ax, ay, az, bx, by, bz, radius)``. Ground hits
    get id ``len(capsules)``; misses get ``inf`` and id ``-1``. Pass a NaN
    ``ground_z`` to disable the ground plane.
    """
    n = dirs.shape[0]
    k = capsules.shape[0]
    t_out = np.full(n, np.inf)
    id_out = np.full(n, -1, dtype=np.int64)
    ox, oy, oz = origin[0], origin[1], origin[2]
    for i in range(n):
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        best = np.inf
        best_id = -1
        for c in range(k):
            ax, ay, az = capsules[c, 0], capsules[c, 1], capsules[c, 2]
            bx, by, bz = capsules[c, 3], capsules[c, 4], capsules[c, 5]
            r = capsules[c, 6]
            t = _ray_sphere(ox, oy, oz, dx, dy, dz, ax, ay, az, r)
            t2 = _ray_sphere(ox, oy, oz, dx, dy, dz, bx, by, bz, r)
            if t2 < t:
                t = t2
            # finite cylinder body
            sx, sy, sz = bx - ax, by - ay, bz - az
            wx, wy, wz = ox - ax, oy - ay, oz - az
            baba = sx * sx + sy * sy + sz * sz
            bard = sx * dx + sy * dy + sz * dz
            baoa = sx * wx + sy * wy + sz * wz
            rdoa = dx * wx + dy * wy + dz * wz
            oaoa = wx * wx + wy * wy + wz * wz
            qa = baba - bard * bard
            if qa > 1e-12 * baba:
                qb = baba * rdoa - baoa * bard
                qc = baba * oaoa - baoa * baoa - r * r * baba
                h = qb * qb - qa * qc
                if h >= 0.0:
                    tb = (-qb - np.sqrt(h)) / qa
                    y = baoa + tb * bard
                    if tb > 0.0 and y > 0.0 and y < baba and tb < t:
                        t = tb
            if t < best:
                best = t
                best_id = c
        if ground_z == ground_z and dz < 0.0:
            tg = (ground_z - oz) / dz
            horiz = tg * np.sqrt(dx * dx + dy * dy)
            if tg > 0.0 and horiz <= ground_range and tg < best:
                best = tg
                best_id = k
        t_out[i] = best
        id_out[i] = best_id
    return t_out, id_out


def _ray_sphere_np(o, d, centers, r):
    p = o[None, None, :] - centers[None, :, :]  # (1,K,3)
    b = np.einsum("rk,nk->rn", d, p[0])
    c = (p[0] ** 2).sum(-1)[None, :] - r[None, :] ** 2
    h = b * b - c
    with np.errstate(invalid="ignore"):
        t = -b - np.sqrt(h)
    return np.where((h >= 0) & (t > 0), t, np.inf)


def raycast_np(origin, dirs, capsules, ground_z, ground_range):
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = len(dirs)
    k = len(capsules)
    if k:
        a = capsules[:, 0:3]
        b = capsules[:, 3:6]
        r = capsules[:, 6]
        t = np.minimum(_ray_sphere_np(origin, dirs, a, r), _ray_sphere_np(origin, dirs, b, r))
        s = b - a
        w = origin[None, :] - a
        baba = (s * s).sum(-1)[None, :]
        bard = dirs @ s.T
        baoa = (s * w).sum(-1)[None, :]
        rdoa = dirs @ w.T
        oaoa = (w * w).sum(-1)[None, :]
        qa = baba - bard * bard
        qb = baba * rdoa - baoa * bard
        qc = baba * oaoa - baoa * baoa - (r * r)[None, :] * baba
        h = qb * qb - qa * qc
        ok = (qa > 1e-12 * baba) & (h >= 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            tb = (-qb - np.sqrt(np.where(ok, h, 0.0))) / np.where(ok, qa, 1.0)
        y = baoa + tb * bard
        ok &= (tb > 0) & (y > 0) & (y < baba)
        t = np.where(ok & (tb < t), tb, t)
        best_id = np.argmin(t, axis=1)
        best = t[np.arange(n), best_id]
        best_id = np.where(np.isfinite(best), best_id, -1)
    else:
        best = np.full(n, np.inf)
        best_id = np.full(n, -1, dtype=np.int64)
    if not np.isnan(ground_z):
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = np.where(dz < 0, (ground_z - origin[2]) / dz, np.inf)
        horiz = tg * np.hypot(dirs[:, 0], dirs[:, 1])
        g = (dz < 0) & (tg > 0) & (horiz <= ground_range) & (tg < best)
        best = np.where(g, tg, best)
        best_id = np.where(g, k, best_id)
    return best, best_id.astype(np.int64)


# ---------------------------------------------------------------------------
# Nearest-depth rasterization
# ---------------------------------------------------------------------------


@njit(cache=True)
def rasterize_min_nb(rows, cols, depth, n_rows, n_cols):
    img = np.full((n_rows, n_cols), np.inf)
    for i in range(rows.shape[0]):
        r = rows[i]
        c = cols[i]
        if r < 0 or r >= n_rows or c < 0 or c >= n_cols:
            continue
        if depth[i] < img[r, c]:
            img[r, c] = depth[i]
    return img


def rasterize_min_np(rows, cols, depth, n_rows, n_cols):
    img = np.full(n_rows * n_cols, np.inf)
    keep = (rows >= 0) & (rows < n_rows) & (cols >= 0) & (cols < n_cols)
    np.minimum.at(img, rows[keep] * n_cols + cols[keep], depth[keep])
    return img.reshape(n_rows, n_cols)


# ---------------------------------------------------------------------------
# 2x2 max pooling over NHWC tensors
# ---------------------------------------------------------------------------


@njit(cache=True)
def maxpool_fwd_nb(x):
    n, h, w, c = x.shape
    out = np.empty((n, h // 2, w // 2, c), dtype=x.dtype)
    arg = np.empty((n, h // 2, w // 2, c), dtype=np.int8)
    for b in range(n):
        for i in range(h // 2):
            for j in range(w // 2):
                for k in range(c):
                    best = x[b, 2 * i, 2 * j, k]
                    bi = 0
                    v = x[b, 2 * i, 2 * j + 1, k]
                    if v > best:
                        best = v
                        bi = 1
                    v = x[b, 2 * i + 1, 2 * j, k]
                    if v > best:
                        best = v
                        bi = 2
                    v = x[b, 2 * i + 1, 2 * j + 1, k]
                    if v > best:
                        best = v
                        bi = 3
                    out[b, i, j, k] = best
                    arg[b, i, j, k] = bi
    return out, arg


@njit(cache=True)
def maxpool_bwd_nb(dy, arg):
    n, h2, w2, c = dy.shape
    dx = np.zeros((n, 2 * h2, 2 * w2, c), dtype=dy.dtype)
    for b in range(n):
        for i in range(h2):
            for j in range(w2):
                for k in range(c):
                    a = arg[b, i, j, k]
                    dx[b, 2 * i + a // 2, 2 * j + a % 2, k] = dy[b, i, j, k]
    return dx


def maxpool_fwd_np(x):
    n, h, w, c = x.shape
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    arg = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, arg


def maxpool_bwd_np(dy, arg):
    n, h2, w2, c = dy.shape
    win = np.zeros((n, h2, w2, c, 4), dtype=dy.dtype)
    np.put_along_axis(win, arg[..., None].astype(np.intp), dy[..., None], axis=-1)
    return win.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)


# ---------------------------------------------------------------------------
# col2im for same-padded stride-1 convolution (NHWC, columns ordered ki, kj, c)
# ---------------------------------------------------------------------------


@njit(cache=True)
def col2im_nb(dcols, k, c):
    n, h, w, _ = dcols.shape
    p = k // 2
    dx = np.zeros((n, h, w, c), dtype=dcols.dtype)
    for b in range(n):
        for i in range(h):
            for j in range(w):
                for di in range(k):
                    ii = i + di - p
                    if ii < 0 or ii >= h:
                        continue
                    for dj in range(k):
                        jj = j + dj - p
                        if jj < 0 or jj >= w:
                            continue
                        s = (di * k + dj) * c
                        for ch in range(c):
                            dx[b, ii, jj, ch] += dcols[b, i, j, s + ch]
    return dx


def col2im_np(dcols, k, c):
    n, h, w, _ = dcols.shape
    p = k // 2
    dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            s = (i * k + j) * c
            dxp[:, i:i + h, j:j + w, :] += dcols[..., s:s + c]
    return dxp[:, p:p + h, p:p + w, :]


if USE_NUMBA:
    cluster_labels = cluster_labels_nb
    raycast = raycast_nb
    rasterize_min = rasterize_min_nb
    maxpool_fwd = maxpool_fwd_nb
    maxpool_bwd = maxpool_bwd_nb
    col2im = col2im_nb
else:
    cluster_labels = cluster_labels_np
    raycast = raycast_np
    rasterize_min = rasterize_min_np
    maxpool_fwd = maxpool_fwd_np
    maxpool_bwd = maxpool_bwd_np
    col2im = col2im_np
