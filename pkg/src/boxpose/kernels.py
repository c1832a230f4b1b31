"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

Three kernels dominate harness runtime: Gaussian peak splatting (label
encoding), 3x3 local-maximum masks (peak decoding), and oriented-box
intersection volume (3D IoU, called ~100x per instance for symmetric
evaluation). Each exists in two versions:

* ``*_numba`` — loop code compiled with ``@njit`` (used by default),
* ``*_numpy`` — vectorized numpy fallback.

Set ``BOXPOSE_PURE_NUMPY=1`` to force the numpy path (or it is chosen
automatically when numba is not importable). The unsuffixed names are
bound to the active backend at import time. ``benchmarks/bench_kernels.py``
times the two backends against each other.
"""

import math
import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    njit = None
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and os.environ.get("BOXPOSE_PURE_NUMPY", "0").lower() not in (
    "1",
    "true",
    "yes",
)

# Gaussians are truncated at this many sigmas when splatted.
TRUNCATION_SIGMAS = 3.0

# Plane-side tolerance for polytope clipping; slivers below SLIVER_VOLUME
# count as empty.
CLIP_EPS = 1e-12
SLIVER_VOLUME = 1e-15


# ---------------------------------------------------------------------------
# Gaussian splatting
# ---------------------------------------------------------------------------


def _gaussian_splat_loops(heatmap, peaks, sigmas):
    h, w = heatmap.shape
    for p in range(peaks.shape[0]):
        cu = int(math.floor(peaks[p, 0]))
        cv = int(math.floor(peaks[p, 1]))
        sigma = sigmas[p]
        r = int(math.ceil(TRUNCATION_SIGMAS * sigma))
        inv = 1.0 / (2.0 * sigma * sigma)
        v0 = max(0, cv - r)
        v1 = min(h - 1, cv + r)
        u0 = max(0, cu - r)
        u1 = min(w - 1, cu + r)
        for v in range(v0, v1 + 1):
            dv = v - cv
            for u in range(u0, u1 + 1):
                du = u - cu
                val = math.exp(-(du * du + dv * dv) * inv)
                if val > heatmap[v, u]:
                    heatmap[v, u] = val
    return heatmap


def gaussian_splat_numpy(heatmap, peaks, sigmas):
    """Max-combine truncated Gaussians into ``heatmap`` in place.

    ``peaks`` is (n, 2) float (u, v); each Gaussian is centered on the
    floored peak cell so the peak cell carries exactly 1.0.
    """
    h, w = heatmap.shape
    for p in range(peaks.shape[0]):
        cu = int(np.floor(peaks[p, 0]))
        cv = int(np.floor(peaks[p, 1]))
        sigma = float(sigmas[p])
        r = int(np.ceil(TRUNCATION_SIGMAS * sigma))
        v0, v1 = max(0, cv - r), min(h - 1, cv + r)
        u0, u1 = max(0, cu - r), min(w - 1, cu + r)
        if v0 > v1 or u0 > u1:
            continue
        dv = (np.arange(v0, v1 + 1) - cv).astype(np.float64)
        du = (np.arange(u0, u1 + 1) - cu).astype(np.float64)
        val = np.exp(-(du[None, :] ** 2 + dv[:, None] ** 2) / (2.0 * sigma * sigma))
        region = heatmap[v0 : v1 + 1, u0 : u1 + 1]
        np.maximum(region, val, out=region)
    return heatmap


# ---------------------------------------------------------------------------
# 3x3 local-maximum mask
# ---------------------------------------------------------------------------


def _local_max_mask_loops(heatmap):
    h, w = heatmap.shape
    mask = np.zeros((h, w), dtype=np.bool_)
    for v in range(h):
        for u in range(w):
            val = heatmap[v, u]
            ok = True
            for dv in range(-1, 2):
                vv = v + dv
                if vv < 0 or vv >= h:
                    continue
                for du in range(-1, 2):
                    uu = u + du
                    if uu < 0 or uu >= w:
                        continue
                    if heatmap[vv, uu] > val:
                        ok = False
                        break
                if not ok:
                    break
            mask[v, u] = ok
    return mask


def local_max_mask_numpy(heatmap):
    """True where a cell equals the max of its 3x3 neighborhood."""
    padded = np.pad(heatmap, 1, mode="constant", constant_values=-np.inf)
    neigh = padded[0:-2, 0:-2]
    for dv in range(3):
        for du in range(3):
            if dv == 0 and du == 0:
                continue
            neigh = np.maximum(neigh, padded[dv : dv + heatmap.shape[0], du : du + heatmap.shape[1]])
    return heatmap >= neigh


# ---------------------------------------------------------------------------
# Oriented-box intersection volume (Sutherland-Hodgman clipping +
# divergence-theorem volume)
# ---------------------------------------------------------------------------

# Vertex i of a box has sign bits (bit0 -> x, bit1 -> y, bit2 -> z; set bit =
# positive half extent). Quads below are wound so normals point outward.
_FACE_IDX = np.array(
    [
        [1, 3, 7, 5],  # +x
        [0, 4, 6, 2],  # -x
        [2, 6, 7, 3],  # +y
        [0, 1, 5, 4],  # -y
        [4, 5, 7, 6],  # +z
        [0, 2, 3, 1],  # -z
    ],
    dtype=np.int64,
)

_SIGNS = np.array(
    [[(-1.0 if not (i >> k) & 1 else 1.0) for k in range(3)] for i in range(8)],
    dtype=np.float64,
)


def _box_corners(rot, trans, extents):
    return _SIGNS * (0.5 * np.asarray(extents)) @ np.asarray(rot).T + np.asarray(trans)


def _box_planes(rot, trans, extents):
    """Six halfspaces n.x <= d whose intersection is the box."""
    rot = np.asarray(rot)
    planes = np.empty((6, 4))
    for k in range(3):
        n = rot[:, k]
        c = float(n @ trans)
        planes[2 * k, :3] = n
        planes[2 * k, 3] = c + 0.5 * extents[k]
        planes[2 * k + 1, :3] = -n
        planes[2 * k + 1, 3] = -c + 0.5 * extents[k]
    return planes


def _clip_accumulate_loops(faces, planes, tol, polys, counts, start):
    """Clip each face polygon against all halfspaces; store survivors.

    ``tol`` sets the boundary convention: points with signed distance
    <= tol count as inside (positive keeps boundary faces, negative
    drops them). Returns the next free polygon slot.
    """
    maxv = polys.shape[1]
    buf = np.empty((maxv, 3))
    out = np.empty((maxv, 3))
    slot = start
    for f in range(faces.shape[0]):
        n = 4
        for k in range(4):
            for c in range(3):
                buf[k, c] = faces[f, k, c]
        for p in range(planes.shape[0]):
            nx, ny, nz, d = planes[p, 0], planes[p, 1], planes[p, 2], planes[p, 3]
            m = 0
            for k in range(n):
                k2 = (k + 1) % n
                dk = buf[k, 0] * nx + buf[k, 1] * ny + buf[k, 2] * nz - d
                dk2 = buf[k2, 0] * nx + buf[k2, 1] * ny + buf[k2, 2] * nz - d
                in_k = dk <= tol
                in_k2 = dk2 <= tol
                if in_k:
                    out[m, 0] = buf[k, 0]
                    out[m, 1] = buf[k, 1]
                    out[m, 2] = buf[k, 2]
                    m += 1
                if in_k != in_k2:
                    t = dk / (dk - dk2)
                    out[m, 0] = buf[k, 0] + t * (buf[k2, 0] - buf[k, 0])
                    out[m, 1] = buf[k, 1] + t * (buf[k2, 1] - buf[k, 1])
                    out[m, 2] = buf[k, 2] + t * (buf[k2, 2] - buf[k, 2])
                    m += 1
            n = m
            tmp = buf
            buf = out
            out = tmp
            if n == 0:
                break
        if n >= 3:
            for k in range(n):
                for c in range(3):
                    polys[slot, k, c] = buf[k, c]
            counts[slot] = n
            slot += 1
    return slot


def _intersection_volume_loops(faces_a, planes_a, faces_b, planes_b):
    # Boundary of A∩B = (∂A within B) ∪ (∂B within A). A's faces keep the
    # boundary (tol +eps) while B's drop it (tol -eps) so shared planes are
    # counted once; coincident boxes then reduce to A's own surface.
    polys = np.empty((12, 16, 3))
    counts = np.zeros(12, dtype=np.int64)
    nslot = _clip_accumulate_loops(faces_a, planes_b, CLIP_EPS, polys, counts, 0)
    nslot = _clip_accumulate_loops(faces_b, planes_a, -CLIP_EPS, polys, counts, nslot)
    if nslot == 0:
        return 0.0
    # Recenter on the surviving vertices: for a closed surface the
    # divergence sum is translation invariant, while stray coplanar
    # leftovers from exact-contact configurations collapse to ~0.
    cx = cy = cz = 0.0
    total = 0
    for s in range(nslot):
        for k in range(counts[s]):
            cx += polys[s, k, 0]
            cy += polys[s, k, 1]
            cz += polys[s, k, 2]
            total += 1
    cx /= total
    cy /= total
    cz /= total
    vol6 = 0.0
    for s in range(nslot):
        n = counts[s]
        ax = polys[s, 0, 0] - cx
        ay = polys[s, 0, 1] - cy
        az = polys[s, 0, 2] - cz
        for k in range(1, n - 1):
            bx = polys[s, k, 0] - cx
            by = polys[s, k, 1] - cy
            bz = polys[s, k, 2] - cz
            gx = polys[s, k + 1, 0] - cx
            gy = polys[s, k + 1, 1] - cy
            gz = polys[s, k + 1, 2] - cz
            vol6 += ax * (by * gz - bz * gy) - ay * (bx * gz - bz * gx) + az * (bx * gy - by * gx)
    vol = vol6 / 6.0
    if vol < SLIVER_VOLUME:
        return 0.0
    return vol


def _clip_polygon_numpy(poly, plane, tol):
    n, d = plane[:3], plane[3]
    dist = poly @ n - d
    inside = dist <= tol
    if inside.all():
        return poly
    if not inside.any():
        return poly[:0]
    out = []
    m = len(poly)
    for k in range(m):
        k2 = (k + 1) % m
        if inside[k]:
            out.append(poly[k])
        if inside[k] != inside[k2]:
            t = dist[k] / (dist[k] - dist[k2])
            out.append(poly[k] + t * (poly[k2] - poly[k]))
    return np.asarray(out)


def _intersection_volume_numpy(faces_a, planes_a, faces_b, planes_b):
    surviving = []
    for faces, planes, tol in ((faces_a, planes_b, CLIP_EPS), (faces_b, planes_a, -CLIP_EPS)):
        for f in range(faces.shape[0]):
            poly = faces[f]
            for p in range(planes.shape[0]):
                poly = _clip_polygon_numpy(poly, planes[p], tol)
                if len(poly) == 0:
                    break
            if len(poly) >= 3:
                surviving.append(poly)
    if not surviving:
        return 0.0
    center = np.concatenate(surviving).mean(axis=0)
    vol6 = 0.0
    for poly in surviving:
        q = poly - center
        vol6 += np.einsum("i,ki->", q[0], np.cross(q[1:-1], q[2:]))
    vol = vol6 / 6.0
    return 0.0 if vol < SLIVER_VOLUME else vol


def box_intersection_volume_numpy(rot_a, t_a, ext_a, rot_b, t_b, ext_b):
    """Intersection volume of two oriented boxes (numpy backend)."""
    faces_a = _box_corners(rot_a, t_a, ext_a)[_FACE_IDX]
    faces_b = _box_corners(rot_b, t_b, ext_b)[_FACE_IDX]
    planes_a = _box_planes(rot_a, t_a, ext_a)
    planes_b = _box_planes(rot_b, t_b, ext_b)
    va = float(np.prod(ext_a))
    vb = float(np.prod(ext_b))
    vol = _intersection_volume_numpy(faces_a, planes_a, faces_b, planes_b)
    return min(vol, va, vb)


if NUMBA_ENABLED:
    _gaussian_splat_jit = njit(cache=True)(_gaussian_splat_loops)
    _local_max_mask_jit = njit(cache=True)(_local_max_mask_loops)
    _clip_accumulate_jit = njit(cache=True)(_clip_accumulate_loops)

    @njit(cache=True)
    def _intersection_volume_jit(faces_a, planes_a, faces_b, planes_b):
        polys = np.empty((12, 16, 3))
        counts = np.zeros(12, dtype=np.int64)
        nslot = _clip_accumulate_jit(faces_a, planes_b, CLIP_EPS, polys, counts, 0)
        nslot = _clip_accumulate_jit(faces_b, planes_a, -CLIP_EPS, polys, counts, nslot)
        if nslot == 0:
            return 0.0
        cx = cy = cz = 0.0
        total = 0
        for s in range(nslot):
            for k in range(counts[s]):
                cx += polys[s, k, 0]
                cy += polys[s, k, 1]
                cz += polys[s, k, 2]
                total += 1
        cx /= total
        cy /= total
        cz /= total
        vol6 = 0.0
        for s in range(nslot):
            n = counts[s]
            ax = polys[s, 0, 0] - cx
            ay = polys[s, 0, 1] - cy
            az = polys[s, 0, 2] - cz
            for k in range(1, n - 1):
                bx = polys[s, k, 0] - cx
                by = polys[s, k, 1] - cy
                bz = polys[s, k, 2] - cz
                gx = polys[s, k + 1, 0] - cx
                gy = polys[s, k + 1, 1] - cy
                gz = polys[s, k + 1, 2] - cz
                vol6 += (
                    ax * (by * gz - bz * gy)
                    - ay * (bx * gz - bz * gx)
                    + az * (bx * gy - by * gx)
                )
        vol = vol6 / 6.0
        if vol < SLIVER_VOLUME:
            return 0.0
        return vol

    def gaussian_splat_numba(heatmap, peaks, sigmas):
        return _gaussian_splat_jit(heatmap, peaks, sigmas)

    def local_max_mask_numba(heatmap):
        return _local_max_mask_jit(heatmap)

    def box_intersection_volume_numba(rot_a, t_a, ext_a, rot_b, t_b, ext_b):
        faces_a = _box_corners(rot_a, t_a, ext_a)[_FACE_IDX]
        faces_b = _box_corners(rot_b, t_b, ext_b)[_FACE_IDX]
        planes_a = _box_planes(rot_a, t_a, ext_a)
        planes_b = _box_planes(rot_b, t_b, ext_b)
        va = float(np.prod(ext_a))
        vb = float(np.prod(ext_b))
        vol = _intersection_volume_jit(faces_a, planes_a, faces_b, planes_b)
        return min(vol, va, vb)

    gaussian_splat = gaussian_splat_numba
    local_max_mask = local_max_mask_numba
    box_intersection_volume = box_intersection_volume_numba
else:
    gaussian_splat_numba = None
    local_max_mask_numba = None
    box_intersection_volume_numba = None

    gaussian_splat = gaussian_splat_numpy
    local_max_mask = local_max_mask_numpy
    box_intersection_volume = box_intersection_volume_numpy
