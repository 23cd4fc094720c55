"""Numba compositing kernels for the tile and reference rasterizers.

Both rasterizers share one per-pixel weight rule: a splat contributes only when
its Mahalanobis power is at most POWER_CUTOFF (the 3-sigma ellipse, evaluated
per pixel).  The tile binning radius is derived from the same 3 sigma, so the
binning is exactly conservative and the two pipelines differ only in early
termination; that difference is bounded by the transmittance cutoff.

Tiles own disjoint pixel blocks, so the parallel loops are race-free and the
output is bit-identical regardless of thread count.
"""

import numpy as np
from numba import njit, prange

PAYLOAD_DIM = 10  # group one-hot (3), camera distance (1), normal (3), albedo (3)


@njit(cache=True)
def _tile_lists(mean2d, radius, height, width, tile):
    """Bin points into tiles by 3-sigma bbox overlap; candidate lists keep
    ascending point order so a later stable depth sort is fully deterministic."""
    n = mean2d.shape[0]
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n_tiles = tiles_x * tiles_y

    counts = np.zeros(n_tiles, dtype=np.int64)
    for k in range(n):
        r = radius[k]
        tx0 = max(0, int(np.floor((mean2d[k, 0] - r) / tile)))
        tx1 = min(tiles_x - 1, int(np.floor((mean2d[k, 0] + r) / tile)))
        ty0 = max(0, int(np.floor((mean2d[k, 1] - r) / tile)))
        ty1 = min(tiles_y - 1, int(np.floor((mean2d[k, 1] + r) / tile)))
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                counts[ty * tiles_x + tx] += 1

    offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    for t in range(n_tiles):
        offsets[t + 1] = offsets[t] + counts[t]
    lists = np.empty(offsets[n_tiles], dtype=np.int64)
    cursor = offsets[:-1].copy()
    for k in range(n):
        r = radius[k]
        tx0 = max(0, int(np.floor((mean2d[k, 0] - r) / tile)))
        tx1 = min(tiles_x - 1, int(np.floor((mean2d[k, 0] + r) / tile)))
        ty0 = max(0, int(np.floor((mean2d[k, 1] - r) / tile)))
        ty1 = min(tiles_y - 1, int(np.floor((mean2d[k, 1] + r) / tile)))
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                t = ty * tiles_x + tx
                lists[cursor[t]] = k
                cursor[t] += 1
    return offsets, lists, tiles_x, tiles_y


@njit(cache=True, parallel=True, nogil=True)
def composite_tiles(
    mean2d,
    conic,
    radius,
    depth,
    opacity,
    payload,
    height,
    width,
    tile,
    alpha_clamp,
    t_cutoff,
    power_cutoff,
):
    """Front-to-back tile compositing.  Returns the accumulated payload, the
    final transmittance, and the per-pixel count of contributing splats (the
    count feeds the optional gradient trace)."""
    offsets, lists, tiles_x, tiles_y = _tile_lists(mean2d, radius, height, width, tile)

    accum = np.zeros((height, width, PAYLOAD_DIM))
    t_final = np.ones((height, width))
    counts = np.zeros((height, width), dtype=np.int32)

    for t in prange(tiles_x * tiles_y):
        lo, hi = offsets[t], offsets[t + 1]
        if lo == hi:
            continue
        cands = lists[lo:hi]
        order = np.argsort(depth[cands], kind="mergesort")  # stable: ties keep index order
        ty, tx = divmod(t, tiles_x)
        y0, x0 = ty * tile, tx * tile
        y1, x1 = min(y0 + tile, height), min(x0 + tile, width)
        for i in range(y0, y1):
            py = i + 0.5
            for j in range(x0, x1):
                px = j + 0.5
                trans = 1.0
                m = 0
                for o in range(order.shape[0]):
                    k = cands[order[o]]
                    dx = px - mean2d[k, 0]
                    dy = py - mean2d[k, 1]
                    power = 0.5 * (conic[k, 0] * dx * dx + conic[k, 2] * dy * dy) + conic[k, 1] * dx * dy
                    if power > power_cutoff:
                        continue
                    alpha = opacity[k] * np.exp(-power)
                    if alpha > alpha_clamp:
                        alpha = alpha_clamp
                    w = alpha * trans
                    for c in range(PAYLOAD_DIM):
                        accum[i, j, c] += w * payload[k, c]
                    trans *= 1.0 - alpha
                    m += 1
                    if trans < t_cutoff:
                        break
                t_final[i, j] = trans
                counts[i, j] = m
    return accum, t_final, counts


@njit(cache=True, parallel=True, nogil=True)
def fill_trace(
    mean2d,
    conic,
    radius,
    depth,
    opacity,
    height,
    width,
    tile,
    alpha_clamp,
    t_cutoff,
    power_cutoff,
    pixel_offsets,
    out_ids,
    out_alphas,
):
    """Replay of composite_tiles that records (point, alpha) per pixel in
    compositing order.  Must mirror the forward loop exactly."""
    offsets, lists, tiles_x, tiles_y = _tile_lists(mean2d, radius, height, width, tile)

    for t in prange(tiles_x * tiles_y):
        lo, hi = offsets[t], offsets[t + 1]
        if lo == hi:
            continue
        cands = lists[lo:hi]
        order = np.argsort(depth[cands], kind="mergesort")
        ty, tx = divmod(t, tiles_x)
        y0, x0 = ty * tile, tx * tile
        y1, x1 = min(y0 + tile, height), min(x0 + tile, width)
        for i in range(y0, y1):
            py = i + 0.5
            for j in range(x0, x1):
                px = j + 0.5
                cursor = pixel_offsets[i * width + j]
                trans = 1.0
                for o in range(order.shape[0]):
                    k = cands[order[o]]
                    dx = px - mean2d[k, 0]
                    dy = py - mean2d[k, 1]
                    power = 0.5 * (conic[k, 0] * dx * dx + conic[k, 2] * dy * dy) + conic[k, 1] * dx * dy
                    if power > power_cutoff:
                        continue
                    alpha = opacity[k] * np.exp(-power)
                    if alpha > alpha_clamp:
                        alpha = alpha_clamp
                    out_ids[cursor] = k
                    out_alphas[cursor] = alpha
                    cursor += 1
                    trans *= 1.0 - alpha
                    if trans < t_cutoff:
                        break


@njit(cache=True)
def composite_backward(
    offsets,
    ids,
    alphas,
    t_final,
    payload,
    conic,
    mean2d,
    opacity,
    g_payload_img,
    g_alpha_img,
    height,
    width,
    alpha_clamp,
    max_len,
):
    """Reverse of composite_tiles over a recorded trace.

    Walks each pixel's contribution list back-to-front, reconstructing the
    transmittance prefix and the suffix payload sum, and accumulates adjoints
    for payloads, opacities, conics, and screen means.  Splats whose alpha hit
    the clamp get no opacity/shape gradient (the clamp is flat there)."""
    m = payload.shape[0]
    g_payload = np.zeros((m, PAYLOAD_DIM))
    g_conic = np.zeros((m, 3))
    g_mean = np.zeros((m, 2))
    g_opacity = np.zeros(m)
    trans_buf = np.empty(max_len)
    suffix = np.empty(PAYLOAD_DIM)
    for i in range(height):
        py = i + 0.5
        for j in range(width):
            p = i * width + j
            lo, hi = offsets[p], offsets[p + 1]
            if lo == hi:
                continue
            tr = 1.0
            for c_i in range(hi - lo):
                trans_buf[c_i] = tr
                tr *= 1.0 - alphas[lo + c_i]
            tf = t_final[i, j]
            ga_img = g_alpha_img[i, j]
            px = j + 0.5
            for c in range(PAYLOAD_DIM):
                suffix[c] = 0.0
            for c_i in range(hi - lo - 1, -1, -1):
                k = ids[lo + c_i]
                a = alphas[lo + c_i]
                t_here = trans_buf[c_i]
                w = a * t_here
                g_a = ga_img * tf / (1.0 - a)
                for c in range(PAYLOAD_DIM):
                    gc = g_payload_img[i, j, c]
                    g_payload[k, c] += w * gc
                    g_a += gc * (t_here * payload[k, c] - suffix[c] / (1.0 - a))
                    suffix[c] += w * payload[k, c]
                if a < alpha_clamp:
                    g_opacity[k] += g_a * a / opacity[k]
                    g_pow = -g_a * a
                    dx = px - mean2d[k, 0]
                    dy = py - mean2d[k, 1]
                    g_conic[k, 0] += g_pow * 0.5 * dx * dx
                    g_conic[k, 1] += g_pow * dx * dy
                    g_conic[k, 2] += g_pow * 0.5 * dy * dy
                    g_mean[k, 0] -= g_pow * (conic[k, 0] * dx + conic[k, 1] * dy)
                    g_mean[k, 1] -= g_pow * (conic[k, 1] * dx + conic[k, 2] * dy)
    return g_payload, g_conic, g_mean, g_opacity


@njit(cache=True, parallel=True, nogil=True)
def composite_reference(
    order,
    bbox,
    mean2d,
    conic,
    opacity,
    payload,
    height,
    width,
    alpha_clamp,
    power_cutoff,
):
    """Brute-force oracle: every pixel walks the full depth-sorted point list
    with no tiles and no early termination.  The per-row/column bbox skip only
    removes points that are provably past 3 sigma (power > cutoff), so it
    cannot change the output."""
    accum = np.zeros((height, width, PAYLOAD_DIM))
    t_final = np.ones((height, width))
    n = order.shape[0]

    for i in prange(height):
        row_cands = np.empty(n, dtype=np.int64)
        m = 0
        for o in range(n):
            k = order[o]
            if bbox[k, 2] <= i <= bbox[k, 3]:
                row_cands[m] = k
                m += 1
        py = i + 0.5
        for j in range(width):
            px = j + 0.5
            trans = 1.0
            for c_idx in range(m):
                k = row_cands[c_idx]
                if j < bbox[k, 0] or j > bbox[k, 1]:
                    continue
                dx = px - mean2d[k, 0]
                dy = py - mean2d[k, 1]
                power = 0.5 * (conic[k, 0] * dx * dx + conic[k, 2] * dy * dy) + conic[k, 1] * dx * dy
                if power > power_cutoff:
                    continue
                alpha = opacity[k] * np.exp(-power)
                if alpha > alpha_clamp:
                    alpha = alpha_clamp
                w = alpha * trans
                for c in range(PAYLOAD_DIM):
                    accum[i, j, c] += w * payload[k, c]
                trans *= 1.0 - alpha
            t_final[i, j] = trans
    return accum, t_final
