"""Pure NumPy implementations of the rasterization kernels.

This backend is the import-time fallback when the compiled extension is
unavailable. Both backends implement the same sequential semantics:

* ``rasterize_zbuffer``: points sorted by (depth, input index), first write
  per pixel wins.
* ``blend_forward``: per pixel, front-to-back over the depth-ordered tile
  list; a gaussian contributes, transmittance updates, then blending stops
  once transmittance drops below ``stop_t``. Contributions with
  ``alpha < alpha_min`` are skipped without touching transmittance.
* ``blend_backward``: replays the forward decisions and accumulates analytic
  gradients for 2D means, conics, opacities and colors.

The NumPy versions vectorize over the pixels of one tile and walk gaussians
in chunks, carrying transmittance between chunks so the composite equals the
sequential loop (skipped entries multiply transmittance by exactly 1.0).
"""

from __future__ import annotations

import numpy as np

_CHUNK = 512


def rasterize_zbuffer(px, py, depth, values, height, width):
    """Z-buffer scatter of point records into an image grid.

    px, py: int pixel coordinates, already in bounds.
    depth: (N,) camera depths; values: (N, K) payload per point.
    Returns (out (H, W, K) with zeros where empty, filled (H, W) bool).
    Per pixel the smallest (depth, input index) wins.
    """
    px = np.asarray(px, dtype=np.int64)
    py = np.asarray(py, dtype=np.int64)
    depth = np.asarray(depth, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != px.shape[0]:
        raise ValueError("values must be (N, K) matching the coordinate count")
    k = values.shape[1]
    out = np.zeros((height, width, k))
    filled = np.zeros((height, width), dtype=bool)
    if px.size == 0:
        return out, filled
    order = np.argsort(depth, kind="stable")
    pix = (py * width + px)[order]
    uniq, first = np.unique(pix, return_index=True)
    winners = order[first]
    out.reshape(-1, k)[uniq] = values[winners]
    filled.reshape(-1)[uniq] = True
    return out, filled


def _tile_grid(tile_index, tiles_x, tile_size, height, width):
    y0 = (tile_index // tiles_x) * tile_size
    x0 = (tile_index % tiles_x) * tile_size
    ys = np.arange(y0, min(y0 + tile_size, height))
    xs = np.arange(x0, min(x0 + tile_size, width))
    pyv = np.repeat(ys, xs.size).astype(np.float64)
    pxv = np.tile(xs, ys.size).astype(np.float64)
    return ys, xs, pyv, pxv


def _chunk_pass(ids, pxv, pyv, means2d, conics, opacities, t_in, alpha_min, stop_t):
    """Evaluate one gaussian chunk against all tile pixels.

    Returns per-entry alpha, gaussian value, exclusive transmittance,
    contributor mask, blend weight, 1-based last-contributor index and the
    carried-out transmittance.
    """
    mx = means2d[ids, 0][:, None]
    my = means2d[ids, 1][:, None]
    dx = pxv[None, :] - mx
    dy = pyv[None, :] - my
    ca = conics[ids, 0][:, None]
    cb = conics[ids, 1][:, None]
    cc = conics[ids, 2][:, None]
    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
    gval = np.exp(power)
    alpha = opacities[ids][:, None] * gval
    valid = (power <= 0.0) & (alpha >= alpha_min)
    a = np.where(valid, alpha, 0.0)
    t_incl = t_in[None, :] * np.cumprod(1.0 - a, axis=0)
    t_excl = np.empty_like(t_incl)
    t_excl[0] = t_in
    t_excl[1:] = t_incl[:-1]
    alive = t_excl >= stop_t
    contrib = valid & alive
    w = np.where(alive, a, 0.0) * t_excl
    steps = np.arange(1, len(ids) + 1)[:, None]
    last = np.max(np.where(contrib, steps, 0), axis=0)
    gather = np.maximum(last - 1, 0)[None, :]
    t_out = np.where(last > 0, np.take_along_axis(t_incl, gather, axis=0)[0], t_in)
    return a, gval, t_excl, contrib, w, last, t_out


def blend_forward(means2d, conics, opacities, colors, background, tile_ranges,
                  point_list, height, width, tile_size, alpha_min, stop_t):
    """Front-to-back alpha blending over tile-binned gaussians.

    Returns (image (H, W, 3) with background composited, final transmittance
    (H, W), n_contrib (H, W) int32 = 1-based in-range index of the last
    contributing gaussian).
    """
    means2d = np.ascontiguousarray(means2d, dtype=np.float64)
    conics = np.ascontiguousarray(conics, dtype=np.float64)
    opacities = np.ascontiguousarray(opacities, dtype=np.float64)
    colors = np.ascontiguousarray(colors, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    image = np.empty((height, width, 3))
    final_t = np.empty((height, width))
    n_contrib = np.zeros((height, width), dtype=np.int32)
    tiles_x = (width + tile_size - 1) // tile_size
    for t in range(tile_ranges.shape[0]):
        ys, xs, pyv, pxv = _tile_grid(t, tiles_x, tile_size, height, width)
        p = pyv.size
        s, e = int(tile_ranges[t, 0]), int(tile_ranges[t, 1])
        t_cur = np.ones(p)
        color = np.zeros((p, 3))
        nc = np.zeros(p, dtype=np.int64)
        pos = s
        while pos < e:
            ids = point_list[pos:min(pos + _CHUNK, e)]
            a, gval, t_excl, contrib, w, last, t_out = _chunk_pass(
                ids, pxv, pyv, means2d, conics, opacities, t_cur, alpha_min, stop_t)
            color += np.einsum("np,nc->pc", w, colors[ids])
            nc = np.where(last > 0, pos - s + last, nc)
            t_cur = t_out
            pos += len(ids)
            if stop_t > 0.0 and np.all(t_cur < stop_t):
                break
        block = color + t_cur[:, None] * background[None, :]
        image[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1] = block.reshape(ys.size, xs.size, 3)
        final_t[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1] = t_cur.reshape(ys.size, xs.size)
        n_contrib[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1] = nc.reshape(ys.size, xs.size).astype(np.int32)
    return image, final_t, n_contrib


def blend_backward(means2d, conics, opacities, colors, background, tile_ranges,
                   point_list, height, width, tile_size, alpha_min, stop_t,
                   final_t, n_contrib, grad_image):
    """Analytic gradients of ``sum(grad_image * blend_forward(...))``.

    Walks each tile back-to-front with the composite-behind recurrence; the
    background acts as an opaque terminal layer so its contribution through
    the final transmittance is included in the alpha gradients.
    """
    means2d = np.ascontiguousarray(means2d, dtype=np.float64)
    conics = np.ascontiguousarray(conics, dtype=np.float64)
    opacities = np.ascontiguousarray(opacities, dtype=np.float64)
    colors = np.ascontiguousarray(colors, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    grad_image = np.asarray(grad_image, dtype=np.float64)
    n = means2d.shape[0]
    grad_means2d = np.zeros((n, 2))
    grad_conics = np.zeros((n, 3))
    grad_opacities = np.zeros(n)
    grad_colors = np.zeros((n, 3))
    tiles_x = (width + tile_size - 1) // tile_size
    for t in range(tile_ranges.shape[0]):
        s, e = int(tile_ranges[t, 0]), int(tile_ranges[t, 1])
        if s >= e:
            continue
        ys, xs, pyv, pxv = _tile_grid(t, tiles_x, tile_size, height, width)
        p = pyv.size
        g_pix = grad_image[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1].reshape(p, 3)
        # Forward sweep to recover per-chunk entry transmittances.
        chunk_starts = list(range(s, e, _CHUNK))
        carries = []
        t_cur = np.ones(p)
        for pos in chunk_starts:
            carries.append(t_cur)
            ids = point_list[pos:min(pos + _CHUNK, e)]
            t_cur = _chunk_pass(ids, pxv, pyv, means2d, conics, opacities,
                                t_cur, alpha_min, stop_t)[6]
        behind = np.tile(background, (p, 1))
        for pos, t_in in zip(reversed(chunk_starts), reversed(carries)):
            ids = point_list[pos:min(pos + _CHUNK, e)]
            a, gval, t_excl, contrib, w, _, _ = _chunk_pass(
                ids, pxv, pyv, means2d, conics, opacities, t_in, alpha_min, stop_t)
            for j in range(len(ids) - 1, -1, -1):
                act = contrib[j]
                if not act.any():
                    continue
                gid = int(ids[j])
                aj = a[j]
                grad_colors[gid] += w[j] @ g_pix
                diff = colors[gid][None, :] - behind
                grad_alpha = np.where(act, t_excl[j] * np.einsum("pc,pc->p", g_pix, diff), 0.0)
                grad_opacities[gid] += grad_alpha @ gval[j]
                gp = grad_alpha * aj
                dxj = pxv - means2d[gid, 0]
                dyj = pyv - means2d[gid, 1]
                ca, cb, cc = conics[gid]
                grad_means2d[gid, 0] += gp @ (ca * dxj + cb * dyj)
                grad_means2d[gid, 1] += gp @ (cc * dyj + cb * dxj)
                grad_conics[gid, 0] += gp @ (-0.5 * dxj * dxj)
                grad_conics[gid, 1] += gp @ (-dxj * dyj)
                grad_conics[gid, 2] += gp @ (-0.5 * dyj * dyj)
                upd = colors[gid][None, :] * aj[:, None] + (1.0 - aj)[:, None] * behind
                behind = np.where(act[:, None], upd, behind)
    return grad_means2d, grad_conics, grad_opacities, grad_colors
