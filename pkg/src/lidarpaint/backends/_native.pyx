# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the rasterization kernels.

Semantics match ``lidarpaint.backends.reference`` exactly; see that module
for the contract. These versions run the per-pixel loops in C.
"""

import numpy as np

cimport numpy as cnp

from libc.math cimport exp

cnp.import_array()


def rasterize_zbuffer(px, py, depth, values, Py_ssize_t height, Py_ssize_t width):
    px_arr = np.ascontiguousarray(px, dtype=np.int64)
    py_arr = np.ascontiguousarray(py, dtype=np.int64)
    depth_arr = np.ascontiguousarray(depth, dtype=np.float64)
    values_arr = np.ascontiguousarray(values, dtype=np.float64)
    if values_arr.ndim != 2 or values_arr.shape[0] != px_arr.shape[0]:
        raise ValueError("values must be (N, K) matching the coordinate count")
    cdef Py_ssize_t k = values_arr.shape[1]
    out = np.zeros((height, width, k))
    filled = np.zeros((height, width), dtype=bool)
    if px_arr.shape[0] == 0:
        return out, filled
    order_arr = np.ascontiguousarray(np.argsort(depth_arr, kind="stable"), dtype=np.int64)

    cdef cnp.int64_t[::1] order = order_arr
    cdef cnp.int64_t[::1] pxs = px_arr
    cdef cnp.int64_t[::1] pys = py_arr
    cdef double[:, ::1] vals = values_arr
    cdef double[:, :, ::1] out_v = out
    cdef cnp.uint8_t[:, ::1] filled_v = filled.view(np.uint8)
    cdef Py_ssize_t i, j, p, x, y
    for i in range(order.shape[0]):
        p = order[i]
        x = pxs[p]
        y = pys[p]
        if filled_v[y, x]:
            continue
        filled_v[y, x] = 1
        for j in range(k):
            out_v[y, x, j] = vals[p, j]
    return out, filled


def blend_forward(means2d, conics, opacities, colors, background, tile_ranges,
                  point_list, Py_ssize_t height, Py_ssize_t width,
                  Py_ssize_t tile_size, double alpha_min, double stop_t):
    cdef double[:, ::1] m2d = np.ascontiguousarray(means2d, dtype=np.float64)
    cdef double[:, ::1] con = np.ascontiguousarray(conics, dtype=np.float64)
    cdef double[::1] op = np.ascontiguousarray(opacities, dtype=np.float64)
    cdef double[:, ::1] col = np.ascontiguousarray(colors, dtype=np.float64)
    cdef double[::1] bg = np.ascontiguousarray(background, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] ranges = np.ascontiguousarray(tile_ranges, dtype=np.int64)
    cdef cnp.int64_t[::1] plist = np.ascontiguousarray(point_list, dtype=np.int64)

    image = np.empty((height, width, 3))
    final_t = np.empty((height, width))
    n_contrib = np.zeros((height, width), dtype=np.int32)
    cdef double[:, :, ::1] img = image
    cdef double[:, ::1] ft = final_t
    cdef cnp.int32_t[:, ::1] nc = n_contrib

    cdef Py_ssize_t tiles_x = (width + tile_size - 1) // tile_size
    cdef Py_ssize_t t, s, e, x0, y0, x1, y1, ix, iy, j, g, last
    cdef double tcur, c0, c1, c2, dx, dy, power, a, w
    for t in range(ranges.shape[0]):
        s = ranges[t, 0]
        e = ranges[t, 1]
        y0 = (t // tiles_x) * tile_size
        x0 = (t % tiles_x) * tile_size
        y1 = min(y0 + tile_size, height)
        x1 = min(x0 + tile_size, width)
        for iy in range(y0, y1):
            for ix in range(x0, x1):
                tcur = 1.0
                c0 = c1 = c2 = 0.0
                last = 0
                for j in range(s, e):
                    g = plist[j]
                    dx = ix - m2d[g, 0]
                    dy = iy - m2d[g, 1]
                    power = -0.5 * (con[g, 0] * dx * dx + con[g, 2] * dy * dy) \
                        - con[g, 1] * dx * dy
                    if power > 0.0:
                        continue
                    a = op[g] * exp(power)
                    if a < alpha_min:
                        continue
                    w = a * tcur
                    c0 += col[g, 0] * w
                    c1 += col[g, 1] * w
                    c2 += col[g, 2] * w
                    last = j - s + 1
                    tcur *= 1.0 - a
                    if tcur < stop_t:
                        break
                img[iy, ix, 0] = c0 + tcur * bg[0]
                img[iy, ix, 1] = c1 + tcur * bg[1]
                img[iy, ix, 2] = c2 + tcur * bg[2]
                ft[iy, ix] = tcur
                nc[iy, ix] = <cnp.int32_t>last
    return image, final_t, n_contrib


def blend_backward(means2d, conics, opacities, colors, background, tile_ranges,
                   point_list, Py_ssize_t height, Py_ssize_t width,
                   Py_ssize_t tile_size, double alpha_min, double stop_t,
                   final_t, n_contrib, grad_image):
    cdef double[:, ::1] m2d = np.ascontiguousarray(means2d, dtype=np.float64)
    cdef double[:, ::1] con = np.ascontiguousarray(conics, dtype=np.float64)
    cdef double[::1] op = np.ascontiguousarray(opacities, dtype=np.float64)
    cdef double[:, ::1] col = np.ascontiguousarray(colors, dtype=np.float64)
    cdef double[::1] bg = np.ascontiguousarray(background, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] ranges = np.ascontiguousarray(tile_ranges, dtype=np.int64)
    cdef cnp.int64_t[::1] plist = np.ascontiguousarray(point_list, dtype=np.int64)
    cdef cnp.int32_t[:, ::1] ncon = np.ascontiguousarray(n_contrib, dtype=np.int32)
    cdef double[:, :, ::1] gim = np.ascontiguousarray(grad_image, dtype=np.float64)

    cdef Py_ssize_t n = m2d.shape[0]
    grad_means2d = np.zeros((n, 2))
    grad_conics = np.zeros((n, 3))
    grad_opacities = np.zeros(n)
    grad_colors = np.zeros((n, 3))
    cdef double[:, ::1] gm = grad_means2d
    cdef double[:, ::1] gcon = grad_conics
    cdef double[::1] gop = grad_opacities
    cdef double[:, ::1] gcol = grad_colors

    # Scratch for the per-pixel contributor stack (ids, alpha, gaussian
    # value, entry transmittance), sized by the largest tile range.
    spans = np.asarray(tile_ranges)
    cdef Py_ssize_t max_span = 0
    if spans.shape[0]:
        max_span = int(np.max(spans[:, 1] - spans[:, 0]))
    sc_id_arr = np.empty(max(max_span, 1), dtype=np.int64)
    sc_a_arr = np.empty(max(max_span, 1))
    sc_g_arr = np.empty(max(max_span, 1))
    sc_t_arr = np.empty(max(max_span, 1))
    cdef cnp.int64_t[::1] sc_id = sc_id_arr
    cdef double[::1] sc_a = sc_a_arr
    cdef double[::1] sc_g = sc_g_arr
    cdef double[::1] sc_t = sc_t_arr

    cdef Py_ssize_t tiles_x = (width + tile_size - 1) // tile_size
    cdef Py_ssize_t t, s, e, x0, y0, x1, y1, ix, iy, j, g, m, k
    cdef double tcur, dx, dy, power, gval, a, w, b0, b1, b2
    cdef double gi0, gi1, gi2, gdot, galpha, gp
    for t in range(ranges.shape[0]):
        s = ranges[t, 0]
        e = ranges[t, 1]
        if s >= e:
            continue
        y0 = (t // tiles_x) * tile_size
        x0 = (t % tiles_x) * tile_size
        y1 = min(y0 + tile_size, height)
        x1 = min(x0 + tile_size, width)
        for iy in range(y0, y1):
            for ix in range(x0, x1):
                if ncon[iy, ix] == 0:
                    continue
                # Forward replay up to the last contributor.
                tcur = 1.0
                m = 0
                for j in range(s, s + ncon[iy, ix]):
                    g = plist[j]
                    dx = ix - m2d[g, 0]
                    dy = iy - m2d[g, 1]
                    power = -0.5 * (con[g, 0] * dx * dx + con[g, 2] * dy * dy) \
                        - con[g, 1] * dx * dy
                    if power > 0.0:
                        continue
                    gval = exp(power)
                    a = op[g] * gval
                    if a < alpha_min:
                        continue
                    sc_id[m] = g
                    sc_a[m] = a
                    sc_g[m] = gval
                    sc_t[m] = tcur
                    m += 1
                    tcur *= 1.0 - a
                # Back-to-front accumulation; background is the terminal layer.
                b0 = bg[0]
                b1 = bg[1]
                b2 = bg[2]
                gi0 = gim[iy, ix, 0]
                gi1 = gim[iy, ix, 1]
                gi2 = gim[iy, ix, 2]
                for k in range(m - 1, -1, -1):
                    g = sc_id[k]
                    a = sc_a[k]
                    w = a * sc_t[k]
                    gcol[g, 0] += gi0 * w
                    gcol[g, 1] += gi1 * w
                    gcol[g, 2] += gi2 * w
                    gdot = gi0 * (col[g, 0] - b0) + gi1 * (col[g, 1] - b1) \
                        + gi2 * (col[g, 2] - b2)
                    galpha = sc_t[k] * gdot
                    gop[g] += galpha * sc_g[k]
                    gp = galpha * a
                    dx = ix - m2d[g, 0]
                    dy = iy - m2d[g, 1]
                    gm[g, 0] += gp * (con[g, 0] * dx + con[g, 1] * dy)
                    gm[g, 1] += gp * (con[g, 2] * dy + con[g, 1] * dx)
                    gcon[g, 0] += gp * (-0.5 * dx * dx)
                    gcon[g, 1] += gp * (-dx * dy)
                    gcon[g, 2] += gp * (-0.5 * dy * dy)
                    b0 = col[g, 0] * a + (1.0 - a) * b0
                    b1 = col[g, 1] * a + (1.0 - a) * b1
                    b2 = col[g, 2] * a + (1.0 - a) * b2
    return grad_means2d, grad_conics, grad_opacities, grad_colors
