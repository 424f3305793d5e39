"""Numba kernels for the CPU splat rasterizer.

The forward pass runs in three sweeps: count per-pixel entries, fill them
in global depth order (so every pixel's entry list is depth-sorted), then
composite pixels independently. The composite sweep parallelizes over image
rows; each row only writes its own pixels, so results are bitwise identical
for any thread count. The backward sweep is sequential: it replays each
pixel's transmittance recurrence and accumulates per-primitive gradients in
a fixed order.
"""

import numba
import numpy as np
from numba import njit, prange

SUPPORT_Q = 9.0  # 3-sigma ellipse cutoff on the Mahalanobis quadratic form
TRANSMITTANCE_EPS = 1e-4


@njit(cache=True)
def _count_pass(order, mx, my, ca, cb, cc, x0, x1, y0, y1, counts, width):
    for oi in range(order.shape[0]):
        s = order[oi]
        for iy in range(y0[s], y1[s] + 1):
            dy = iy - my[s]
            for ix in range(x0[s], x1[s] + 1):
                dx = ix - mx[s]
                q = ca[s] * dx * dx + 2.0 * cb[s] * dx * dy + cc[s] * dy * dy
                if q <= SUPPORT_Q:
                    counts[iy * width + ix] += 1


@njit(cache=True)
def _fill_pass(order, mx, my, ca, cb, cc, x0, x1, y0, y1, ptr, cursor, entry_splat, entry_g, width):
    for oi in range(order.shape[0]):
        s = order[oi]
        for iy in range(y0[s], y1[s] + 1):
            dy = iy - my[s]
            for ix in range(x0[s], x1[s] + 1):
                dx = ix - mx[s]
                q = ca[s] * dx * dx + 2.0 * cb[s] * dx * dy + cc[s] * dy * dy
                if q <= SUPPORT_Q:
                    p = iy * width + ix
                    pos = ptr[p] + cursor[p]
                    g = np.exp(-0.5 * q)
                    if g > 1.0:
                        g = 1.0
                    entry_splat[pos] = s
                    entry_g[pos] = g
                    cursor[p] += 1


@njit(cache=True, parallel=True)
def _composite_pass(
    ptr,
    entry_splat,
    entry_g,
    entry_w,
    alphas,
    depths,
    colors,
    feats,
    want_rgb,
    want_depth,
    want_feature,
    rgb,
    alpha_img,
    depth_img,
    feat_img,
    height,
    width,
):
    for iy in prange(height):
        for ix in range(width):
            p = iy * width + ix
            transmittance = 1.0
            acc_a = 0.0
            for e in range(ptr[p], ptr[p + 1]):
                if transmittance < TRANSMITTANCE_EPS:
                    entry_w[e] = 0.0
                    continue
                s = entry_splat[e]
                ag = alphas[s] * entry_g[e]
                if ag > 1.0:
                    ag = 1.0
                w = ag * transmittance
                entry_w[e] = w
                acc_a += w
                if want_rgb:
                    rgb[iy, ix, 0] += w * colors[s, 0]
                    rgb[iy, ix, 1] += w * colors[s, 1]
                    rgb[iy, ix, 2] += w * colors[s, 2]
                if want_depth:
                    depth_img[iy, ix] += w * depths[s]
                if want_feature:
                    for c in range(feats.shape[1]):
                        feat_img[iy, ix, c] += w * feats[s, c]
                transmittance = transmittance * (1.0 - ag)
            alpha_img[iy, ix] = acc_a


@njit(cache=True)
def _backward_pass(
    ptr,
    entry_splat,
    entry_g,
    entry_w,
    alphas,
    values,
    residual,
    depth_mode,
    depth_img,
    alpha_img,
    want_value_grad,
    want_opacity_grad,
    value_grad,
    opacity_grad,
    scratch_t,
    height,
    width,
):
    nchan = values.shape[1]
    for p in range(height * width):
        start = ptr[p]
        end = ptr[p + 1]
        if start == end:
            continue
        iy = p // width
        ix = p % width

        if want_value_grad:
            for e in range(start, end):
                w = entry_w[e]
                if w != 0.0:
                    s = entry_splat[e]
                    for c in range(nchan):
                        value_grad[s, c] += w * residual[iy, ix, c]

        if want_opacity_grad:
            # replay the forward transmittance recurrence
            transmittance = 1.0
            for e in range(start, end):
                if transmittance < TRANSMITTANCE_EPS:
                    scratch_t[e - start] = -1.0
                    continue
                scratch_t[e - start] = transmittance
                s = entry_splat[e]
                ag = alphas[s] * entry_g[e]
                if ag > 1.0:
                    ag = 1.0
                transmittance = transmittance * (1.0 - ag)
            suffix = 0.0
            for e in range(end - 1, start - 1, -1):
                t_here = scratch_t[e - start]
                if t_here < 0.0:
                    continue
                s = entry_splat[e]
                u = 0.0
                if depth_mode:
                    if alpha_img[iy, ix] > 0.0:
                        u = (
                            residual[iy, ix, 0]
                            * (values[s, 0] - depth_img[iy, ix])
                            / alpha_img[iy, ix]
                        )
                else:
                    for c in range(nchan):
                        u += residual[iy, ix, c] * values[s, c]
                g = entry_g[e]
                ag = alphas[s] * g
                if ag > 1.0:
                    ag = 1.0
                term = g * t_here * u
                denom = 1.0 - ag
                if denom > 1e-12:
                    term -= g / denom * suffix
                opacity_grad[s] += term
                suffix += entry_w[e] * u


def set_thread_count(n: int) -> int:
    """Cap numba's thread pool; returns the thread count actually applied."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
