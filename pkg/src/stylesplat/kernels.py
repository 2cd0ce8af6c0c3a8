"""Tile compositing kernels: numba loops and a vectorized numpy twin.

Both backends implement the same rule set and are checked against each other
in the test suite:

* effective alpha = min(0.99, opacity * exp(power)); skipped when the pixel
  lies outside the 3-sigma ellipse (power < -4.5) or alpha < 1/255;
* a splat is composited while the transmittance in front of it is at least
  1e-4, i.e. the loop stops right after the splat that pushes it below.

Backward kernels emit one gradient row per (tile, splat) pair; the caller
reduces pairs onto splats in pair order so results do not depend on thread
scheduling.
"""
import numpy as np

from ._accel import njit, prange

TILE = 16
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
T_MIN = 1e-4
POWER_CUTOFF = -4.5


@njit(parallel=True, cache=True)
def _forward_numba(tile_offsets, tile_splats, means, conics, opac, colors, depths,
                   bg, width, height, tiles_x, out_rgb, out_depth, out_alpha):
    n_tiles = tile_offsets.shape[0] - 1
    for t in prange(n_tiles):
        x0 = (t % tiles_x) * TILE
        y0 = (t // tiles_x) * TILE
        start = tile_offsets[t]
        end = tile_offsets[t + 1]
        for py in range(y0, min(y0 + TILE, height)):
            for px in range(x0, min(x0 + TILE, width)):
                trans = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                d = 0.0
                for k in range(start, end):
                    s = tile_splats[k]
                    dx = px - means[s, 0]
                    dy = py - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) - conics[s, 1] * dx * dy
                    if power > 0.0 or power < POWER_CUTOFF:
                        continue
                    alpha = min(ALPHA_MAX, opac[s] * np.exp(power))
                    if alpha < ALPHA_MIN:
                        continue
                    w = alpha * trans
                    r += colors[s, 0] * w
                    g += colors[s, 1] * w
                    b += colors[s, 2] * w
                    d += depths[s] * w
                    trans *= 1.0 - alpha
                    if trans < T_MIN:
                        break
                out_rgb[py, px, 0] = r + trans * bg[0]
                out_rgb[py, px, 1] = g + trans * bg[1]
                out_rgb[py, px, 2] = b + trans * bg[2]
                out_depth[py, px] = d
                out_alpha[py, px] = 1.0 - trans


@njit(parallel=True, cache=True)
def _backward_numba(tile_offsets, tile_splats, means, conics, opac, colors,
                    bg, width, height, tiles_x, grad_rgb,
                    d_means, d_conics, d_opac, d_colors):
    n_tiles = tile_offsets.shape[0] - 1
    for t in prange(n_tiles):
        x0 = (t % tiles_x) * TILE
        y0 = (t // tiles_x) * TILE
        start = tile_offsets[t]
        end = tile_offsets[t + 1]
        count = end - start
        alphas = np.zeros(count)
        t_before = np.zeros(count)
        for py in range(y0, min(y0 + TILE, height)):
            for px in range(x0, min(x0 + TILE, width)):
                gr = grad_rgb[py, px, 0]
                gg = grad_rgb[py, px, 1]
                gb = grad_rgb[py, px, 2]
                if gr == 0.0 and gg == 0.0 and gb == 0.0:
                    continue
                trans = 1.0
                last = -1
                for j in range(count):
                    alphas[j] = 0.0
                for j in range(count):
                    s = tile_splats[start + j]
                    dx = px - means[s, 0]
                    dy = py - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) - conics[s, 1] * dx * dy
                    if power > 0.0 or power < POWER_CUTOFF:
                        continue
                    alpha = min(ALPHA_MAX, opac[s] * np.exp(power))
                    if alpha < ALPHA_MIN:
                        continue
                    alphas[j] = alpha
                    t_before[j] = trans
                    last = j
                    trans *= 1.0 - alpha
                    if trans < T_MIN:
                        break
                sr = bg[0] * trans
                sg = bg[1] * trans
                sb = bg[2] * trans
                for j in range(last, -1, -1):
                    alpha = alphas[j]
                    if alpha == 0.0:
                        continue
                    k = start + j
                    s = tile_splats[k]
                    tb = t_before[j]
                    w = alpha * tb
                    d_colors[k, 0] += w * gr
                    d_colors[k, 1] += w * gg
                    d_colors[k, 2] += w * gb
                    inv = 1.0 / (1.0 - alpha)
                    d_alpha = (gr * (colors[s, 0] * tb - sr * inv)
                               + gg * (colors[s, 1] * tb - sg * inv)
                               + gb * (colors[s, 2] * tb - sb * inv))
                    sr += colors[s, 0] * w
                    sg += colors[s, 1] * w
                    sb += colors[s, 2] * w
                    dx = px - means[s, 0]
                    dy = py - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) - conics[s, 1] * dx * dy
                    gauss = np.exp(power)
                    if opac[s] * gauss > ALPHA_MAX:
                        continue
                    d_opac[k] += d_alpha * gauss
                    d_power = d_alpha * alpha
                    d_means[k, 0] += d_power * (conics[s, 0] * dx + conics[s, 1] * dy)
                    d_means[k, 1] += d_power * (conics[s, 2] * dy + conics[s, 1] * dx)
                    d_conics[k, 0] += -0.5 * dx * dx * d_power
                    d_conics[k, 1] += -dx * dy * d_power
                    d_conics[k, 2] += -0.5 * dy * dy * d_power


def _tile_pixels(t, tiles_x, width, height):
    x0 = (t % tiles_x) * TILE
    y0 = (t // tiles_x) * TILE
    ys, xs = np.mgrid[y0:min(y0 + TILE, height), x0:min(x0 + TILE, width)]
    return ys.ravel(), xs.ravel()


def _tile_alphas(splats, means, conics, opac, xs, ys):
    """(K, P) effective alphas for one tile plus the intermediates backward needs."""
    dx = xs[None, :] - means[splats, 0][:, None]
    dy = ys[None, :] - means[splats, 1][:, None]
    ca = conics[splats, 0][:, None]
    cb = conics[splats, 1][:, None]
    cc = conics[splats, 2][:, None]
    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
    inside = (power <= 0.0) & (power >= POWER_CUTOFF)
    gauss = np.exp(np.where(inside, power, POWER_CUTOFF))
    raw = opac[splats][:, None] * gauss
    alpha = np.minimum(ALPHA_MAX, raw)
    alpha = np.where(inside & (alpha >= ALPHA_MIN), alpha, 0.0)
    # transmittance in front of each splat, then drop everything past the cutoff
    t_before = np.cumprod(np.vstack([np.ones((1, alpha.shape[1])), 1.0 - alpha[:-1]]), axis=0)
    alpha = np.where(t_before >= T_MIN, alpha, 0.0)
    t_before = np.cumprod(np.vstack([np.ones((1, alpha.shape[1])), 1.0 - alpha[:-1]]), axis=0)
    t_final = t_before[-1] * (1.0 - alpha[-1])
    return alpha, t_before, t_final, dx, dy, gauss, raw <= ALPHA_MAX


def _forward_numpy(tile_offsets, tile_splats, means, conics, opac, colors, depths,
                   bg, width, height, tiles_x, out_rgb, out_depth, out_alpha):
    out_rgb[...] = bg
    out_depth[...] = 0.0
    out_alpha[...] = 0.0
    for t in range(tile_offsets.shape[0] - 1):
        start, end = tile_offsets[t], tile_offsets[t + 1]
        if start == end:
            continue
        ys, xs = _tile_pixels(t, tiles_x, width, height)
        splats = tile_splats[start:end]
        alpha, t_before, t_final, *_ = _tile_alphas(splats, means, conics, opac, xs, ys)
        weights = alpha * t_before
        out_rgb[ys, xs] = weights.T @ colors[splats] + t_final[:, None] * bg
        out_depth[ys, xs] = weights.T @ depths[splats]
        out_alpha[ys, xs] = 1.0 - t_final


def _backward_numpy(tile_offsets, tile_splats, means, conics, opac, colors,
                    bg, width, height, tiles_x, grad_rgb,
                    d_means, d_conics, d_opac, d_colors):
    for t in range(tile_offsets.shape[0] - 1):
        start, end = tile_offsets[t], tile_offsets[t + 1]
        if start == end:
            continue
        ys, xs = _tile_pixels(t, tiles_x, width, height)
        splats = tile_splats[start:end]
        alpha, t_before, t_final, dx, dy, gauss, unclamped = _tile_alphas(
            splats, means, conics, opac, xs, ys)
        g = grad_rgb[ys, xs]                                     # (P, 3)
        weights = alpha * t_before                               # (K, P)
        col = colors[splats]                                     # (K, 3)
        d_colors[start:end] += weights @ g
        contrib = col[:, None, :] * weights[:, :, None]          # (K, P, 3)
        behind = np.cumsum(contrib[::-1], axis=0)[::-1] - contrib
        behind += (t_final[:, None] * bg)[None]
        active = alpha > 0.0
        inv = np.where(active, 1.0 / (1.0 - alpha), 0.0)
        d_alpha = np.einsum("kpc,pc->kp", col[:, None, :] * t_before[:, :, None]
                            - behind * inv[:, :, None], g)
        d_alpha = np.where(active & unclamped, d_alpha, 0.0)
        d_opac[start:end] += np.sum(d_alpha * gauss, axis=1)
        d_power = d_alpha * alpha
        ca = conics[splats, 0][:, None]
        cb = conics[splats, 1][:, None]
        cc = conics[splats, 2][:, None]
        d_means[start:end, 0] += np.sum(d_power * (ca * dx + cb * dy), axis=1)
        d_means[start:end, 1] += np.sum(d_power * (cc * dy + cb * dx), axis=1)
        d_conics[start:end, 0] += np.sum(-0.5 * dx * dx * d_power, axis=1)
        d_conics[start:end, 1] += np.sum(-dx * dy * d_power, axis=1)
        d_conics[start:end, 2] += np.sum(-0.5 * dy * dy * d_power, axis=1)


FORWARD = {"numba": _forward_numba, "numpy": _forward_numpy}
BACKWARD = {"numba": _backward_numba, "numpy": _backward_numpy}
