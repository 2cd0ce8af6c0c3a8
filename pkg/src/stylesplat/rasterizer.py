"""Differentiable tile rasterizer: color, expected depth, and the analytic backward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from ._accel import resolve_backend
from .projection import Projection, project, project_backward
from .scene import Camera, GaussianCloud

DEPTH_VALID_ALPHA = 0.5


@dataclass
class DepthBuffer:
    depth: np.ndarray
    mask: np.ndarray

    @property
    def shape(self):
        return self.depth.shape


@dataclass
class RenderGradients:
    """Per-point gradients aligned with cloud indices."""

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    means2d_norm: np.ndarray

    def as_dict(self):
        return {
            "positions": self.positions, "log_scales": self.log_scales,
            "rotations": self.rotations, "opacity_logits": self.opacity_logits, "sh": self.sh,
        }


@dataclass
class Binning:
    tile_offsets: np.ndarray
    tile_splats: np.ndarray
    tiles_x: int
    tiles_y: int


@dataclass
class RasterState:
    """Everything a forward pass produced; reused by :func:`render_backward`."""

    projection: Projection
    binning: Binning
    image: np.ndarray
    depth_sum: np.ndarray
    alpha: np.ndarray
    camera: Camera


def depth_order(proj: Projection):
    """Front-to-back order of splats; ties broken by cloud index."""
    return np.lexsort((proj.index, proj.depths))


def bin_splats(proj: Projection, width, height, tile=kernels.TILE) -> Binning:
    """Assign depth-sorted splats to every tile their 3-sigma box touches."""
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n_tiles = tiles_x * tiles_y
    order = depth_order(proj)
    if order.size == 0:
        return Binning(np.zeros(n_tiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), tiles_x, tiles_y)
    m = proj.means2d[order]
    r = proj.radii[order] + 1.0
    tx0 = np.clip(np.floor((m[:, 0] - r) / tile), 0, tiles_x - 1).astype(np.int64)
    tx1 = np.clip(np.floor((m[:, 0] + r) / tile), 0, tiles_x - 1).astype(np.int64)
    ty0 = np.clip(np.floor((m[:, 1] - r) / tile), 0, tiles_y - 1).astype(np.int64)
    ty1 = np.clip(np.floor((m[:, 1] + r) / tile), 0, tiles_y - 1).astype(np.int64)
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    owner = np.repeat(np.arange(order.size), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    tile_ids = (ty0[owner] + local // nx[owner]) * tiles_x + tx0[owner] + local % nx[owner]
    perm = np.argsort(tile_ids, kind="stable")
    tile_splats = np.ascontiguousarray(order[owner[perm]])
    offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    np.cumsum(np.bincount(tile_ids, minlength=n_tiles), out=offsets[1:])
    return Binning(offsets, tile_splats, tiles_x, tiles_y)


def rasterize(cloud: GaussianCloud, camera: Camera, backend=None) -> RasterState:
    backend = resolve_backend(backend)
    proj = project(cloud, camera)
    binning = bin_splats(proj, camera.width, camera.height)
    h, w = camera.height, camera.width
    image = np.empty((h, w, 3))
    depth_sum = np.zeros((h, w))
    alpha = np.zeros((h, w))
    kernels.FORWARD[backend](
        binning.tile_offsets, binning.tile_splats, proj.means2d, proj.conics,
        proj.opacities, proj.colors, proj.depths, cloud.background,
        w, h, binning.tiles_x, image, depth_sum, alpha,
    )
    return RasterState(proj, binning, image, depth_sum, alpha, camera)


def render(cloud: GaussianCloud, camera: Camera, backend=None) -> np.ndarray:
    """Render an (H, W, 3) color image."""
    return rasterize(cloud, camera, backend).image


def depth_from_state(state: RasterState) -> DepthBuffer:
    mask = state.alpha >= DEPTH_VALID_ALPHA
    depth = np.zeros_like(state.depth_sum)
    depth[mask] = state.depth_sum[mask] / state.alpha[mask]
    return DepthBuffer(depth, mask)


def render_depth(cloud: GaussianCloud, camera: Camera, backend=None) -> DepthBuffer:
    """Alpha-normalized expected view depth; mask marks accumulated alpha >= 0.5."""
    return depth_from_state(rasterize(cloud, camera, backend))


def render_backward(cloud: GaussianCloud, camera: Camera, grad_image, state: RasterState | None = None,
                    backend=None) -> RenderGradients:
    """Gradients of a scalar loss w.r.t. every stored cloud parameter.

    ``grad_image`` is dL/dImage with shape (H, W, 3).  Pass the ``state`` from
    :func:`rasterize` to skip re-projecting.
    """
    backend = resolve_backend(backend)
    if state is None:
        state = rasterize(cloud, camera, backend)
    proj, binning = state.projection, state.binning
    grad_image = np.ascontiguousarray(grad_image, dtype=np.float64)
    if grad_image.shape != (camera.height, camera.width, 3):
        raise ValueError(f"grad_image must have shape {(camera.height, camera.width, 3)}")
    n_pairs = binning.tile_splats.size
    d_means = np.zeros((n_pairs, 2))
    d_conics = np.zeros((n_pairs, 3))
    d_opac = np.zeros(n_pairs)
    d_colors = np.zeros((n_pairs, 3))
    kernels.BACKWARD[backend](
        binning.tile_offsets, binning.tile_splats, proj.means2d, proj.conics,
        proj.opacities, proj.colors, cloud.background, camera.width, camera.height,
        binning.tiles_x, grad_image, d_means, d_conics, d_opac, d_colors,
    )
    m = len(proj)
    owner = binning.tile_splats

    def reduce(values):
        if values.ndim == 1:
            return np.bincount(owner, weights=values, minlength=m)
        return np.stack([np.bincount(owner, weights=values[:, j], minlength=m)
                         for j in range(values.shape[1])], axis=1)

    sd_means = reduce(d_means)
    grads = project_backward(cloud, camera, proj, sd_means, reduce(d_conics),
                             reduce(d_colors), reduce(d_opac))
    mean_norm = np.zeros(len(cloud))
    mean_norm[proj.index] = np.linalg.norm(sd_means, axis=1) if m else 0.0
    return RenderGradients(means2d_norm=mean_norm, **grads)


def composite_pixel(colors, alphas, background=(0.0, 0.0, 0.0)):
    """Front-to-back compositing of already depth-ordered (color, alpha) pairs.

    Stops right after the splat that drops transmittance below 1e-4.
    """
    out = np.zeros(3)
    trans = 1.0
    for c, a in zip(np.asarray(colors, dtype=np.float64).reshape(-1, 3), np.asarray(alphas, dtype=np.float64)):
        out += c * a * trans
        trans *= 1.0 - a
        if trans < kernels.T_MIN:
            break
    return out + trans * np.asarray(background, dtype=np.float64)
