"""Phase 1 (fit a Gaussian cloud to posed views) and phase 2 (appearance-only style transfer).

Phase 2 never touches the structure fields (positions, scales, rotations,
opacities): only the SH array of a copy of the input cloud is handed to the
optimizer, and :func:`transfer` re-checks the structure bytes before
returning.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .config import Phase1Config, TrainConfig
from .losses import (TERMS, LossWeights, Nets, ReferenceCache, StyleTarget, loss_disc_step,
                     loss_efficient, loss_rgb, style_statistics)
from .metrics import feature_distance, psnr, ssim
from .nets import build_discriminator, build_extractor, train_depthnet
from .optim import Adam, clip_global_norm
from .rasterizer import depth_from_state, rasterize, render, render_backward
from .scene import GaussianCloud

log = logging.getLogger(__name__)

PARAM_CLASSES = ("positions", "log_scales", "rotations", "opacity_logits", "sh")
HISTORY_COLUMNS = ("iteration", "total") + TERMS + ("disc", "wall_ms")


class NumericalError(FloatingPointError):
    """Raised when a loss or gradient becomes non-finite."""


def _check_finite(what, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite values in {what}")


def scene_extent(cameras):
    """Radius of the camera centers around their mean, padded by 10% (at least 1e-3)."""
    centers = np.stack([c.center for c in cameras])
    radius = float(np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1)))
    return max(1.1 * radius, 1e-3)


def exp_decay(start, end, t, total):
    """Log-linear interpolation from ``start`` to ``end`` as ``t`` goes 0 -> ``total``."""
    u = min(max(t / max(total, 1), 0.0), 1.0)
    return float(np.exp((1.0 - u) * np.log(start) + u * np.log(end)))


def init_cloud(points, colors=None, sh_degree=2, opacity=0.1, background=(0.0, 0.0, 0.0)):
    """Isotropic seed cloud; each scale is the mean distance to the 3 nearest neighbours."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] == 0:
        raise ValueError("cannot initialize from an empty point set")
    k = min(4, points.shape[0])
    if k > 1:
        dist, _ = cKDTree(points).query(points, k=k)
        scale = np.maximum(dist[:, 1:].mean(axis=1), 1e-4)
    else:
        scale = np.full(1, 0.05)
    colors = np.full_like(points, 0.5) if colors is None else colors
    cloud = GaussianCloud.from_points(points, colors, scale=1.0, opacity=opacity,
                                      sh_degree=sh_degree, background=background)
    cloud.log_scales[:] = np.log(scale)[:, None]
    return cloud


def random_init(cameras, n_points, depth_range, seed=0, sh_degree=2):
    """Uniform points in the union of the view frusta between two depths."""
    rng = np.random.default_rng(seed)
    pts = []
    for i in range(n_points):
        cam = cameras[rng.integers(len(cameras))]
        u, v = rng.uniform(0, cam.width - 1), rng.uniform(0, cam.height - 1)
        z = rng.uniform(*depth_range)
        ray = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
        pts.append(cam.rotation @ (ray * z) + cam.translation)
    return init_cloud(np.array(pts), sh_degree=sh_degree)


# --- phase 1 ---------------------------------------------------------------

@dataclass
class ReconstructResult:
    cloud: GaussianCloud
    train_psnr: float
    test_psnr: float | None
    history: list = field(default_factory=list)
    pruned: int = 0
    densified: int = 0


def _phase1_optimizer(cloud, cfg: Phase1Config, extent):
    return Adam({
        "positions": (cloud.positions, cfg.position_lr * extent),
        "log_scales": (cloud.log_scales, cfg.scale_lr),
        "rotations": (cloud.rotations, cfg.rotation_lr),
        "opacity_logits": (cloud.opacity_logits, cfg.opacity_lr),
        "sh": (cloud.sh, cfg.feature_lr),
    })


def _groups(cloud, opt: Adam):
    return {name: (getattr(cloud, name), opt.lrs[name]) for name in PARAM_CLASSES}


def prune(cloud: GaussianCloud, threshold):
    """Boolean keep-mask of points whose activated opacity reaches ``threshold``."""
    return cloud.opacities >= threshold


def _concat(clouds):
    first = clouds[0]
    return GaussianCloud(*(np.concatenate([getattr(c, n) for c in clouds]) for n in PARAM_CLASSES),
                         first.sh_degree, first.background)


def densify(cloud: GaussianCloud, mean_grad, cfg: Phase1Config, extent, rng):
    """Clone small and split large points whose mean screen-space gradient is high.

    A split point is replaced by two children sampled from its own Gaussian,
    each with scales divided by 1.6.
    """
    hot = mean_grad > cfg.densify_grad_threshold
    if not hot.any():
        return cloud, 0
    big = cloud.scales.max(axis=1) > 0.01 * extent
    clone, split = hot & ~big, hot & big
    parts = [cloud.subset(~split), cloud.subset(clone)]
    for _ in range(2):
        child = cloud.subset(split)
        chol = np.linalg.cholesky(child.covariances)
        child.positions = child.positions + np.einsum("nij,nj->ni", chol, rng.normal(size=(len(child), 3)))
        child.log_scales = child.log_scales - np.log(1.6)
        parts.append(child)
    return _concat(parts), int(clone.sum() + split.sum())


def reconstruct(views, cloud: GaussianCloud, config: TrainConfig | Phase1Config | None = None,
                test_views=(), seed=None, log_every=0) -> ReconstructResult:
    """Fit every parameter class of ``cloud`` to ``views`` with the photometric loss.

    Args:
        views: list of (image, camera) training pairs, one sampled per iteration.
        cloud: initial cloud; it is copied, not modified.
        test_views: optional held-out (image, camera) pairs for the reported PSNR.

    Raises NumericalError if a loss or gradient goes non-finite.
    """
    if len(views) == 0:
        raise ValueError("reconstruct needs at least one view")
    if len(cloud) == 0:
        raise ValueError("initial cloud is empty")
    if isinstance(config, TrainConfig):
        seed = config.seed if seed is None else seed
        cfg = config.phase1
    else:
        cfg = config or Phase1Config()
    rng = np.random.default_rng(0 if seed is None else seed)
    cloud = cloud.copy()
    extent = scene_extent([c for _, c in views]) if len(views) > 1 else 1.0
    opt = _phase1_optimizer(cloud, cfg, extent)
    history = []
    grad_accum = np.zeros(len(cloud))
    grad_count = np.zeros(len(cloud))
    pruned = densified = 0
    order = np.array([], dtype=int)

    for it in range(1, cfg.iterations + 1):
        if order.size == 0:
            order = rng.permutation(len(views))
        k, order = order[0], order[1:]
        image, camera = views[k]
        opt.set_lr("positions", exp_decay(cfg.position_lr * extent, cfg.position_lr_final * extent,
                                          it - 1, cfg.iterations))
        state = rasterize(cloud, camera)
        loss, g_img = loss_rgb(state.image, image)
        grads = render_backward(cloud, camera, g_img, state)
        flat = [getattr(grads, n) for n in PARAM_CLASSES]
        _check_finite(f"phase-1 gradients at iteration {it}", np.array(loss), *flat)
        flat, _ = clip_global_norm(flat, cfg.grad_clip)
        opt.step(dict(zip(PARAM_CLASSES, flat)))
        _check_finite(f"phase-1 parameters at iteration {it}", cloud.positions, cloud.sh)
        history.append({"iteration": it, "loss": loss})
        if log_every and it % log_every == 0:
            log.info("phase1 it %d loss %.6f points %d", it, loss, len(cloud))

        if cfg.densify_enabled:
            grad_accum += grads.means2d_norm
            grad_count += grads.means2d_norm > 0
            if it % cfg.densify_interval == 0 and it <= cfg.densify_until:
                mean = grad_accum / np.maximum(grad_count, 1)
                cloud, added = densify(cloud, mean, cfg, extent, rng)
                densified += added
                opt = Adam(_groups(cloud, opt))
                grad_accum = np.zeros(len(cloud))
                grad_count = np.zeros(len(cloud))
        if cfg.prune_interval and it % cfg.prune_interval == 0:
            keep = prune(cloud, cfg.prune_opacity_threshold)
            if not keep.all():
                pruned += int((~keep).sum())
                cloud = cloud.subset(keep)
                opt.rebind(_groups(cloud, opt), keep)
                grad_accum, grad_count = grad_accum[keep], grad_count[keep]

    train_psnr = float(np.mean([psnr(np.clip(render(cloud, c), 0, 1), img) for img, c in views]))
    test_psnr = (float(np.mean([psnr(np.clip(render(cloud, c), 0, 1), img) for img, c in test_views]))
                 if len(test_views) else None)
    return ReconstructResult(cloud, train_psnr, test_psnr, history, pruned, densified)


# --- nets for phase 2 --------------------------------------------------------

def downsample(image, factor):
    """Box-filter an (H, W, C) image by an integer ``factor`` (1 returns a copy)."""
    image = np.asarray(image, dtype=np.float64)
    if factor == 1:
        return image.copy()
    h, w = image.shape[0] // factor, image.shape[1] // factor
    crop = image[:h * factor, :w * factor]
    return crop.reshape(h, factor, w, factor, -1).mean(axis=(1, 3)).reshape((h, w) + image.shape[2:])


def _scale_factor(render_scale):
    inv = 1.0 / render_scale
    if abs(inv - round(inv)) > 1e-9:
        raise ValueError(f"render_scale must be 1/k for an integer k, got {render_scale}")
    return int(round(inv))


def prepare_nets(cloud: GaussianCloud, cameras, config: TrainConfig | None = None, depthnet=None) -> Nets:
    """Fixed extractor, fresh discriminator and a depth net fitted to renders of ``cloud``."""
    config = config or TrainConfig()
    seed = config.seed
    if depthnet is None:
        dcfg = config.depthnet
        cams = [c.scaled(dcfg.render_scale) for c in cameras]
        states = [rasterize(cloud, c) for c in cams]
        depths = [depth_from_state(s) for s in states]
        depthnet = train_depthnet([np.clip(s.image, 0, 1) for s in states], [d.depth for d in depths],
                                  [d.mask for d in depths], steps=dcfg.steps, lr=dcfg.lr,
                                  batch_size=dcfg.batch_size, seed=seed,
                                  color_jitter=dcfg.color_jitter)
    return Nets(build_extractor(seed), build_discriminator(seed + 1), depthnet)


# --- phase 2 ---------------------------------------------------------------

@dataclass
class TransferRun:
    """Phase-2 result: input cloud, stylized cloud and per-iteration loss history."""

    initial: GaussianCloud
    stylized: GaussianCloud
    history: list
    timings: dict = field(default_factory=dict)
    weights: LossWeights | None = None

    def history_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for row in self.history:
            writer.writerow([row["iteration"]] + ["" if row[c] == "" else repr(float(row[c]))
                                                  for c in HISTORY_COLUMNS[1:]])
        return buf.getvalue()

    def write_history(self, path):
        Path(path).write_text(self.history_csv())


def structure_digest(cloud: GaussianCloud):
    return hashlib.sha256(cloud.structure_bytes()).hexdigest()


def transfer(cloud: GaussianCloud, real_pool, cameras, nets: Nets, config: TrainConfig | None = None,
             style: StyleTarget | None = None, out_dir=None, log_every=0) -> TransferRun:
    """Optimize only the SH colors of a copy of ``cloud`` toward the style of ``real_pool``.

    Each iteration samples one camera, renders the current cloud, evaluates
    the weighted style + adversarial + content + depth objective against the
    frozen render of ``cloud`` at that pose, and takes one Adam step on the
    SH coefficients.  When the adversarial term is active the discriminator
    takes one step per iteration too.  ``nets.discriminator`` is trained in
    place.
    """
    config = config or TrainConfig()
    cfg = config.phase2
    if len(real_pool) == 0:
        raise ValueError("real pool is empty")
    if len(cameras) == 0:
        raise ValueError("transfer needs at least one camera")
    weights = config.loss_weights()
    factor = _scale_factor(cfg.render_scale)
    pool = [downsample(img, factor) for img in list(real_pool)[:cfg.pool_size]]
    cams = [c.scaled(cfg.render_scale) for c in cameras]
    t_start = time.perf_counter()
    if style is None:
        style = style_statistics(pool, nets.extractor)
    timings = {"style_stats_s": time.perf_counter() - t_start}
    rng = np.random.default_rng(config.seed)

    stylized = cloud.copy()
    opt = Adam({"sh": (stylized.sh, cfg.appearance_lr)})
    cache = {}
    history = []
    digest = structure_digest(cloud)
    out_dir = Path(out_dir) if out_dir is not None else None
    t_loop = time.perf_counter()

    for it in range(1, cfg.iterations + 1):
        t_iter = time.perf_counter()
        k = int(rng.integers(len(cams)))
        cam = cams[k]
        if k not in cache:
            ref = render(cloud, cam)
            cache[k] = (ref, ReferenceCache.compute(ref, nets))
        ref, ref_cache = cache[k]
        opt.set_lr("sh", exp_decay(cfg.appearance_lr, cfg.appearance_lr_final, it - 1, cfg.iterations))
        state = rasterize(stylized, cam)
        report = loss_efficient(state.image, ref, style, nets, weights, ref_cache)
        _check_finite(f"phase-2 loss at iteration {it}", np.array(report.total), report.grad)
        g_sh = render_backward(stylized, cam, report.grad, state).sh
        (g_sh,), _ = clip_global_norm([g_sh], cfg.grad_clip)
        opt.step({"sh": g_sh})
        _check_finite(f"phase-2 SH at iteration {it}", stylized.sh)

        disc_loss = 0.0
        if weights.effective("adv"):
            pick = rng.choice(len(pool), size=min(4, len(pool)), replace=False)
            disc_loss = loss_disc_step(nets.discriminator, [pool[i] for i in np.sort(pick)],
                                       state.image, lr=cfg.disc_lr)
        row = {"iteration": it, "total": report.total, "disc": disc_loss,
               "wall_ms": 1e3 * (time.perf_counter() - t_iter) if cfg.log_wall_clock else ""}
        row.update(report.terms)
        history.append(row)
        if log_every and it % log_every == 0:
            log.info("phase2 it %d total %.5f %s", it, report.total,
                     " ".join(f"{t}={report.terms[t]:.4f}" for t in TERMS))
        if out_dir is not None and config.checkpoint_interval and it % config.checkpoint_interval == 0:
            from .dataio import save_checkpoint
            save_checkpoint(stylized, out_dir / f"stylized_{it:06d}.ssgc",
                            {"phase": "transfer", "iteration": it, "seed": config.seed,
                             "config": config.digest()})

    timings["loop_s"] = time.perf_counter() - t_loop
    timings["iterations_per_s"] = cfg.iterations / max(timings["loop_s"], 1e-12)
    if structure_digest(stylized) != digest:
        raise RuntimeError("structure parameters changed during transfer")
    return TransferRun(cloud, stylized, history, timings, weights)


# --- ablation --------------------------------------------------------------

ABLATIONS = {
    "full": {},
    "w/o style": {"use_style": False},
    "w/o adv": {"use_adv": False},
    "w/o content+depth": {"use_content": False, "use_depth": False},
}


@dataclass
class AblationRow:
    name: str
    run: TransferRun
    feature_distance: float
    psnr: float | None = None
    ssim: float | None = None


def evaluate_transfer(run: TransferRun, pool_cameras, pool, heldout_cameras=(), heldout=(), extractor=None):
    """Feature distance of renders at the pool poses to the pool, plus held-out PSNR/SSIM."""
    renders = [np.clip(render(run.stylized, c), 0, 1) for c in pool_cameras]
    fd = feature_distance(renders, pool, extractor)
    if len(heldout):
        outs = [np.clip(render(run.stylized, c), 0, 1) for c in heldout_cameras]
        return fd, float(np.mean([psnr(o, h) for o, h in zip(outs, heldout)])), \
            float(np.mean([ssim(o, h) for o, h in zip(outs, heldout)]))
    return fd, None, None


def ablation_matrix(cloud, real_pool, cameras, nets: Nets, config: TrainConfig | None = None,
                    pool_cameras=None, heldout_cameras=(), heldout=(), variants=None):
    """Full objective plus the three single-group ablations; one row each.

    Every variant starts from the same discriminator weights so runs differ
    only by their loss switches.
    """
    config = config or TrainConfig()
    variants = variants or list(ABLATIONS)
    pool_cameras = pool_cameras if pool_cameras is not None else cameras[:len(real_pool)]
    disc0 = nets.discriminator.copy()
    rows = []
    for name in variants:
        cfg = replace(config, phase2=replace(config.phase2, **ABLATIONS[name]))
        run_nets = Nets(nets.extractor, disc0.copy(), nets.depthnet)
        run = transfer(cloud, real_pool, cameras, run_nets, cfg)
        fd, p, s = evaluate_transfer(run, pool_cameras, real_pool, heldout_cameras, heldout,
                                     nets.extractor)
        rows.append(AblationRow(name, run, fd, p, s))
    return rows


def ablation_table(rows):
    lines = [f"{'variant':<20} {'feat.dist':>10} {'PSNR':>8} {'SSIM':>7}"]
    for r in rows:
        p = f"{r.psnr:8.3f}" if r.psnr is not None else f"{'-':>8}"
        s = f"{r.ssim:7.4f}" if r.ssim is not None else f"{'-':>7}"
        lines.append(f"{r.name:<20} {r.feature_distance:10.5g} {p} {s}")
    return "\n".join(lines)
