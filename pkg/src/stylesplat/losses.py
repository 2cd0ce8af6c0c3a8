"""Photometric, style, adversarial and structure-consistency losses.

Every loss returns ``(value, grad)`` where ``grad`` is dLoss/dImage with the
image's (H, W, 3) shape, ready to feed :func:`stylesplat.rasterizer.render_backward`.

Vector distances use the RMS norm ``||v||_2 / sqrt(len(v))`` so magnitudes do
not depend on resolution or channel count.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import ConvNet, ForwardPass, from_nchw, to_nchw

LOG_EPS = 1e-8
STD_EPS = 1e-8
TERMS = ("style", "adv", "content", "depth")


def rms_distance(diff):
    """RMS norm of ``diff`` and its gradient; the gradient is 0 at the origin."""
    n = diff.size
    value = float(np.sqrt(np.sum(diff * diff) / n))
    if value == 0.0:
        return 0.0, np.zeros_like(diff)
    return value, diff / (n * value)


def _check_same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"image shapes differ: {np.shape(a)} vs {np.shape(b)}")


def loss_rgb(rendered, target):
    """Mean over pixels of the squared color error summed over channels."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(rendered, target)
    n_pix = rendered.shape[0] * rendered.shape[1]
    diff = rendered - target
    return float(np.sum(diff * diff) / n_pix), 2.0 * diff / n_pix


# --- style statistics ------------------------------------------------------

def channel_moments(feat):
    """Per-channel spatial mean and standard deviation of a (1, C, H, W) map."""
    f = feat[0].reshape(feat.shape[1], -1)
    mu = f.mean(axis=1)
    sigma = np.sqrt(f.var(axis=1) + STD_EPS)
    return mu, sigma


def _moments_backward(feat, mu, sigma, d_mu, d_sigma):
    c = feat.shape[1]
    f = feat[0].reshape(c, -1)
    hw = f.shape[1]
    centered = f - mu[:, None]
    grad = d_mu[:, None] / hw + d_sigma[:, None] * centered / (hw * sigma[:, None])
    return grad.reshape(feat.shape)


@dataclass
class StyleTarget:
    """Pooled target moments: per-stage channel means and standard deviations."""

    means: list
    stds: list
    pool_size: int = 0


def style_statistics(pool, extractor: ConvNet) -> StyleTarget:
    """Average the per-image channel moments of every pool image, stage by stage."""
    if len(pool) == 0:
        raise ValueError("style pool is empty")
    sums_mu, sums_sd = None, None
    for image in pool:
        taps = extractor.forward(to_nchw(image)).taps
        stats = [channel_moments(t) for t in taps]
        if sums_mu is None:
            sums_mu = [s[0].copy() for s in stats]
            sums_sd = [s[1].copy() for s in stats]
        else:
            for i, (mu, sd) in enumerate(stats):
                sums_mu[i] += mu
                sums_sd[i] += sd
    n = len(pool)
    return StyleTarget([m / n for m in sums_mu], [s / n for s in sums_sd], n)


def _style_from_taps(taps, target: StyleTarget):
    total = 0.0
    d_taps = []
    for feat, mu_t, sd_t in zip(taps, target.means, target.stds):
        mu, sd = channel_moments(feat)
        v_mu, g_mu = rms_distance(mu - mu_t)
        v_sd, g_sd = rms_distance(sd - sd_t)
        total += v_mu + v_sd
        d_taps.append(_moments_backward(feat, mu, sd, g_mu, g_sd))
    return total, d_taps


def loss_style(image, style, extractor: ConvNet):
    """Global style loss against a pool of images or a precomputed :class:`StyleTarget`."""
    target = style if isinstance(style, StyleTarget) else style_statistics(style, extractor)
    fwd = extractor.forward(to_nchw(image), keep=True)
    value, d_taps = _style_from_taps(fwd.taps, target)
    grad = extractor.backward(fwd, None, d_taps).input
    return value, from_nchw(grad)


# --- adversarial -----------------------------------------------------------

def loss_adv_generator(image, disc: ConvNet):
    """Non-saturating generator loss ``-mean(log D(image))``; D is not updated."""
    fwd = disc.forward(to_nchw(image), keep=True)
    scores = fwd.output
    value = float(-np.mean(np.log(scores + LOG_EPS)))
    d_scores = -1.0 / (scores.size * (scores + LOG_EPS))
    return value, from_nchw(disc.backward(fwd, d_scores).input)


def discriminator_loss(disc: ConvNet, real_images, fake_images, keep=False):
    """``-mean log D(real) - mean log(1 - D(fake))`` on one stacked batch."""
    reals = np.stack([np.asarray(r, dtype=np.float64) for r in real_images])
    fakes = np.stack([np.asarray(f, dtype=np.float64) for f in fake_images])
    batch = to_nchw(np.concatenate([reals, fakes]))
    fwd = disc.forward(batch, keep=keep)
    nr = reals.shape[0]
    s_real, s_fake = fwd.output[:nr], fwd.output[nr:]
    value = float(-np.mean(np.log(s_real + LOG_EPS)) - np.mean(np.log(1.0 - s_fake + LOG_EPS)))
    d_out = np.empty_like(fwd.output)
    d_out[:nr] = -1.0 / (s_real.size * (s_real + LOG_EPS))
    d_out[nr:] = 1.0 / (s_fake.size * (1.0 - s_fake + LOG_EPS))
    return value, fwd, d_out


def loss_disc_step(disc: ConvNet, real_pool, fake, lr=2e-4):
    """One Adam step on the discriminator; returns the loss after the step.

    ``fake`` may be one image or a list; it is treated as a constant.
    """
    if len(real_pool) == 0:
        raise ValueError("real pool is empty")
    fakes = [fake] if np.ndim(fake) == 3 else list(fake)
    if disc.optimizer is None:
        disc.attach_optimizer(lr, betas=(0.5, 0.999))
    _, fwd, d_out = discriminator_loss(disc, real_pool, fakes, keep=True)
    disc.apply_gradients(disc.backward(fwd, d_out), lr)
    return discriminator_loss(disc, real_pool, fakes)[0]


def patch_accuracy(disc: ConvNet, real_images, fake_images):
    """Fraction of discriminator patch scores on the correct side of 0.5."""
    _, fwd, _ = discriminator_loss(disc, real_images, fake_images)
    nr = len(real_images)
    hits = np.sum(fwd.output[:nr] > 0.5) + np.sum(fwd.output[nr:] < 0.5)
    return float(hits) / fwd.output.size


# --- structure consistency -------------------------------------------------

def loss_content(image, reference, extractor: ConvNet, reference_feature=None):
    """RMS distance between the deepest extractor stages of ``image`` and ``reference``."""
    _check_same_shape(image, reference)
    if reference_feature is None:
        reference_feature = extractor.forward(to_nchw(reference)).taps[-1]
    fwd = extractor.forward(to_nchw(image), keep=True)
    value, g = rms_distance(fwd.taps[-1] - reference_feature)
    d_taps = [None] * (len(fwd.taps) - 1) + [g]
    return value, from_nchw(extractor.backward(fwd, None, d_taps).input)


@dataclass
class DepthReference:
    """Frozen depth-net outputs for a reference image (prediction + encoder taps)."""

    prediction: np.ndarray
    encoder: list

    @classmethod
    def compute(cls, depthnet: ConvNet, image):
        fwd = depthnet.forward(to_nchw(image))
        return cls(fwd.output, fwd.taps)


def _depth_from_fwd(fwd: ForwardPass, ref: DepthReference):
    value, g_out = rms_distance(fwd.output - ref.prediction)
    d_taps = []
    for feat, ref_feat in zip(fwd.taps, ref.encoder):
        v, g = rms_distance(feat - ref_feat)
        value += v
        d_taps.append(g)
    return value, g_out, d_taps


def loss_depth(image, reference, depthnet: ConvNet, reference_out: DepthReference | None = None):
    """Depth-prediction distance plus one distance per encoder stage (K + 1 terms)."""
    _check_same_shape(image, reference)
    ref = reference_out or DepthReference.compute(depthnet, reference)
    fwd = depthnet.forward(to_nchw(image), keep=True)
    value, g_out, d_taps = _depth_from_fwd(fwd, ref)
    return value, from_nchw(depthnet.backward(fwd, g_out, d_taps).input)


def depth_terms(image, reference, depthnet: ConvNet):
    """The individual terms summed by :func:`loss_depth` (prediction first)."""
    a = depthnet.forward(to_nchw(image))
    b = depthnet.forward(to_nchw(reference))
    return [rms_distance(a.output - b.output)[0]] + [
        rms_distance(x - y)[0] for x, y in zip(a.taps, b.taps)
    ]


# --- combined objective ----------------------------------------------------

@dataclass
class LossWeights:
    style: float = 1.0
    adv: float = 1.0
    content: float = 1.0
    depth: float = 1.0
    use_style: bool = True
    use_adv: bool = True
    use_content: bool = True
    use_depth: bool = True

    def __post_init__(self):
        for name in TERMS:
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")

    def effective(self, term):
        return getattr(self, term) if getattr(self, f"use_{term}") else 0.0


@dataclass
class Nets:
    extractor: ConvNet
    discriminator: ConvNet
    depthnet: ConvNet


@dataclass
class LossReport:
    total: float
    terms: dict = field(default_factory=dict)
    grad: np.ndarray | None = None


@dataclass
class ReferenceCache:
    """Everything about a virtual reference image that the phase-2 loss reuses."""

    content_feature: np.ndarray
    depth: DepthReference

    @classmethod
    def compute(cls, image, nets: Nets):
        return cls(nets.extractor.forward(to_nchw(image)).taps[-1],
                   DepthReference.compute(nets.depthnet, image))


def loss_efficient(image, reference, style: StyleTarget, nets: Nets, weights: LossWeights,
                   reference_cache: ReferenceCache | None = None) -> LossReport:
    """Weighted sum of style, adversarial, content and depth terms with its image gradient.

    Terms whose effective weight is zero are skipped and report exactly 0.
    """
    image = np.asarray(image, dtype=np.float64)
    _check_same_shape(image, reference)
    w = {t: weights.effective(t) for t in TERMS}
    terms = {t: 0.0 for t in TERMS}
    grad = np.zeros_like(image)
    x = to_nchw(image)

    if w["style"] or w["content"]:
        fwd = nets.extractor.forward(x, keep=True)
        d_taps = [None] * len(fwd.taps)
        if w["style"]:
            terms["style"], st_taps = _style_from_taps(fwd.taps, style)
            d_taps = [w["style"] * g for g in st_taps]
        if w["content"]:
            ref_feat = (reference_cache.content_feature if reference_cache is not None
                        else nets.extractor.forward(to_nchw(reference)).taps[-1])
            terms["content"], g = rms_distance(fwd.taps[-1] - ref_feat)
            d_taps[-1] = w["content"] * g if d_taps[-1] is None else d_taps[-1] + w["content"] * g
        grad += from_nchw(nets.extractor.backward(fwd, None, d_taps).input)

    if w["adv"]:
        terms["adv"], g = loss_adv_generator(image, nets.discriminator)
        grad += w["adv"] * g

    if w["depth"]:
        ref = (reference_cache.depth if reference_cache is not None
               else DepthReference.compute(nets.depthnet, reference))
        fwd = nets.depthnet.forward(x, keep=True)
        terms["depth"], g_out, d_taps = _depth_from_fwd(fwd, ref)
        g_in = nets.depthnet.backward(fwd, w["depth"] * g_out, [w["depth"] * g for g in d_taps]).input
        grad += from_nchw(g_in)

    total = sum(w[t] * terms[t] for t in TERMS)
    return LossReport(float(total), terms, grad)
