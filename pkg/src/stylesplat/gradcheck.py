"""Central finite-difference checks for the renderer, every layer type and every loss.

Each check contracts the function output with a fixed random weight tensor so
a single scalar is differentiated, then compares analytic and numeric
gradients entrywise: an entry whose magnitude is below ``abs_tol`` must
match to ``abs_tol`` absolutely, every other entry to ``rel_tol`` relatively.
The sampled gradient vector as a whole must also match to ``rel_tol`` in
relative L2 error, which keeps checks meaningful when every entry is tiny.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import (LossWeights, Nets, loss_adv_generator, loss_content, loss_depth,
                     loss_efficient, loss_rgb, loss_style, style_statistics)
from .nets import (Conv2d, LeakyReLU, Sigmoid, Softplus, Upsample2x, build_depthnet,
                   build_discriminator, build_extractor)
from .rasterizer import render, render_backward
from .scene import Camera, GaussianCloud

REL_TOL = 1e-2
ABS_TOL = 1e-4


@dataclass
class GradCheck:
    name: str
    max_abs: float
    max_rel: float
    vector_rel: float
    checked: int
    passed: bool

    def __str__(self):
        flag = "ok  " if self.passed else "FAIL"
        return (f"{flag} {self.name:<28} n={self.checked:<5d} max_abs={self.max_abs:.2e} "
                f"max_rel={self.max_rel:.2e} vec_rel={self.vector_rel:.2e}")


def compare(name, analytic, numeric, rel_tol=REL_TOL, abs_tol=ABS_TOL) -> GradCheck:
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    small = scale < abs_tol
    rel = np.where(small, 0.0, err / np.maximum(scale, 1e-300))
    max_rel = float(rel.max()) if rel.size else 0.0
    max_abs = float(err.max()) if err.size else 0.0
    norm = float(np.linalg.norm(numeric))
    vec_rel = float(np.linalg.norm(analytic - numeric)) / norm if norm > 0 else float(np.linalg.norm(analytic))
    entry_ok = bool(np.all(err[small] < abs_tol)) and max_rel < rel_tol
    return GradCheck(name, max_abs, max_rel, vec_rel, analytic.size, entry_ok and vec_rel < rel_tol)


def numeric_grad(f, x, index_list, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. ``x[i]`` for each index (``x`` edited in place)."""
    out = np.empty(len(index_list))
    for k, i in enumerate(index_list):
        orig = x[i]
        x[i] = orig + eps
        hi = f()
        x[i] = orig - eps
        lo = f()
        x[i] = orig
        out[k] = (hi - lo) / (2.0 * eps)
    return out


def _sample(shape, rng, limit):
    all_idx = list(np.ndindex(*shape))
    if limit is None or len(all_idx) <= limit:
        return all_idx
    pick = rng.choice(len(all_idx), size=limit, replace=False)
    return [all_idx[j] for j in np.sort(pick)]


# --- renderer --------------------------------------------------------------

def random_scene(rng, n=8, sh_degree=2, size=32):
    """A few random Gaussians in front of a small camera at the origin."""
    pos = rng.uniform([-0.8, -0.8, 3.0], [0.8, 0.8, 5.0], (n, 3))
    cloud = GaussianCloud(pos, np.log(rng.uniform(0.1, 0.4, (n, 3))), rng.normal(size=(n, 4)),
                          rng.normal(0.5, 1.0, n), rng.normal(0.0, 0.5, (n, (sh_degree + 1) ** 2, 3)),
                          sh_degree, rng.uniform(0.0, 1.0, 3))
    f = 1.2 * size
    return cloud, Camera(f, f, (size - 1) / 2.0, (size - 1) / 2.0, size, size)


def check_renderer(seed=0, n=8, backend=None, eps=1e-6):
    """Finite-difference check of all five parameter classes through the full render."""
    rng = np.random.default_rng(seed)
    cloud, cam = random_scene(rng, n)
    weight = rng.normal(size=(cam.height, cam.width, 3))
    grads = render_backward(cloud, cam, weight, backend=backend).as_dict()

    def loss():
        return float(np.sum(render(cloud, cam, backend) * weight))

    results = []
    for name in ("positions", "log_scales", "rotations", "opacity_logits", "sh"):
        arr = getattr(cloud, name)
        idx = list(np.ndindex(*arr.shape))
        num = numeric_grad(loss, arr, idx, eps)
        results.append(compare(f"render/{name}", [grads[name][i] for i in idx], num))
    return results


# --- layers ----------------------------------------------------------------

def _layer_cases(rng):
    return [
        ("conv3x3/s1", Conv2d(3, 4, stride=1, rng=rng)),
        ("conv3x3/s2", Conv2d(3, 4, stride=2, rng=rng)),
        ("conv1x1", Conv2d(3, 2, kernel=1, rng=rng)),
        ("leaky_relu", LeakyReLU()),
        ("upsample2x", Upsample2x()),
        ("sigmoid", Sigmoid()),
        ("softplus", Softplus()),
    ]


def check_layers(seed=0, eps=1e-6, limit=60):
    """Input and parameter gradients of every layer type."""
    rng = np.random.default_rng(seed)
    results = []
    for name, layer in _layer_cases(rng):
        x = rng.normal(size=(2, 3, 8, 8))
        y, cache = layer.forward(x)
        weight = rng.normal(size=y.shape)
        dx, pgrads = layer.backward(cache, weight)

        def loss():
            return float(np.sum(layer.forward(x)[0] * weight))

        idx = _sample(x.shape, rng, limit)
        results.append(compare(f"layer/{name}/input", [dx[i] for i in idx], numeric_grad(loss, x, idx, eps)))
        if getattr(layer, "has_params", False):
            for pname, arr in layer.params().items():
                idx = _sample(arr.shape, rng, limit)
                results.append(compare(f"layer/{name}/{pname}", [pgrads[pname][i] for i in idx],
                                       numeric_grad(loss, arr, idx, eps)))
    return results


# --- losses ----------------------------------------------------------------

def small_nets(seed=0):
    """Narrow copies of the three networks, for fast checks."""
    return Nets(build_extractor(seed, widths=(4, 8, 8, 8)),
                build_discriminator(seed + 1, widths=(4, 8, 8, 8)),
                build_depthnet(seed + 2, widths=(4, 8, 8, 8)))


def check_losses(seed=0, size=64, eps=1e-6, limit=24):
    """Image gradient of each loss and of the weighted combination."""
    rng = np.random.default_rng(seed)
    nets = small_nets(seed)
    image = rng.uniform(0.1, 0.9, (size, size, 3))
    reference = np.clip(image + rng.normal(0.0, 0.1, image.shape), 0.0, 1.0)
    pool = [rng.uniform(0.0, 1.0, (size, size, 3)) for _ in range(2)]
    style = style_statistics(pool, nets.extractor)
    weights = LossWeights(0.7, 1.3, 0.9, 1.1)
    cases = {
        "rgb": lambda img: loss_rgb(img, reference),
        "style": lambda img: loss_style(img, style, nets.extractor),
        "adv": lambda img: loss_adv_generator(img, nets.discriminator),
        "content": lambda img: loss_content(img, reference, nets.extractor),
        "depth": lambda img: loss_depth(img, reference, nets.depthnet),
        "combined": lambda img: (lambda r: (r.total, r.grad))(
            loss_efficient(img, reference, style, nets, weights)),
    }
    results = []
    for name, fn in cases.items():
        _, grad = fn(image)
        idx = _sample(image.shape, rng, limit)
        num = numeric_grad(lambda: fn(image)[0], image, idx, eps)
        results.append(compare(f"loss/{name}", [grad[i] for i in idx], num))
    return results


def run_all(seed=0, backend=None):
    return check_renderer(seed, backend=backend) + check_layers(seed) + check_losses(seed)
