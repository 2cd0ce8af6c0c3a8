"""Independent reference implementations used only by the tests.

Nothing here imports the rendering, network or metric code under test; each
oracle is written in the most literal (slow) form available.
"""
import math

import numpy as np
from scipy.spatial.transform import Rotation
from scipy.special import sph_harm_y

# --- spherical harmonics ---------------------------------------------------


def real_sh_scipy(l, m, dirs):
    """Orthonormal real SH built from scipy's complex harmonics."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    theta = np.arccos(np.clip(z, -1.0, 1.0))
    phi = np.arctan2(y, x)
    if m == 0:
        return sph_harm_y(l, 0, theta, phi).real
    if m > 0:
        return math.sqrt(2.0) * (-1) ** m * sph_harm_y(l, m, theta, phi).real
    return math.sqrt(2.0) * (-1) ** m * sph_harm_y(l, -m, theta, phi).imag


def sh_basis_scipy(dirs, degree):
    """Real SH without the Condon-Shortley phase, index l*l + l + m."""
    dirs = np.atleast_2d(dirs)
    cols = [(-1) ** m * real_sh_scipy(l, m, dirs) for l in range(degree + 1) for m in range(-l, l + 1)]
    return np.stack(cols, axis=1)


def sh_color_scipy(coeffs, direction, degree):
    basis = sh_basis_scipy(np.asarray(direction)[None], degree)[0]
    return np.maximum(basis @ np.asarray(coeffs).reshape(-1, 3) + 0.5, 0.0)


def fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * k / n)
    azim = math.pi * (1.0 + math.sqrt(5.0)) * k
    return np.stack([np.sin(polar) * np.cos(azim), np.sin(polar) * np.sin(azim), np.cos(polar)], axis=1)


# --- projection --------------------------------------------------------------


def covariance_scipy(scale, quat_wxyz):
    rot = Rotation.from_quat([quat_wxyz[1], quat_wxyz[2], quat_wxyz[3], quat_wxyz[0]]).as_matrix()
    return rot @ np.diag(np.asarray(scale) ** 2) @ rot.T


def cofactor_inverse_2x2(m):
    a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    det = a * d - b * c
    return np.array([[d, -b], [-c, a]]) / det


def brute_force_render(cloud, camera, near=0.2, cov_reg=0.3, fov_clamp=1.3, sh_eval=None):
    """Per-pixel front-to-back compositing over every visible Gaussian.

    ``sh_eval(coeffs (K,3), unit dir (3,), degree) -> rgb`` supplies the color
    model; splats are sorted by (depth, index) globally and the image is
    computed one pixel at a time with no tiling.
    """
    c2w_r, c2w_t = camera.rotation, camera.translation
    w2c = c2w_r.T
    lim_x = fov_clamp * 0.5 * camera.width / camera.fx
    lim_y = fov_clamp * 0.5 * camera.height / camera.fy
    splats = []
    for i in range(len(cloud)):
        p = cloud.positions[i]
        t = w2c @ (p - c2w_t)
        if t[2] <= near:
            continue
        ux, uy = t[0] / t[2], t[1] / t[2]
        if abs(ux) > lim_x or abs(uy) > lim_y:
            continue
        cov3 = covariance_scipy(np.exp(cloud.log_scales[i]), cloud.rotations[i] / np.linalg.norm(cloud.rotations[i]))
        jac = np.array([[camera.fx / t[2], 0.0, -camera.fx * ux / t[2]],
                        [0.0, camera.fy / t[2], -camera.fy * uy / t[2]]])
        cov2 = jac @ w2c @ cov3 @ w2c.T @ jac.T + cov_reg * np.eye(2)
        lam = np.linalg.eigvalsh(cov2)
        radius = 3.0 * math.sqrt(lam.max())
        mean = np.array([camera.fx * ux + camera.cx, camera.fy * uy + camera.cy])
        if (mean[0] + radius < 0 or mean[0] - radius > camera.width - 1
                or mean[1] + radius < 0 or mean[1] - radius > camera.height - 1):
            continue
        d = (p - c2w_t) / np.linalg.norm(p - c2w_t)
        color = sh_eval(cloud.sh[i], d, cloud.sh_degree)
        opacity = 1.0 / (1.0 + math.exp(-cloud.opacity_logits[i]))
        splats.append((t[2], i, mean, cofactor_inverse_2x2(cov2), opacity, color))
    splats.sort(key=lambda s: (s[0], s[1]))
    img = np.zeros((camera.height, camera.width, 3))
    for py in range(camera.height):
        for px in range(camera.width):
            trans, acc = 1.0, np.zeros(3)
            for depth, _, mean, inv, opacity, color in splats:
                dvec = np.array([px, py]) - mean
                power = -0.5 * dvec @ inv @ dvec
                if power > 0.0 or power < -4.5:
                    continue
                alpha = min(0.99, opacity * math.exp(power))
                if alpha < 1.0 / 255.0:
                    continue
                acc += trans * alpha * color
                trans *= 1.0 - alpha
                if trans < 1e-4:
                    break
            img[py, px] = acc + trans * cloud.background
    return img


# --- networks --------------------------------------------------------------


def naive_conv2d(x, weight, bias, stride, pad):
    """Direct six-loop cross-correlation (N, C, H, W) -> (N, O, H', W')."""
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[b, oc, i, j] = np.sum(patch * weight[oc]) + bias[oc]
    return out


# --- metrics ---------------------------------------------------------------


def psnr_two_loop(a, b):
    total, count = 0.0, 0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            for ch in range(a.shape[2]):
                diff = float(a[i, j, ch]) - float(b[i, j, ch])
                total += diff * diff
                count += 1
    mse = total / count
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def mmd2_gram(fa, fb, degree=3, coef=1.0):
    """Biased squared MMD written out with explicit kernel-matrix loops."""
    d = fa.shape[1]

    def k(u, v):
        return (float(np.dot(u, v)) / d + coef) ** degree

    kaa = sum(k(u, v) for u in fa for v in fa) / len(fa) ** 2
    kbb = sum(k(u, v) for u in fb for v in fb) / len(fb) ** 2
    kab = sum(k(u, v) for u in fa for v in fb) / (len(fa) * len(fb))
    return kaa + kbb - 2.0 * kab
