"""A small convolutional-network kit with explicit forward and reverse passes.

Tensors are float64 in (N, C, H, W) layout.  Network weights always hold
float32-representable values (initialization and every optimizer step round
through float32), which is what makes the SSNW weight files lossless.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .optim import Adam

LEAKY_SLOPE = 0.2


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def to_nchw(image):
    """(H, W, 3) image or (N, H, W, 3) batch to (N, 3, H, W)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image[None]
    return np.ascontiguousarray(image.transpose(0, 3, 1, 2))


def from_nchw(grad):
    """Inverse of :func:`to_nchw` for a single image."""
    return np.ascontiguousarray(grad[0].transpose(1, 2, 0))


class Conv2d:
    """k x k convolution, stride 1 or 2, zero padding k // 2."""

    has_params = True

    def __init__(self, in_ch, out_ch, kernel=3, stride=1, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        fan_in = in_ch * kernel * kernel
        bound = np.sqrt(6.0 / fan_in)
        self.weight = _f32(rng.uniform(-bound, bound, (out_ch, in_ch, kernel, kernel)))
        b_bound = 1.0 / np.sqrt(fan_in)
        self.bias = _f32(rng.uniform(-b_bound, b_bound, out_ch))
        self.stride = stride

    @property
    def kernel(self):
        return self.weight.shape[2]

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def out_size(self, h, w):
        pad = self.kernel // 2
        s = self.stride
        return (h + 2 * pad - self.kernel) // s + 1, (w + 2 * pad - self.kernel) // s + 1

    def forward(self, x):
        n, c, h, w = x.shape
        if c != self.weight.shape[1]:
            raise ValueError(f"conv expects {self.weight.shape[1]} input channels, got {c}")
        k, s, pad = self.kernel, self.stride, self.kernel // 2
        ho, wo = self.out_size(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        cols = np.empty((n, c, k, k, ho, wo))
        for ky in range(k):
            for kx in range(k):
                cols[:, :, ky, kx] = xp[:, :, ky:ky + s * (ho - 1) + 1:s, kx:kx + s * (wo - 1) + 1:s]
        cols = cols.reshape(n, c * k * k, ho * wo)
        out = np.matmul(self.weight.reshape(self.weight.shape[0], -1), cols)
        out += self.bias[None, :, None]
        return out.reshape(n, -1, ho, wo), (cols, x.shape)

    def backward(self, cache, dy):
        cols, (n, c, h, w) = cache
        k, s, pad = self.kernel, self.stride, self.kernel // 2
        o, ho, wo = dy.shape[1], dy.shape[2], dy.shape[3]
        dy_flat = dy.reshape(n, o, ho * wo)
        grads = {
            "weight": np.tensordot(dy_flat, cols, axes=([0, 2], [0, 2])).reshape(self.weight.shape),
            "bias": dy_flat.sum(axis=(0, 2)),
        }
        dcols = np.matmul(self.weight.reshape(o, -1).T, dy_flat).reshape(n, c, k, k, ho, wo)
        dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        for ky in range(k):
            for kx in range(k):
                dxp[:, :, ky:ky + s * (ho - 1) + 1:s, kx:kx + s * (wo - 1) + 1:s] += dcols[:, :, ky, kx]
        dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
        return dx, grads


class LeakyReLU:
    has_params = False

    def __init__(self, slope=LEAKY_SLOPE):
        self.slope = slope

    def forward(self, x):
        pos = x > 0
        return np.where(pos, x, self.slope * x), pos

    def backward(self, pos, dy):
        return np.where(pos, dy, self.slope * dy), {}


class Upsample2x:
    """Nearest-neighbour upsampling by two."""

    has_params = False

    def forward(self, x):
        return x.repeat(2, axis=2).repeat(2, axis=3), None

    def backward(self, cache, dy):
        n, c, h, w = dy.shape
        return dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)), {}


class Sigmoid:
    has_params = False

    def forward(self, x):
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return y, y

    def backward(self, y, dy):
        return dy * y * (1.0 - y), {}


class Softplus:
    has_params = False

    def forward(self, x):
        return np.logaddexp(0.0, x), x

    def backward(self, x, dy):
        return dy * 0.5 * (1.0 + np.tanh(0.5 * x)), {}


@dataclass
class ForwardPass:
    """Output, tapped activations and the caches reverse mode needs."""

    output: np.ndarray
    taps: list
    caches: list | None = None


@dataclass
class NetGradients:
    layers: list
    input: np.ndarray

    def flat(self):
        return [g for layer in self.layers for g in layer.values()]


@dataclass
class ConvNet:
    """Sequential network; ``taps`` lists layer indices whose outputs are exposed."""

    layers: list
    taps: tuple = ()
    min_size: int = 1
    divisor: int = 1
    name: str = ""
    optimizer: Adam | None = field(default=None, repr=False)
    train_losses: list = field(default_factory=list, repr=False)

    def check_input(self, x):
        h, w = x.shape[2], x.shape[3]
        if h < self.min_size or w < self.min_size:
            raise ValueError(f"{self.name or 'network'} needs inputs of at least "
                             f"{self.min_size}x{self.min_size}, got {h}x{w}")
        if h % self.divisor or w % self.divisor:
            raise ValueError(f"{self.name or 'network'} needs input sides divisible by "
                             f"{self.divisor}, got {h}x{w}")

    def forward(self, x, keep=False) -> ForwardPass:
        """Run the net; ``keep=True`` stores what :meth:`backward` needs."""
        x = np.asarray(x, dtype=np.float64)
        self.check_input(x)
        taps, caches = [], [] if keep else None
        tap_set = set(self.taps)
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(x)
            if keep:
                caches.append(cache)
            if i in tap_set:
                taps.append(x)
        return ForwardPass(x, taps, caches)

    def backward(self, fwd: ForwardPass, d_output=None, d_taps=None) -> NetGradients:
        """Reverse pass.  ``d_taps`` holds one gradient (or None) per tap."""
        if fwd.caches is None:
            raise ValueError("forward activations were not kept; call forward(..., keep=True)")
        grad = np.zeros_like(fwd.output) if d_output is None else np.asarray(d_output, dtype=np.float64)
        tap_grads = {}
        if d_taps is not None:
            tap_grads = {idx: g for idx, g in zip(self.taps, d_taps) if g is not None}
        layer_grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            if i in tap_grads:
                grad = grad + tap_grads[i]
            grad, layer_grads[i] = self.layers[i].backward(fwd.caches[i], grad)
        return NetGradients(layer_grads, grad)

    def parameters(self):
        """Flat list of parameter arrays in layer order (weight before bias)."""
        return [p for layer in self.layers if layer.has_params for p in layer.params().values()]

    def gradient_list(self, grads: NetGradients):
        return [grads.layers[i][k] for i, layer in enumerate(self.layers) if layer.has_params
                for k in layer.params()]

    def attach_optimizer(self, lr, betas=(0.9, 0.999)):
        params = self.parameters()
        self.optimizer = Adam({str(i): (p, lr) for i, p in enumerate(params)}, betas=betas)
        return self.optimizer

    def apply_gradients(self, grads: NetGradients, lr=None):
        if self.optimizer is None:
            raise RuntimeError("no optimizer attached")
        if lr is not None:
            for name in self.optimizer.names:
                self.optimizer.set_lr(name, lr)
        flat = self.gradient_list(grads)
        self.optimizer.step({str(i): g for i, g in enumerate(flat)})
        for p in self.parameters():
            p[...] = _f32(p)

    def copy(self):
        import copy
        dup = copy.deepcopy(self)
        dup.optimizer = None
        return dup


def random_color_transform(rng, strength):
    """Random global affine color map: per-channel gains, channel mixing and offset."""
    m = np.diag(rng.uniform(1.0 - strength, 1.0 + strength, 3))
    m += (1.0 - np.eye(3)) * rng.uniform(-strength / 3.0, strength / 3.0, (3, 3))
    return m, rng.uniform(-strength / 4.0, strength / 4.0, 3)


def train_depthnet(images, depths, masks=None, steps=600, lr=1e-3, batch_size=4, seed=0,
                   net: ConvNet | None = None, color_jitter=0.0) -> ConvNet:
    """Fit a depth network to (image, depth) pairs with masked MSE and Adam.

    Args:
        images: sequence of (H, W, 3) images.
        depths: matching (H, W) depth maps.
        masks: optional (H, W) boolean validity masks; defaults to all valid.
        color_jitter: if > 0, every sample gets a random global color map of
            this strength so predictions depend on structure rather than color.

    Returns the trained net; ``net.train_losses`` holds the per-step losses.
    """
    if len(images) == 0:
        raise ValueError("depth training set is empty")
    if len(images) != len(depths):
        raise ValueError("images and depths differ in count")
    x_all = to_nchw(np.stack(images))
    d_all = np.stack([np.asarray(d, dtype=np.float64) for d in depths])[:, None]
    if masks is None:
        m_all = np.ones_like(d_all, dtype=bool)
    else:
        m_all = np.stack([np.asarray(m, dtype=bool) for m in masks])[:, None]
    if net is None:
        net = build_depthnet(seed)
        head = [layer for layer in net.layers if isinstance(layer, Conv2d)][-1]
        mean_depth = float(d_all[m_all].mean()) if m_all.any() else 1.0
        # start the softplus head at the mean depth
        head.bias[...] = _f32([np.log(np.expm1(max(mean_depth, 1e-3)))])
    if net.optimizer is None:
        net.attach_optimizer(lr)
    rng = np.random.default_rng(seed)
    n = x_all.shape[0]
    batch_size = min(batch_size, n)
    for _ in range(steps):
        pick = np.sort(rng.choice(n, size=batch_size, replace=False))
        x = x_all[pick]
        if color_jitter > 0.0:
            x = x.copy()
            for b in range(batch_size):
                m, off = random_color_transform(rng, color_jitter)
                x[b] = np.clip(np.einsum("ij,jhw->ihw", m, x[b]) + off[:, None, None], 0.0, 1.0)
        fwd = net.forward(x, keep=True)
        mask = m_all[pick]
        count = max(int(mask.sum()), 1)
        diff = np.where(mask, fwd.output - d_all[pick], 0.0)
        net.train_losses.append(float(np.sum(diff * diff) / count))
        if lr == 0.0:
            continue
        grads = net.backward(fwd, 2.0 * diff / count)
        net.apply_gradients(grads, lr)
    return net


def net_backward(net: ConvNet, fwd: ForwardPass, d_output, d_taps=None) -> NetGradients:
    return net.backward(fwd, d_output, d_taps)


def _encoder(widths, rng, in_ch=3):
    layers, taps, c = [], [], in_ch
    for w in widths:
        layers += [Conv2d(c, w, 3, 2, rng), LeakyReLU()]
        taps.append(len(layers) - 1)
        c = w
    return layers, taps


def build_extractor(seed=0, widths=(16, 32, 64, 128)) -> ConvNet:
    """Fixed multi-scale feature pyramid: 4 x (conv3x3 stride 2 + leaky ReLU)."""
    rng = np.random.default_rng(seed)
    layers, taps = _encoder(widths, rng)
    return ConvNet(layers, tuple(taps), min_size=32, divisor=1, name="extractor")


def build_discriminator(seed=0, widths=(16, 32, 64, 64), zero_head=False, min_size=64) -> ConvNet:
    """Patch discriminator: 4 stride-2 stages, 1x1 conv to one logit, sigmoid."""
    rng = np.random.default_rng(seed)
    layers, _ = _encoder(widths, rng)
    head = Conv2d(widths[-1], 1, 1, 1, rng)
    if zero_head:
        head.weight[...] = 0.0
        head.bias[...] = 0.0
    layers += [head, Sigmoid()]
    return ConvNet(layers, (), min_size=min_size, divisor=16, name="discriminator")


def build_depthnet(seed=0, widths=(16, 32, 64, 128)) -> ConvNet:
    """Encoder-decoder depth regressor with softplus head; taps are the encoder stages."""
    rng = np.random.default_rng(seed)
    layers, taps = _encoder(widths, rng)
    dec = list(widths[::-1][1:]) + [widths[0]]
    c = widths[-1]
    for w in dec:
        layers += [Upsample2x(), Conv2d(c, w, 3, 1, rng), LeakyReLU()]
        c = w
    layers += [Conv2d(c, 1, 3, 1, rng), Softplus()]
    return ConvNet(layers, tuple(taps), min_size=2 ** len(widths), divisor=2 ** len(widths), name="depthnet")


def extractor_forward(net: ConvNet, image, keep=False) -> ForwardPass:
    """Feature pyramid of an (H, W, 3) image; ``.taps`` holds the 4 stage outputs."""
    return net.forward(to_nchw(image), keep)


def discriminator_forward(net: ConvNet, image, keep=False) -> ForwardPass:
    """Per-patch real-probabilities, output (N, 1, H/16, W/16)."""
    return net.forward(to_nchw(image), keep)


def depthnet_forward(net: ConvNet, image, keep=False) -> ForwardPass:
    """Depth map (N, 1, H, W) in ``.output``; encoder features E1..E4 in ``.taps``."""
    return net.forward(to_nchw(image), keep)


# --- SSNW weight files ---------------------------------------------------

NET_MAGIC = b"SSNW"
NET_VERSION = 1
_KIND_CONV_S1, _KIND_CONV_S2, _KIND_LRELU, _KIND_UP, _KIND_SIGMOID, _KIND_SOFTPLUS = 1, 2, 3, 4, 5, 6


def _layer_kind(layer):
    if isinstance(layer, Conv2d):
        return {1: _KIND_CONV_S1, 2: _KIND_CONV_S2}[layer.stride]
    for cls, kind in ((LeakyReLU, _KIND_LRELU), (Upsample2x, _KIND_UP),
                      (Sigmoid, _KIND_SIGMOID), (Softplus, _KIND_SOFTPLUS)):
        if isinstance(layer, cls):
            return kind
    raise TypeError(f"cannot serialize layer {layer!r}")


def save_weights(net: ConvNet, path):
    """Write ``net`` as an SSNW file (little-endian).

    Layout: magic, u32 version, u32 layer count, then per layer u32 kind,
    u32 ndim, ndim x u32 dims, f32 weights, f32 biases; trailer: u32 tap count,
    tap indices, u32 min_size, u32 divisor, u32 name length, utf-8 name.
    """
    out = [NET_MAGIC, struct.pack("<II", NET_VERSION, len(net.layers))]
    for layer in net.layers:
        kind = _layer_kind(layer)
        if isinstance(layer, Conv2d):
            shape = layer.weight.shape
            out.append(struct.pack("<II", kind, len(shape)) + struct.pack(f"<{len(shape)}I", *shape))
            out.append(layer.weight.astype("<f4").tobytes())
            out.append(layer.bias.astype("<f4").tobytes())
        else:
            out.append(struct.pack("<II", kind, 0))
    name = net.name.encode("utf-8")
    out.append(struct.pack(f"<I{len(net.taps)}I", len(net.taps), *net.taps))
    out.append(struct.pack("<III", net.min_size, net.divisor, len(name)) + name)
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ValueError("weight file is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals if count > 1 else vals[0]


def load_weights(path) -> ConvNet:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != NET_MAGIC:
        raise ValueError("not an SSNW weight file")
    version = r.u32()
    if version != NET_VERSION:
        raise ValueError(f"unsupported SSNW version {version}")
    layers = []
    for _ in range(r.u32()):
        kind, ndim = r.u32(), r.u32()
        shape = tuple(r.u32(ndim)) if ndim > 1 else ((r.u32(),) if ndim == 1 else ())
        if kind in (_KIND_CONV_S1, _KIND_CONV_S2):
            conv = Conv2d.__new__(Conv2d)
            conv.stride = 1 if kind == _KIND_CONV_S1 else 2
            size = int(np.prod(shape))
            conv.weight = np.frombuffer(r.take(4 * size), "<f4").astype(np.float64).reshape(shape)
            conv.bias = np.frombuffer(r.take(4 * shape[0]), "<f4").astype(np.float64).copy()
            layers.append(conv)
        elif kind == _KIND_LRELU:
            layers.append(LeakyReLU())
        elif kind == _KIND_UP:
            layers.append(Upsample2x())
        elif kind == _KIND_SIGMOID:
            layers.append(Sigmoid())
        elif kind == _KIND_SOFTPLUS:
            layers.append(Softplus())
        else:
            raise ValueError(f"unknown layer kind {kind}")
    n_taps = r.u32()
    taps = tuple(r.u32(n_taps)) if n_taps > 1 else ((r.u32(),) if n_taps == 1 else ())
    min_size, divisor, name_len = r.u32(3)
    name = r.take(name_len).decode("utf-8")
    if r.pos != len(r.data):
        raise ValueError("weight file has trailing bytes")
    return ConvNet(layers, taps, min_size, divisor, name)
