"""Conv layers against a loop oracle, network shapes, SSNW files and depth-net training."""
import numpy as np
import pytest

from oracles import naive_conv2d
from stylesplat.nets import (Conv2d, LeakyReLU, Sigmoid, Softplus, Upsample2x, build_depthnet,
                             build_discriminator, build_extractor, depthnet_forward,
                             discriminator_forward, extractor_forward, load_weights, random_color_transform,
                             save_weights, to_nchw, train_depthnet)


@pytest.mark.parametrize("stride,kernel", [(1, 3), (2, 3), (1, 1)])
def test_conv_matches_loop_oracle(rng, stride, kernel):
    conv = Conv2d(3, 5, kernel=kernel, stride=stride, rng=rng)
    x = rng.normal(size=(2, 3, 9, 10))
    y, _ = conv.forward(x)
    np.testing.assert_allclose(y, naive_conv2d(x, conv.weight, conv.bias, stride, kernel // 2), atol=1e-12)


def test_activations_pointwise(rng):
    x = rng.normal(size=(1, 2, 3, 3))
    np.testing.assert_allclose(LeakyReLU().forward(x)[0], np.where(x > 0, x, 0.2 * x))
    np.testing.assert_allclose(Sigmoid().forward(x)[0], 1 / (1 + np.exp(-x)))
    np.testing.assert_allclose(Softplus().forward(x)[0], np.log1p(np.exp(x)))
    big = np.array([[[[800.0, -800.0]]]])
    assert np.all(np.isfinite(Softplus().forward(big)[0]))
    assert np.all(np.isfinite(Sigmoid().forward(big)[0]))


def test_upsample_repeats_pixels(rng):
    x = rng.normal(size=(1, 1, 2, 2))
    y, _ = Upsample2x().forward(x)
    assert y.shape == (1, 1, 4, 4)
    assert np.all(y[0, 0, :2, :2] == x[0, 0, 0, 0])


def test_weights_are_float32_representable():
    for net in (build_extractor(), build_discriminator(), build_depthnet()):
        for p in net.parameters():
            assert np.array_equal(p, p.astype(np.float32).astype(np.float64))


def test_network_shapes(rng):
    img = rng.uniform(size=(64, 64, 3))
    ext = extractor_forward(build_extractor(), img)
    assert [t.shape for t in ext.taps] == [(1, 16, 32, 32), (1, 32, 16, 16), (1, 64, 8, 8), (1, 128, 4, 4)]
    disc = discriminator_forward(build_discriminator(), img)
    assert disc.output.shape == (1, 1, 4, 4)
    assert np.all((disc.output > 0) & (disc.output < 1))
    dep = depthnet_forward(build_depthnet(), img)
    assert dep.output.shape == (1, 1, 64, 64) and len(dep.taps) == 4
    assert np.all(dep.output > 0)


def test_input_size_validation(rng):
    with pytest.raises(ValueError, match="at least"):
        build_discriminator().forward(to_nchw(rng.uniform(size=(32, 32, 3))))
    with pytest.raises(ValueError, match="divisible"):
        build_depthnet().forward(to_nchw(rng.uniform(size=(40, 40, 3))))
    with pytest.raises(ValueError, match="channels"):
        Conv2d(3, 4).forward(np.zeros((1, 2, 8, 8)))


def test_backward_requires_kept_activations(rng):
    net = build_extractor()
    fwd = net.forward(to_nchw(rng.uniform(size=(32, 32, 3))))
    with pytest.raises(ValueError):
        net.backward(fwd, None, [None] * 4)


@pytest.mark.parametrize("builder", [build_extractor, build_discriminator, build_depthnet])
def test_ssnw_roundtrip_is_lossless(tmp_path, rng, builder):
    net = builder(5)
    path = tmp_path / "w.ssnw"
    save_weights(net, path)
    loaded = load_weights(path)
    assert (loaded.taps, loaded.min_size, loaded.divisor, loaded.name) == \
        (net.taps, net.min_size, net.divisor, net.name)
    for a, b in zip(net.parameters(), loaded.parameters()):
        assert a.tobytes() == b.tobytes()
    x = to_nchw(rng.uniform(size=(64, 64, 3)))
    assert net.forward(x).output.tobytes() == loaded.forward(x).output.tobytes()
    save_weights(loaded, tmp_path / "again.ssnw")
    assert (tmp_path / "again.ssnw").read_bytes() == path.read_bytes()


def test_ssnw_rejects_corruption(tmp_path):
    path = tmp_path / "w.ssnw"
    save_weights(build_extractor(), path)
    data = path.read_bytes()
    (tmp_path / "trunc.ssnw").write_bytes(data[:-7])
    (tmp_path / "magic.ssnw").write_bytes(b"XXXX" + data[4:])
    (tmp_path / "ver.ssnw").write_bytes(data[:4] + (9).to_bytes(4, "little") + data[8:])
    (tmp_path / "tail.ssnw").write_bytes(data + b"\0")
    for name, msg in [("trunc", "truncated"), ("magic", "SSNW"), ("ver", "version"), ("tail", "trailing")]:
        with pytest.raises(ValueError, match=msg):
            load_weights(tmp_path / f"{name}.ssnw")


def _depth_toy(n=6, size=32, seed=0):
    rng = np.random.default_rng(seed)
    imgs, depths = [], []
    yy = np.linspace(0, 1, size)[:, None] * np.ones((1, size))
    for _ in range(n):
        a = rng.uniform(0.5, 1.5)
        depth = 1.0 + a * yy
        imgs.append(np.stack([depth / 3.0, 0.5 * np.ones_like(depth), 1.0 - depth / 3.0], axis=-1))
        depths.append(depth)
    return imgs, depths


def test_train_depthnet_constant_depth():
    imgs, _ = _depth_toy()
    d = 2.5
    net = train_depthnet(imgs, [np.full((32, 32), d)] * len(imgs), steps=60, lr=1e-3, batch_size=2)
    pred = net.forward(to_nchw(np.stack(imgs))).output
    assert np.mean((pred - d) ** 2) < 1e-3 * d * d


def test_train_depthnet_zero_lr_keeps_weights():
    imgs, depths = _depth_toy(n=3)
    net = build_depthnet(0)
    before = [p.copy() for p in net.parameters()]
    train_depthnet(imgs, depths, steps=3, lr=0.0, net=net)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.parameters()))
    assert len(net.train_losses) == 3


def test_train_depthnet_loss_decreases_in_blocks():
    imgs, depths = _depth_toy(n=8)
    net = train_depthnet(imgs, depths, steps=300, lr=1e-3, batch_size=4, seed=1)
    blocks = np.array(net.train_losses).reshape(3, 100).mean(axis=1)
    assert np.all(np.diff(blocks) < 0)


def test_train_depthnet_validates_inputs():
    with pytest.raises(ValueError):
        train_depthnet([], [])
    imgs, depths = _depth_toy(n=2)
    with pytest.raises(ValueError):
        train_depthnet(imgs, depths[:1])


def test_train_depthnet_mask_excludes_pixels():
    imgs, depths = _depth_toy(n=2)
    masks = [np.zeros((32, 32), bool) for _ in imgs]
    for m in masks:
        m[:16] = True
    bad = [d.copy() for d in depths]
    for d in bad:
        d[16:] = 1e6
    a = train_depthnet(imgs, depths, masks, steps=2, seed=3)
    b = train_depthnet(imgs, bad, masks, steps=2, seed=3)
    assert a.train_losses == b.train_losses


def test_color_jitter_changes_inputs_only_when_enabled():
    imgs, depths = _depth_toy(n=3)
    plain = train_depthnet(imgs, depths, steps=3, seed=2)
    zero = train_depthnet(imgs, depths, steps=3, seed=2, color_jitter=0.0)
    jitter = train_depthnet(imgs, depths, steps=3, seed=2, color_jitter=0.5)
    assert plain.train_losses == zero.train_losses
    assert plain.train_losses != jitter.train_losses
    m, off = random_color_transform(np.random.default_rng(0), 0.0)
    np.testing.assert_array_equal(m, np.eye(3))
    np.testing.assert_array_equal(off, np.zeros(3))


@pytest.mark.slow
def test_depthnet_generalizes_to_heldout_views():
    from stylesplat.synthetic import SyntheticSceneSpec, render_synthetic
    train, test = ([], [], []), ([], [], [])
    for layout in ("tube", "sphere"):
        s = render_synthetic(SyntheticSceneSpec(layout=layout, n_points=150, width=64, height=64,
                                                focal=40.0, n_train=8, n_test=2))
        for split, dest in (("train", train), ("test", test)):
            for i in s.indices(split):
                dest[0].append(s.images[i])
                dest[1].append(s.depths[i].depth)
                dest[2].append(s.depths[i].mask)
    net = train_depthnet(*train, steps=400, lr=1e-3, batch_size=4, seed=0)
    pred = net.forward(to_nchw(np.stack(test[0]))).output[:, 0]
    depth, mask = np.stack(test[1]), np.stack(test[2])
    span = depth[mask].max() - depth[mask].min()
    assert np.abs(pred - depth)[mask].mean() < 0.1 * span
