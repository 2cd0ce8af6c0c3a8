"""PSNR, SSIM and feature distance against independent references."""
import json
import math

import numpy as np
import pytest

from oracles import mmd2_gram, psnr_two_loop
from stylesplat.metrics import (MetricReport, evaluate, feature_distance, mmd2, pooled_features,
                                psnr, ssim)
from stylesplat.nets import build_extractor


def test_psnr_matches_loop_oracle(rng):
    a, b = rng.uniform(size=(9, 7, 3)), rng.uniform(size=(9, 7, 3))
    assert psnr(a, b) == pytest.approx(psnr_two_loop(a, b), rel=1e-12)


def test_psnr_known_values(rng):
    a = rng.uniform(0.0, 0.8, (16, 16, 3))
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert psnr(a, a) == math.inf
    with pytest.raises(ValueError):
        psnr(a, a[:8])


def test_ssim_matches_skimage(rng):
    skm = pytest.importorskip("skimage.metrics")
    a = rng.uniform(size=(40, 33, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    ref = skm.structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                    data_range=1.0, channel_axis=2)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-10)


def test_ssim_properties(rng):
    a = rng.uniform(size=(20, 20, 3))
    assert ssim(a, a) == pytest.approx(1.0)
    assert -1.0 <= ssim(a, 1.0 - a) <= 1.0
    # two constant images: (2 x y + C1) / (x^2 + y^2 + C1)
    x, y, c1 = 0.3, 0.6, 0.01 ** 2
    expect = (2 * x * y + c1) / (x * x + y * y + c1)
    assert ssim(np.full((16, 16, 3), x), np.full((16, 16, 3), y)) == pytest.approx(expect)
    with pytest.raises(ValueError):
        ssim(a[:10], a[:10])


@pytest.fixture(scope="module")
def extractor():
    return build_extractor(0)


def test_feature_distance_matches_gram_oracle(rng, extractor):
    a = [rng.uniform(size=(32, 32, 3)) for _ in range(3)]
    b = [rng.uniform(0.2, 0.6, (32, 32, 3)) for _ in range(2)]
    fa, fb = pooled_features(a, extractor), pooled_features(b, extractor)
    assert fa.shape == (3, 128)
    assert mmd2(fa, fb) == pytest.approx(mmd2_gram(fa, fb), rel=1e-9)
    assert feature_distance(a, b, extractor) == pytest.approx(mmd2_gram(fa, fb), rel=1e-9)


def test_feature_distance_properties(rng, extractor):
    a = [rng.uniform(size=(32, 32, 3)) for _ in range(3)]
    assert feature_distance(a, a, extractor) == pytest.approx(0.0, abs=1e-12)
    red = [np.full((32, 32, 3), (0.9, 0.1, 0.1))]
    blue = [np.full((32, 32, 3), (0.1, 0.1, 0.9))]
    assert feature_distance(red, blue, extractor) > 0.0
    # default extractor is the fixed seed-0 network
    assert feature_distance(red, blue) == feature_distance(red, blue, extractor)
    with pytest.raises(ValueError):
        feature_distance([], a, extractor)


def test_report_json_and_table(rng):
    a = rng.uniform(size=(16, 16, 3))
    rep = evaluate([a, a], [a, np.clip(a + 0.05, 0, 1)], names=["same", "shifted"])
    data = json.loads(rep.to_json())
    assert data["psnr"][0] == "inf" and data["mean_psnr"] == "inf"
    assert data["ssim"][0] == pytest.approx(1.0)
    table = rep.table()
    assert "same" in table and "shifted" in table and "mean" in table
    assert math.isnan(MetricReport([], [], []).mean_psnr)
    with pytest.raises(ValueError):
        evaluate([a], [a, a])
