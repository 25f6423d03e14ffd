import numpy as np
import pytest

from nlsdenoise.filtering import FilterParams
from nlsdenoise.grouping import Footprint, GroupingParams
from nlsdenoise.metrics import psnr
from nlsdenoise.noise import NoiseSpec, add_noise
from nlsdenoise.pipeline import (
    AggregationCanvas,
    BiasCorrectionStabilizer,
    DenoiseConfig,
    RiceMeanStabilizer,
    default_config,
    denoise,
    denoise_rician,
    denoise_volume,
    group_weight,
    rice_mean,
    scatter_group,
)
from nlsdenoise.synth import phantom_volume, piecewise

from oracles import dense_weighted_mean, naive_msvd_denoise


def add_awgn(x, sigma, seed):
    return add_noise(x, NoiseSpec("awgn", sigma, seed))


def add_rician(x, sigma, seed):
    return add_noise(x, NoiseSpec("rician", sigma, seed))


def _small_cfg(sigma, **kw):
    grouping = GroupingParams(patch_h=4, patch_w=4, group_size=8, search_radius=4, ref_stride=2)
    return DenoiseConfig(grouping, FilterParams(sigma), **kw)


def _volume_cfg(sigma, **kw):
    return DenoiseConfig(GroupingParams.for_volume(), FilterParams(sigma), **kw)


# --- aggregation ---


def test_single_group_covering_image_is_returned():
    canvas = AggregationCanvas((4, 4))
    patch = np.arange(16.0).reshape(4, 4)
    scatter_group(canvas, patch[:, :, None, None], Footprint(np.array([[0, 0, 0]]), (4, 4, 1)), 1.0)
    np.testing.assert_array_equal(canvas.finalize(), patch)


def test_overlapping_constant_patches_stay_constant():
    canvas = AggregationCanvas((3, 4))
    data = np.full((3, 3, 1, 2), 5.0)
    scatter_group(canvas, data, Footprint(np.array([[0, 0, 0], [0, 1, 0]]), (3, 3, 1)), 0.3)
    np.testing.assert_allclose(canvas.finalize(), 5.0, atol=1e-15)


def test_random_overlaps_match_dense_oracle(rng):
    shape = (9, 11)
    canvas = AggregationCanvas(shape)
    triples = []
    for _ in range(12):
        coords = np.column_stack([rng.integers(0, 7, 4), rng.integers(0, 9, 4), np.zeros(4, int)])
        data = rng.normal(size=(3, 3, 1, 4))
        wgt = float(rng.uniform(0.1, 2))
        scatter_group(canvas, data, Footprint(coords, (3, 3, 1)), wgt)
        triples += [((r, c), data[:, :, 0, k], wgt) for k, (r, c, _) in enumerate(coords)]
    # make sure every pixel is covered
    for r in range(0, 9, 3):
        for c in range(0, 11, 3):
            r0, c0 = min(r, 6), min(c, 8)
            p = rng.normal(size=(3, 3))
            scatter_group(canvas, p[:, :, None, None], Footprint(np.array([[r0, c0, 0]]), (3, 3, 1)), 1.0)
            triples.append(((r0, c0), p, 1.0))
    np.testing.assert_allclose(canvas.finalize(), dense_weighted_mean(shape, triples), atol=1e-12)


def test_uncovered_pixels_raise():
    with pytest.raises(RuntimeError):
        AggregationCanvas((2, 2)).finalize()


def test_group_weights():
    assert group_weight(7, "uniform") == 1.0
    assert group_weight(3, "inverse_retained") == 0.25


# --- planar denoising ---


@pytest.mark.parametrize("family", ["msvd", "hosvd4d"])
def test_constant_image_is_fixed_point(family):
    img = np.full((24, 24), 77.0)
    cfg = DenoiseConfig(
        GroupingParams(patch_h=4, patch_w=4, group_size=8, search_radius=4, ref_stride=2),
        FilterParams(20.0, family=family),
    )
    assert np.max(np.abs(denoise(img, cfg) - img)) < 1e-8


def test_constant_color_image_is_fixed_point():
    img = np.broadcast_to(np.array([200.0, 40.0, 90.0]), (20, 20, 3)).copy()
    cfg = default_config(img, 15.0)
    cfg = DenoiseConfig(GroupingParams(patch_h=4, patch_w=4, group_size=8, search_radius=3), cfg.filtering)
    assert cfg.filtering.color_mode == "opponent"
    assert np.max(np.abs(denoise(img, cfg) - img)) < 1e-8


def test_piecewise_gain_at_sigma_25():
    clean = piecewise((128, 128), seed=3)
    noisy = add_awgn(clean, 25.0, seed=1)
    out = denoise(noisy, default_config(noisy, 25.0))
    assert psnr(clean, out) - psnr(clean, noisy) >= 5.0


def test_color_denoising_improves(rng):
    clean = piecewise((48, 48, 3), seed=4) * np.array([1.0, 0.8, 0.5])
    noisy = add_awgn(clean, 20.0, seed=2)
    out = denoise(noisy, default_config(noisy, 20.0))
    assert out.shape == clean.shape
    assert psnr(clean, out) - psnr(clean, noisy) >= 3.0


def test_output_shape_and_clip(rng):
    noisy = rng.uniform(0, 255, size=(20, 20)) + add_awgn(np.zeros((20, 20)), 60.0, seed=0)
    cfg = _small_cfg(60.0, clip_output=True, peak=255.0)
    out = denoise(noisy, cfg)
    assert out.shape == noisy.shape
    assert out.min() >= 0.0 and out.max() <= 255.0


def test_idempotence_bound():
    clean = piecewise((40, 40), seed=8)
    noisy = add_awgn(clean, 20.0, seed=8)
    cfg = _small_cfg(20.0)
    once = denoise(noisy, cfg)
    twice = denoise(once, cfg)
    assert np.linalg.norm(twice - once) < np.linalg.norm(once - noisy)


def test_deterministic_across_workers(rng):
    noisy = add_awgn(piecewise((40, 40), seed=1), 15.0, seed=3)
    base = denoise(noisy, _small_cfg(15.0, workers=1))
    for workers in (2, 4):
        assert np.array_equal(base, denoise(noisy, _small_cfg(15.0, workers=workers)))


def test_matches_naive_reference(rng):
    img = rng.uniform(0, 255, size=(16, 16))
    grouping = GroupingParams(patch_h=4, patch_w=4, group_size=8, search_radius=4, ref_stride=1,
                              distance_channel="first_channel")
    cfg = DenoiseConfig(grouping, FilterParams(20.0))
    expected = naive_msvd_denoise(img, 20.0, ps=4, k=8, radius=4, stride=1)
    np.testing.assert_allclose(denoise(img, cfg), expected, atol=1e-10, rtol=0)


def test_inverse_retained_weights_still_denoise():
    clean = piecewise((48, 48), seed=5)
    noisy = add_awgn(clean, 25.0, seed=5)
    out = denoise(noisy, _small_cfg(25.0, weight_mode="inverse_retained"))
    assert np.all(np.isfinite(out))
    assert psnr(clean, out) > psnr(clean, noisy) + 3.0


def test_config_validation():
    with pytest.raises(ValueError):
        _small_cfg(1.0, weight_mode="median")
    with pytest.raises(ValueError):
        _small_cfg(1.0, workers=0)
    with pytest.raises(ValueError):
        denoise(np.zeros((16, 16)), DenoiseConfig(GroupingParams(), FilterParams(1.0, color_mode="opponent")))
    with pytest.raises(ValueError):
        denoise(np.zeros((16, 16, 8)), _volume_cfg(1.0))


# --- volumes ---


def test_constant_volume_is_fixed_point():
    vol = np.full((12, 12, 8), 50.0)
    assert np.max(np.abs(denoise_volume(vol, _volume_cfg(10.0)) - vol)) < 1e-8


def test_volume_gain_at_sigma_25():
    clean = phantom_volume((32, 32, 8), seed=2)
    noisy = add_awgn(clean, 25.0, seed=9)
    out = denoise_volume(noisy, _volume_cfg(25.0))
    assert out.shape == clean.shape
    assert psnr(clean, out) - psnr(clean, noisy) >= 5.0


def test_volume_needs_volumetric_grouping():
    with pytest.raises(ValueError):
        denoise_volume(np.zeros((16, 16, 4)), _small_cfg(1.0))
    with pytest.raises(ValueError):
        denoise_volume(np.zeros((16, 16)), _volume_cfg(1.0))


# --- Rician ---


def test_rice_mean_limits():
    assert rice_mean(0.0, 2.0) == pytest.approx(2.0 * np.sqrt(np.pi / 2))
    assert rice_mean(1000.0, 1.0) == pytest.approx(1000.0 + 1 / 2000.0, rel=1e-9)


def test_rice_mean_matches_monte_carlo():
    rng = np.random.default_rng(0)
    nu, sigma = 3.0, 2.0
    samples = np.hypot(nu + sigma * rng.normal(size=400_000), sigma * rng.normal(size=400_000))
    assert rice_mean(nu, sigma) == pytest.approx(samples.mean(), rel=3e-3)


def test_rice_inverse_roundtrip():
    x = np.concatenate([np.linspace(0.5, 60, 300), [100.0, 500.0]])
    back = RiceMeanStabilizer().inverse(rice_mean(x, 1.0), 1.0)
    np.testing.assert_allclose(back, x, rtol=1e-6)
    assert RiceMeanStabilizer().inverse(np.array([0.1]), 1.0)[0] == 0.0


def test_bias_correction_formula():
    out = BiasCorrectionStabilizer().inverse(np.array([0.0, 5.0, 10.0]), 3.0)
    np.testing.assert_allclose(out, [0.0, np.sqrt(7.0), np.sqrt(82.0)])


def test_rician_small_sigma_is_identity(rng):
    vol = rng.uniform(10, 200, size=(12, 12, 8))
    out = denoise_rician(vol, 1e-9, _volume_cfg(1e-9))
    assert np.max(np.abs(out - vol)) < 1e-6


def test_rician_sigma_5_unbiased():
    clean = np.full((24, 24, 12), 100.0)
    noisy = add_rician(clean, 5.0, seed=4)
    out = denoise_rician(noisy, 5.0, _volume_cfg(5.0))
    assert out.min() >= 0
    assert abs(out.mean() - 100.0) <= 2.0


def test_rician_rejects_bad_input():
    with pytest.raises(ValueError):
        denoise_rician(-np.ones((12, 12, 8)), 1.0, _volume_cfg(1.0))
    with pytest.raises(ValueError):
        denoise_rician(np.ones((12, 12, 8)), 0.0, _volume_cfg(1.0))


def test_rician_planar_input(rng):
    clean = np.full((20, 20), 80.0)
    noisy = add_rician(clean, 10.0, seed=1)
    out = denoise_rician(noisy, 10.0, _small_cfg(10.0))
    assert out.shape == clean.shape
    assert abs(out.mean() - 80.0) < 3.0
