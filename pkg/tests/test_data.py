import numpy as np
import pytest

from msdnet import data
from msdnet.data import AugmentConfig, SamplerConfig, VideoClip
from msdnet.serialize import FormatError
from msdnet.tensor import ConfigError


@pytest.fixture(scope="module")
def clips():
    return data.gen_synthetic(8, 4, length=6, height=32, width=40, seed=3)


# -- generator ----------------------------------------------------------------


def test_labels_balanced_and_cycled(clips):
    assert [c.label for c in clips] == [0, 1, 2, 3, 0, 1, 2, 3]
    assert np.bincount([c.label for c in clips]).tolist() == [2, 2, 2, 2]


def test_generator_deterministic(clips):
    again = data.gen_synthetic(8, 4, length=6, height=32, width=40, seed=3)
    assert all(a == b for a, b in zip(clips, again))


def test_background_seed_keeps_labels_and_depth(clips):
    other = data.gen_synthetic(8, 4, length=6, height=32, width=40, seed=3, background_seed=99)
    assert [c.label for c in other] == [c.label for c in clips]
    assert all(np.array_equal(a.depth, b.depth) for a, b in zip(clips, other))
    assert not np.array_equal(clips[0].frames, other[0].frames)


def test_depth_zero_off_foreground(clips):
    for c in clips:
        assert c.depth.min() >= 0.0 and c.depth.max() <= 1.0
        assert (c.depth == 0).mean() > 0.5  # the blob covers a minority of pixels
        assert c.frames.min() >= 0.0 and c.frames.max() <= 1.0


def test_too_many_classes_rejected():
    with pytest.raises(ConfigError):
        data.gen_synthetic(4, 9)


def test_trajectories_distinct():
    tau = np.linspace(0, 1, 16)
    paths = [data.trajectory(k, tau, 10.0) for k in range(len(data.PATTERNS))]
    for i in range(len(paths)):
        for j in range(i + 1, len(paths)):
            assert not np.allclose(paths[i], paths[j])


def test_clip_shape_validation():
    with pytest.raises(ConfigError):
        VideoClip(np.zeros((4, 3, 8, 8)), np.zeros((4, 1, 8, 9)), 0)


# -- sampling -------------------------------------------------------------------------


def test_uniform_sampler_segment_bounds():
    rng = np.random.default_rng(0)
    cfg = SamplerConfig("uniform", 8)
    for _ in range(500):
        idx = data.sample_segments(16, cfg, rng)
        assert np.all((idx == 2 * np.arange(8)) | (idx == 2 * np.arange(8) + 1))
        assert np.all(np.diff(idx) > 0)


def test_uniform_sampler_identity_when_length_equals_t():
    idx = data.sample_segments(8, SamplerConfig("uniform", 8), np.random.default_rng(1))
    np.testing.assert_array_equal(idx, np.arange(8))


def test_uniform_sampler_short_clip_rejected():
    with pytest.raises(ConfigError):
        data.sample_segments(4, SamplerConfig("uniform", 8), np.random.default_rng(0))


def test_dense_sampler_is_contiguous_window():
    rng = np.random.default_rng(2)
    for _ in range(50):
        idx = data.sample_segments(32, SamplerConfig("dense", 8, stride=2), rng)
        assert np.all(np.diff(idx) == 2) and idx[0] >= 0 and idx[-1] < 32


def test_center_segments():
    np.testing.assert_array_equal(data.center_segments(16, SamplerConfig("uniform", 8)), 2 * np.arange(8))


def test_sampler_config_validation():
    with pytest.raises(ConfigError):
        SamplerConfig("random", 8)


# -- augmentation -------------------------------------------------------------------------


def test_scale_one_center_crop_of_square_is_identity(rng):
    x = rng.random((2, 3, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(data.apply_crop(x, 16, 1.0, "center"), x)


def test_crop_output_size_and_rgb_depth_alignment(rng):
    aug = AugmentConfig()
    depth = rng.random((4, 1, 40, 52)).astype(np.float32)
    rgb = np.repeat(depth, 3, axis=1)
    for seed in range(20):
        r, d = data.crop_scale_jitter(rgb, depth, aug, np.random.default_rng(seed), 32)
        assert r.shape == (4, 3, 32, 32) and d.shape == (4, 1, 32, 32)
        np.testing.assert_array_equal(r[:, :1], d)


def test_two_thirds_scale_still_exact_size(rng):
    x = rng.random((1, 3, 64, 80)).astype(np.float32)
    assert data.apply_crop(x, 64, 2 / 3, "bottom_right").shape == (1, 3, 64, 64)


def test_crop_of_too_small_frame_rejected(rng):
    x = rng.random((1, 3, 20, 30)).astype(np.float32)
    with pytest.raises(ConfigError):
        data.crop_scale_jitter(x, x[:, :1], AugmentConfig(), rng, 32)


def test_color_jitter_probability_gate(rng):
    x = rng.random((2, 3, 8, 8)).astype(np.float32)
    never = AugmentConfig(jitter_prob=0.0)
    np.testing.assert_array_equal(data.color_jitter(x, never, np.random.default_rng(0)), x)


def test_adjust_colour_identity_and_bounds(rng):
    x = rng.random((2, 3, 8, 8)).astype(np.float32)
    np.testing.assert_allclose(data.adjust_colour(x), x, atol=1e-7)
    always = AugmentConfig(jitter_prob=1.0)
    for seed in range(10):
        y = data.color_jitter(x, always, np.random.default_rng(seed))
        assert y.min() >= 0.0 and y.max() <= 1.0 and y.shape == x.shape


def test_augment_config_validation():
    with pytest.raises(ConfigError):
        AugmentConfig(jitter_prob=1.5)
    with pytest.raises(ConfigError):
        AugmentConfig(scales=(1.0, 0.0))


# -- depth targets ---------------------------------------------------------------------------


def test_binarize_examples():
    assert data.binarize_depth(np.array([11.0]), 10).item() == 255
    assert data.binarize_depth(np.array([10.0]), 10).item() == 0
    assert not data.binarize_depth(np.zeros((4, 4)), 10).any()
    x = np.random.default_rng(0).integers(0, 256, size=(16, 16)).astype(np.float64)
    once = data.binarize_depth(x, 10)
    np.testing.assert_array_equal(data.binarize_depth(once, 10), once)


def test_binarize_unit_range():
    d = np.array([10 / 255, 11 / 255, 1.0, 0.0], dtype=np.float32)
    np.testing.assert_array_equal(data.binarize_depth(d, 10, unit=True), [0, 1, 1, 0])


def test_depth_targets_quarter_scale(rng):
    full, quarter = data.depth_targets(rng.random((3, 1, 32, 32)))
    assert full.shape == (3, 1, 32, 32) and quarter.shape == (3, 1, 8, 8)
    with pytest.raises(ConfigError):
        data.depth_targets(np.zeros((1, 1, 30, 30)))


# -- storage and export -------------------------------------------------------------------------


def test_clipset_round_trip(tmp_path, clips):
    path = tmp_path / "a.clps"
    data.write_clipset(path, clips)
    back = data.read_clipset(path)
    assert all(a == b for a, b in zip(clips, back)) and len(back) == len(clips)
    data.write_clipset(tmp_path / "b.clps", back)
    assert (tmp_path / "b.clps").read_bytes() == path.read_bytes()
    assert path.read_bytes()[:4] == b"CLPS"


def test_clipset_corruption_reports_offset(tmp_path, clips):
    path = tmp_path / "a.clps"
    data.write_clipset(path, clips[:2])
    raw = path.read_bytes()
    (tmp_path / "magic.clps").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError, match="offset 0"):
        data.read_clipset(tmp_path / "magic.clps")
    (tmp_path / "cut.clps").write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="truncated"):
        data.read_clipset(tmp_path / "cut.clps")
    (tmp_path / "extra.clps").write_bytes(raw + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        data.read_clipset(tmp_path / "extra.clps")


def test_pgm_header_and_payload(tmp_path):
    path = tmp_path / "m.pgm"
    data.export_pgm(np.ones((1, 6, 6)), path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n6 6\n255\n")
    assert raw[len(b"P5\n6 6\n255\n") :] == b"\xff" * 36
    data.export_pgm(np.zeros((4, 5)), path)
    assert path.read_bytes() == b"P5\n5 4\n255\n" + b"\0" * 20


def test_ppm_header(tmp_path):
    path = tmp_path / "f.ppm"
    data.export_ppm(np.zeros((3, 2, 5)), path)
    assert path.read_bytes() == b"P6\n5 2\n255\n" + b"\0" * 30


def test_base_size_seven_eighths_is_native_crop(rng):
    x = rng.random((1, 3, 73, 91)).astype(np.float32)
    out = data.apply_crop(x, 64, 7 / 8, "center", base=73)
    y0, x0 = data.crop_box(73, 91, 64, "center")
    np.testing.assert_array_equal(out, x[..., y0 : y0 + 64, x0 : x0 + 64])
    assert data.apply_crop(x, 64, 1.0, "top_left", base=73).shape == (1, 3, 64, 64)
