import numpy as np
import pytest

from msdnet import action, ops
from msdnet.action import ActionConfig
from msdnet.gradcheck import grad_check
from msdnet.tensor import ConfigError, Tensor

from oracles import motion_diff_direct


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def _params(cfg, seed=0, zero=False):
    raw = action.init_params(cfg, np.random.default_rng(seed), np.float64)
    return {k: T(np.zeros_like(v) if zero else v) for k, v in raw.items()}


# -- temporal shift ------------------------------------------------------------


def test_shift_fraction_zero_is_identity(fp64, rng):
    x = rng.standard_normal((1, 3, 8, 2, 2))
    np.testing.assert_array_equal(ops.temporal_shift(T(x), 0.0).data, x)


def test_shift_moves_first_channel_forward(fp64, rng):
    x = rng.standard_normal((1, 2, 8, 2, 2))
    y = ops.temporal_shift(T(x), 1 / 8).data
    np.testing.assert_array_equal(y[0, 1, 0], x[0, 0, 0])
    np.testing.assert_array_equal(y[0, 0, 0], 0.0)
    # second slice moves backward in time
    np.testing.assert_array_equal(y[0, 0, 1], x[0, 1, 1])
    np.testing.assert_array_equal(y[0, 1, 1], 0.0)
    np.testing.assert_array_equal(y[:, :, 2:], x[:, :, 2:])


def test_shift_conserves_unshifted_channels(fp64, rng):
    x = rng.standard_normal((2, 5, 16, 3, 3))
    y = ops.temporal_shift(T(x), 1 / 8).data
    assert y[:, :, 4:].sum() == pytest.approx(x[:, :, 4:].sum(), rel=1e-14)


def test_shift_single_frame_warns(fp64, rng, caplog):
    x = rng.standard_normal((1, 1, 8, 2, 2))
    with caplog.at_level("WARNING"):
        y = ops.temporal_shift(T(x), 1 / 8)
    np.testing.assert_array_equal(y.data, x)
    assert "identity" in caplog.text


def test_shift_too_large_fraction_rejected():
    with pytest.raises(ConfigError):
        ops.temporal_shift(Tensor(np.zeros((1, 2, 4, 1, 1))), 0.75)


# -- excitation paths ---------------------------------------------------------------


def test_ste_zero_params_give_half(fp64, rng):
    cfg = ActionConfig(8, 4, reduce_ratio=4)
    m = action.ste_forward(T(rng.standard_normal((2, 4, 8, 5, 5))), _params(cfg, zero=True))
    assert m.shape == (2, 4, 1, 5, 5)
    np.testing.assert_array_equal(m.data, 0.5)


def test_ce_zero_params_give_half(fp64, rng):
    cfg = ActionConfig(8, 4, reduce_ratio=4)
    m = action.ce_forward(T(rng.standard_normal((2, 4, 8, 5, 5))), _params(cfg, zero=True))
    assert m.shape == (2, 4, 8, 1, 1)
    np.testing.assert_array_equal(m.data, 0.5)


def test_ce_invariant_to_spatial_permutation(fp64, rng):
    cfg = ActionConfig(8, 4, reduce_ratio=4)
    p = _params(cfg)
    x = rng.standard_normal((1, 4, 8, 4, 4))
    perm = rng.permutation(16)
    xp = x.reshape(1, 4, 8, 16)[..., perm].reshape(x.shape)
    np.testing.assert_allclose(action.ce_forward(T(x), p).data, action.ce_forward(T(xp), p).data, atol=1e-14)


def test_indivisible_channels_rejected():
    with pytest.raises(ConfigError):
        ActionConfig(10, 4, reduce_ratio=4)


def test_motion_diff_static_clip_is_zero(fp64, rng):
    frame = rng.standard_normal((1, 1, 2, 5, 5))
    f = np.repeat(frame, 6, axis=1)
    k = np.zeros((2, 2, 3, 3))
    k[0, 0, 1, 1] = k[1, 1, 1, 1] = 1.0
    d = action.motion_diff(T(f), T(k)).data
    np.testing.assert_allclose(d, 0.0, atol=1e-15)


def test_motion_diff_last_slice_zero(fp64, rng):
    f, k = rng.standard_normal((2, 5, 3, 4, 4)), rng.standard_normal((3, 3, 3, 3))
    d = action.motion_diff(T(f), T(k)).data
    np.testing.assert_array_equal(d[:, -1], 0.0)


def test_motion_diff_matches_direct_evaluation(fp64, rng):
    f, k = rng.standard_normal((2, 4, 3, 5, 5)), rng.standard_normal((3, 3, 3, 3))
    np.testing.assert_allclose(action.motion_diff(T(f), T(k)).data, motion_diff_direct(f, k), atol=1e-12)


def test_me_static_input_zero_bias_gives_half(fp64, rng):
    cfg = ActionConfig(8, 4, reduce_ratio=4)
    p = _params(cfg)
    p["me.expand.b"] = T(np.zeros(8))
    k = np.zeros((2, 2, 3, 3))
    k[0, 0, 1, 1] = k[1, 1, 1, 1] = 1.0
    p["me.k.w"] = T(k)
    x = np.repeat(rng.standard_normal((1, 1, 8, 4, 4)), 4, axis=1)
    m = action.me_forward(T(x), p)
    assert m.shape == (1, 4, 8, 1, 1)
    np.testing.assert_allclose(m.data, 0.5, atol=1e-14)


def test_me_gradcheck(fp64, rng):
    cfg = ActionConfig(8, 3, reduce_ratio=4)
    p = _params(cfg)
    names = ["me.squeeze.w", "me.k.w", "me.expand.w"]
    x = T(rng.standard_normal((1, 3, 8, 4, 4)))

    def fn(xx, *ws):
        q = dict(p, **dict(zip(names, ws)))
        return action.me_forward(xx, q)

    report = grad_check(fn, [x] + [p[n] for n in names], names=["x"] + names, name="me")
    assert report.passed, report.summary()


# -- full block --------------------------------------------------------------------


@pytest.mark.parametrize("value, factor", [(0.0, 3.0), (1.0, 6.0)])
def test_forced_maps_scale_shifted_input(fp64, rng, value, factor):
    cfg = ActionConfig(8, 4, reduce_ratio=4)
    x = T(rng.standard_normal((2, 4, 8, 3, 3)))
    y = action.action_forward(x, _params(cfg), cfg, force_maps=value)
    xs = ops.temporal_shift(x, cfg.shift_fraction).data
    np.testing.assert_allclose(y.data, factor * xs, atol=1e-13)


def test_block_preserves_shape_and_maps_open_interval(fp64, rng):
    cfg = ActionConfig(16, 8, reduce_ratio=4)
    p = _params(cfg, seed=3)
    x = T(rng.standard_normal((2, 8, 16, 6, 6)))
    assert action.action_forward(x, p, cfg).shape == x.shape
    maps = action.excitation_maps(x, p)
    for m in (maps.ste, maps.ce, maps.me):
        assert np.all(m.data > 0.0) and np.all(m.data < 1.0)


def test_block_rejects_wrong_channels(fp64, rng):
    cfg = ActionConfig(8, 4, reduce_ratio=4)
    with pytest.raises(ConfigError):
        action.action_forward(T(np.zeros((1, 4, 16, 2, 2))), _params(cfg), cfg)


def test_block_gradcheck(fp64, rng):
    cfg = ActionConfig(8, 4, reduce_ratio=4)
    p = _params(cfg, seed=5)
    names = list(p)
    x = T(rng.standard_normal((1, 4, 8, 4, 4)))

    def fn(xx, *ws):
        return action.action_forward(xx, dict(zip(names, ws)), cfg)

    report = grad_check(fn, [x] + [p[n] for n in names], names=["x"] + names, name="action")
    assert report.passed, report.summary()


def test_init_is_seeded():
    cfg = ActionConfig(8, 4, reduce_ratio=4)
    a = action.init_params(cfg, np.random.default_rng(9))
    b = action.init_params(cfg, np.random.default_rng(9))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert set(a) == set(action.param_shapes(cfg))
