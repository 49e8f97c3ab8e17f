import math

import numpy as np
import pytest

from msdnet import losses
from msdnet.gradcheck import grad_check
from msdnet.losses import LossWeights, total_loss
from msdnet.network import ModelConfig, Parameters
from msdnet.optim import OptimConfig, lr_at, sgd_step
from msdnet.tensor import ConfigError, Tensor


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


# -- cross entropy -------------------------------------------------------------


def test_uniform_logits_give_log_classes(fp64):
    loss = losses.cross_entropy(T(np.zeros((3, 4))), [0, 1, 3])
    assert loss.item() == pytest.approx(math.log(4), abs=1e-12)
    assert round(loss.item(), 4) == 1.3863


def test_huge_margin_gives_zero(fp64):
    logits = np.full((2, 4), -500.0)
    logits[0, 2] = logits[1, 0] = 500.0
    assert losses.cross_entropy(T(logits), [2, 0]).item() == pytest.approx(0.0, abs=1e-12)


def test_ce_gradient_is_softmax_minus_onehot(fp64, rng):
    z = rng.standard_normal((3, 5))
    labels = np.array([4, 0, 2])
    x = Tensor(z, requires_grad=True, dtype=np.float64)
    losses.cross_entropy(x, labels).backward()
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(3), labels] -= 1.0
    np.testing.assert_allclose(x.grad, p / 3, atol=1e-14)
    report = grad_check(lambda a: losses.cross_entropy(a, labels), [T(z)], name="cross_entropy")
    assert report.passed, report.summary()


@pytest.mark.parametrize("labels", [[0, 4], [-1, 0], [0]])
def test_ce_label_errors(labels):
    with pytest.raises(ConfigError):
        losses.cross_entropy(Tensor(np.zeros((2, 4))), labels)


# -- mse -----------------------------------------------------------------------------


def test_mse_examples(fp64, rng):
    target = rng.random((2, 1, 4, 4))
    assert losses.mse_local(T(target), target).item() == 0.0
    assert losses.mse_local(T(target + 0.1), target).item() == pytest.approx(0.01, rel=1e-12)
    assert losses.mse_global(T(target - 0.1), target).item() == pytest.approx(0.01, rel=1e-12)


def test_mse_gradient(fp64, rng):
    pred, target = rng.standard_normal((3, 1, 4, 4)), rng.standard_normal((3, 1, 4, 4))
    x = Tensor(pred, requires_grad=True, dtype=np.float64)
    losses.mse_local(x, target).backward()
    np.testing.assert_allclose(x.grad, 2 * (pred - target) / pred.size, atol=1e-15)


def test_mse_shape_errors():
    with pytest.raises(ConfigError):
        losses.mse_local(Tensor(np.zeros((2, 1, 4, 4))), np.zeros((2, 1, 4, 3)))
    with pytest.raises(ConfigError):
        losses.mse_global(Tensor(np.zeros((2, 2, 4, 4))), np.zeros((2, 2, 4, 4)))


# -- total loss ------------------------------------------------------------------------


def test_total_loss_exact():
    assert total_loss(2.0, 0.5, 1.0, LossWeights(1.0, 1.0, 0.01)) == 2.51


def test_total_loss_tensor_matches_float(fp64):
    w = LossWeights(1.0, 0.1, 0.01)
    t = total_loss(T(2.0), T(0.5), T(1.0), w)
    assert t.item() == total_loss(2.0, 0.5, 1.0, w) == pytest.approx(2.06)


def test_total_loss_linear(rng):
    for _ in range(200):
        a, b = rng.random(3) * 10, rng.random(3) * 10
        w = LossWeights(*(rng.random(3)))
        s = float(rng.standard_normal())
        lhs = total_loss(*(a + s * b), w)
        rhs = total_loss(*a, w) + s * total_loss(*b, w)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_zero_aux_weights_equal_cls_and_drop_branches(fp64):
    w = LossWeights(1.0, 0.0, 0.0)
    assert total_loss(1.7, 3.0, 9.0, w) == 1.7
    aux = Tensor([0.5], requires_grad=True, dtype=np.float64)
    cls = Tensor([1.0], requires_grad=True, dtype=np.float64)
    from msdnet import ops

    total_loss(ops.reshape(cls, ()), ops.reshape(aux, ()), None, w).backward()
    assert aux.grad is None and cls.grad.item() == 1.0


def test_negative_weight_rejected():
    with pytest.raises(ConfigError):
        LossWeights(1.0, -0.1, 0.0)


# -- SGD and schedule ----------------------------------------------------------------------


def _one_param(value, grad):
    p = Parameters(ModelConfig(input_size=64))
    p.add("w", np.array([value], dtype=np.float64))
    p["w"].grad = np.array([grad], dtype=np.float64)
    return p


def test_sgd_plain_step():
    p = _one_param(1.0, 0.5)
    sgd_step(p, OptimConfig(lr=0.1, momentum=0.0, weight_decay=0.0))
    assert p["w"].data.item() == pytest.approx(0.95, abs=1e-15)


def test_sgd_two_momentum_steps_closed_form():
    lr, mu, g = 0.1, 0.9, 0.5
    p = _one_param(1.0, g)
    cfg = OptimConfig(lr=lr, momentum=mu, weight_decay=0.0)
    sgd_step(p, cfg)
    sgd_step(p, cfg)
    assert p["w"].data.item() - 1.0 == pytest.approx(-lr * g * (2 + mu), rel=1e-12)


def test_sgd_weight_decay_only():
    p = _one_param(2.0, 0.0)
    sgd_step(p, OptimConfig(lr=0.1, momentum=0.0, weight_decay=0.01))
    assert p["w"].data.item() == pytest.approx(2.0 * (1 - 0.1 * 0.01), rel=1e-14)


def test_sgd_clipping_rescales_global_norm():
    p = Parameters(ModelConfig(input_size=64))
    p.add("a", np.array([0.0]))
    p.add("b", np.array([0.0]))
    p["a"].grad, p["b"].grad = np.array([3.0]), np.array([4.0])
    sgd_step(p, OptimConfig(lr=1.0, momentum=0.0, weight_decay=0.0, clip_norm=1.0))
    np.testing.assert_allclose([p["a"].data.item(), p["b"].data.item()], [-0.6, -0.8], atol=1e-7)


def test_sgd_missing_grad_names_tensor():
    p = _one_param(1.0, 0.0)
    p.add("stage9.conv.w", np.zeros(2))
    with pytest.raises(ValueError, match="stage9.conv.w"):
        sgd_step(p, OptimConfig())


def test_lr_schedule():
    cfg = OptimConfig()
    assert lr_at(0, cfg) == 0.0025
    assert lr_at(9, cfg) == 0.0025
    assert lr_at(15, cfg) == pytest.approx(2.5e-5, rel=1e-12)
    assert lr_at(99, cfg) == pytest.approx(0.0025e-3, rel=1e-12)
    with pytest.raises(ConfigError):
        lr_at(-1, cfg)


@pytest.mark.parametrize("bad", [dict(lr=0.0), dict(momentum=1.0), dict(weight_decay=-1.0), dict(clip_norm=0.0)])
def test_optim_config_validation(bad):
    with pytest.raises(ConfigError):
        OptimConfig(**bad)
