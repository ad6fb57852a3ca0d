import math

import numpy as np
import pytest

from lcchange.errors import EmptyMaskError, InvalidSpecError, NonFiniteValueError, ShapeMismatchError
from lcchange.nn import ops
from lcchange.nn.gradcheck import grad_check
from lcchange.nn.model import (
    ConvNet,
    ConvNetSpec,
    adam_step,
    decode_checkpoint,
    encode_checkpoint,
    forward,
    init_net,
    layer_table,
    load_checkpoint,
    loss_and_grad,
    param_count,
    predict_proba,
    save_checkpoint,
    sgd_step,
)


def _by_hand_fcn_params(cin=4, width=64, depth=5, k=3, classes=15):
    total = k * k * cin * width + width
    total += (depth - 1) * (k * k * width * width + width)
    return total + width * classes + classes


def test_default_fcn_parameter_count():
    assert _by_hand_fcn_params() == 151_055
    assert param_count(ConvNetSpec()) == 151_055
    assert init_net(ConvNetSpec()).num_params() == 151_055


def test_layer_table_names():
    assert [n for n, _ in layer_table(ConvNetSpec(depth=2, width=3))] == ["conv0", "conv1", "head"]
    names = [n for n, _ in layer_table(ConvNetSpec(arch="encdec", width=4, stages=2))]
    assert names == ["stem", "down1", "enc1", "down2", "enc2", "dec2", "dec1", "head"]


def test_receptive_field_fcn_is_11():
    assert ConvNetSpec().receptive_field() == 11


def test_receptive_field_measured():
    # perturb one input pixel and see how far the output changes
    spec = ConvNetSpec(width=4, depth=5)
    net = init_net(spec, seed=3, dtype=np.float64)
    # strictly positive weights keep every ReLU open, so influence cannot cancel
    for k in net.params:
        net.params[k] = np.abs(net.params[k]) + 0.01
    x = np.random.default_rng(0).uniform(size=(1, 4, 31, 31))
    x2 = x.copy()
    x2[0, :, 15, 15] += 1.0
    d = np.abs(forward(net, x2) - forward(net, x)).max(axis=(0, 1))
    rows = np.flatnonzero(d.max(axis=1) > 0)
    cols = np.flatnonzero(d.max(axis=0) > 0)
    assert rows.max() - rows.min() + 1 == 11
    assert cols.max() - cols.min() + 1 == 11


def test_encdec_receptive_field_larger():
    assert ConvNetSpec(arch="encdec", stages=2).receptive_field() > ConvNetSpec().receptive_field()


@pytest.mark.parametrize("bad", [
    dict(width=0), dict(kernel=2), dict(depth=0), dict(arch="unet"),
    dict(arch="encdec", stages=0), dict(arch="encdec", decoder_widths=(8,), stages=2),
])
def test_spec_validation(bad):
    with pytest.raises(InvalidSpecError):
        ConvNetSpec(**bad)


def test_output_shape_same_padding():
    net = init_net(ConvNetSpec(width=8))
    out = forward(net, np.zeros((1, 4, 8, 8), np.float32))
    assert out.shape == (1, 15, 8, 8)


def test_encdec_output_shape():
    net = init_net(ConvNetSpec(arch="encdec", width=4, stages=2))
    assert forward(net, np.zeros((2, 4, 12, 16), np.float32)).shape == (2, 15, 12, 16)
    with pytest.raises(ShapeMismatchError):
        forward(net, np.zeros((1, 4, 10, 10), np.float32))


def test_zero_net_is_uniform():
    net = init_net(ConvNetSpec(width=4), init="zeros")
    p = predict_proba(net, np.zeros((1, 4, 6, 6), np.float32))
    assert np.allclose(p, 1 / 15)


def test_uniform_logits_loss_is_ln15():
    net = init_net(ConvNetSpec(width=4), init="zeros", dtype=np.float64)
    y = np.random.default_rng(0).integers(0, 15, (1, 6, 6))
    loss, _ = loss_and_grad(net, np.ones((1, 4, 6, 6)), y)
    assert loss == pytest.approx(math.log(15), abs=1e-12)
    assert math.log(15) == pytest.approx(2.70805, abs=1e-5)


def test_empty_mask():
    net = init_net(ConvNetSpec(width=4))
    with pytest.raises(EmptyMaskError):
        loss_and_grad(net, np.zeros((1, 4, 5, 5)), np.zeros((1, 5, 5), int), np.zeros((1, 5, 5), bool))


def test_masked_pixels_do_not_contribute():
    net = init_net(ConvNetSpec(width=4), seed=1, dtype=np.float64)
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(1, 4, 6, 6))
    y = rng.integers(0, 15, (1, 6, 6))
    mask = np.ones((1, 6, 6), bool)
    mask[0, :3] = False
    y2 = y.copy()
    y2[0, :3] = (y2[0, :3] + 1) % 15
    a, _ = loss_and_grad(net, x, y, mask)
    b, _ = loss_and_grad(net, x, y2, mask)
    assert a == b


def test_non_finite_input_rejected():
    net = init_net(ConvNetSpec(width=4))
    x = np.zeros((1, 4, 5, 5), np.float32)
    x[0, 0, 2, 2] = np.nan
    with pytest.raises(NonFiniteValueError):
        forward(net, x)


def test_softmax_sums_to_one():
    z = np.random.default_rng(0).normal(0, 30, (7, 15))
    p = ops.softmax(z, axis=-1)
    assert np.allclose(p.sum(-1), 1)
    assert np.allclose(ops.softmax(z + 1000, axis=-1), p)


def test_fcn_translation_covariant():
    net = init_net(ConvNetSpec(width=4), seed=5, dtype=np.float64)
    x = np.random.default_rng(1).uniform(size=(1, 4, 30, 30))
    full = forward(net, x)
    shifted = forward(net, x[:, :, 3:, 4:])
    # away from the zero-padded border both views agree
    assert np.allclose(full[:, :, 3 + 5:-5, 4 + 5:-5], shifted[:, :, 5:-5, 5:-5], atol=1e-10)


@pytest.mark.parametrize("spec", [
    ConvNetSpec(depth=2, width=3),
    ConvNetSpec(arch="encdec", width=3, stages=1),
    ConvNetSpec(arch="encdec", width=3, stages=2, skips=False, decoder_widths=(2, 3)),
])
def test_grad_check(spec):
    assert grad_check(spec, trials=1, seed=0) < 1e-6


def test_grad_check_detects_a_broken_gradient(monkeypatch):
    from lcchange.nn import gradcheck

    real = gradcheck.loss_and_grad_nhwc

    def broken(net, x, y, mask):
        loss, g = real(net, x, y, mask)
        g = dict(g)
        g["conv0.w"] = g["conv0.w"] * 1.01
        return loss, g

    monkeypatch.setattr(gradcheck, "loss_and_grad_nhwc", broken)
    assert gradcheck.grad_check(ConvNetSpec(depth=2, width=3)) > 1e-3


def _scalar_net(w):
    return ConvNet(ConvNetSpec(), {"p": np.array([w], dtype=np.float64)})


def test_sgd_definition():
    out = sgd_step(_scalar_net(1.0), {"p": np.array([2.0])}, lr=0.1, momentum=0.0)
    assert out.params["p"][0] == pytest.approx(0.8)


def test_sgd_momentum_accumulates():
    net = sgd_step(_scalar_net(1.0), {"p": np.array([2.0])}, lr=0.1, momentum=0.5)
    net = sgd_step(net, {"p": np.array([2.0])}, lr=0.1, momentum=0.5)
    # v1 = 2, v2 = 0.5 * 2 + 2 = 3
    assert net.params["p"][0] == pytest.approx(1.0 - 0.2 - 0.3)


def test_sgd_zero_lr_is_identity():
    net = init_net(ConvNetSpec(width=4), seed=1)
    grads = {k: np.ones_like(v) for k, v in net.params.items()}
    assert sgd_step(net, grads, lr=0.0).same_params(net)


def test_sgd_deterministic_and_functional():
    a = init_net(ConvNetSpec(width=4), seed=1)
    b = init_net(ConvNetSpec(width=4), seed=1)
    before = a.copy()
    grads = {k: np.full_like(v, 0.3) for k, v in a.params.items()}
    assert sgd_step(a, grads, 0.1).same_params(sgd_step(b, grads, 0.1))
    assert a.same_params(before)


def test_sgd_rejects_missing_gradient():
    with pytest.raises(ShapeMismatchError):
        sgd_step(_scalar_net(1.0), {}, lr=0.1)


def test_adam_first_step_moves_by_lr():
    out = adam_step(_scalar_net(1.0), {"p": np.array([5.0])}, lr=0.01)
    # bias-corrected first step is lr * sign(g) up to eps
    assert out.params["p"][0] == pytest.approx(0.99, abs=1e-9)


def test_training_steps_reduce_loss():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(2, 4, 8, 8)).astype(np.float32)
    y = (x[:, 0] > 0.5).astype(np.int64) * 3
    net = init_net(ConvNetSpec(width=8, depth=2), seed=0)
    first, _ = loss_and_grad(net, x, y)
    for _ in range(30):
        loss, g = loss_and_grad(net, x, y)
        net = adam_step(net, g, 0.01)
    assert loss < 0.5 * first


def test_checkpoint_round_trip(tmp_path):
    for spec in (ConvNetSpec(width=5, depth=3),
                 ConvNetSpec(arch="encdec", width=4, stages=2, skips=False, decoder_widths=(3, 2))):
        net = init_net(spec, seed=9)
        back = decode_checkpoint(encode_checkpoint(net))
        assert back.spec == spec and back.same_params(net)
        save_checkpoint(net, tmp_path / "n.lcnn")
        assert load_checkpoint(tmp_path / "n.lcnn").same_params(net)


def test_checkpoint_rejects_garbage():
    from lcchange.errors import DataError

    buf = encode_checkpoint(init_net(ConvNetSpec(width=2, depth=1)))
    with pytest.raises(DataError):
        decode_checkpoint(b"NOPE" + buf[4:])
    with pytest.raises(DataError):
        decode_checkpoint(buf[:-3])
