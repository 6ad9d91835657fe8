import numpy as np
import pytest

from drformer.model import ConfigError, ForecastModel, ModelConfig, forward, mse_loss
from drformer.numerics import ShapeError, Tensor, check_gradients

TINY = dict(input_len=32, horizon=8, patch_len=8, stride=4, dim=8, groups=2, sparse_ratio=0.5, scales=2, layers=1, heads=2)


def tiny_model(**kw):
    return ForecastModel(ModelConfig(**{**TINY, **kw}))


def test_default_config_values():
    c = ModelConfig()
    assert (c.patch_len, c.stride, c.groups, c.sparse_ratio, c.scales) == (16, 4, 8, 0.5, 3)
    assert c.num_patches == 22


@pytest.mark.parametrize(
    "kw,key",
    [
        (dict(dim=10, groups=4), "groups"),
        (dict(dim=12, heads=5, groups=1), "heads"),
        (dict(dim=12, heads=4, groups=1), "heads"),
        (dict(sparse_ratio=1.5), "sparse_ratio"),
        (dict(input_len=8, patch_len=16), "input_len"),
        (dict(pe_mode="alibi"), "pe_mode"),
        (dict(mask_strategy="random"), "mask_strategy"),
    ],
)
def test_config_validation_names_key(kw, key):
    with pytest.raises(ConfigError, match=key):
        ModelConfig(**kw)


def test_zero_head_predicts_window_mean():
    model = tiny_model()
    model.head_weight.data[:] = 0.0
    model.head_bias.data[:] = 0.0
    x = np.random.default_rng(0).normal(size=(32, 3))
    pred = forward(model, x)
    np.testing.assert_allclose(pred, np.tile(x.mean(axis=0), (8, 1)), atol=1e-12)


def test_output_shape_random_configs():
    rng = np.random.default_rng(1)
    for _ in range(8):
        p = int(rng.choice([4, 8]))
        cfg = dict(TINY, patch_len=p, stride=int(rng.integers(1, p + 1)), scales=int(rng.integers(1, 4)),
                   horizon=int(rng.integers(1, 12)), input_len=int(rng.integers(p, 40)), seed=int(rng.integers(100)))
        c = int(rng.integers(1, 4))
        pred = forward(ForecastModel(ModelConfig(**cfg)), rng.normal(size=(cfg["input_len"], c)))
        assert pred.shape == (cfg["horizon"], c)


def test_identical_channels_share_prediction():
    model = tiny_model()
    col = np.random.default_rng(2).normal(size=32)
    pred = forward(model, np.column_stack([col, col]))
    np.testing.assert_array_equal(pred[:, 0], pred[:, 1])


def test_forward_rejects_wrong_length():
    with pytest.raises(ShapeError):
        forward(tiny_model(), np.zeros((31, 1)))


def test_mse_examples():
    a = np.random.default_rng(3).normal(size=(4, 2))
    assert mse_loss(Tensor(a), a).data == 0.0
    assert mse_loss(Tensor(a + 1), a).data == pytest.approx(1.0)
    assert mse_loss(Tensor([[1.0], [3.0]]), np.zeros((2, 1))).data == 5.0
    with pytest.raises(ShapeError):
        mse_loss(Tensor(np.zeros((2, 1))), np.zeros((1, 2)))


def tally(c: ModelConfig) -> int:
    d, n = c.dim, c.num_patches
    per_layer = 3 * d * d + (d * 4 * d + 4 * d) + (4 * d * d + d) + 4 * d
    fusion = sum(d * d * 2**j for j in range(c.scales))
    return c.patch_len * d + d + c.layers * per_layer + fusion + d * n * c.horizon + c.horizon


@pytest.mark.parametrize("layers,scales", [(1, 2), (2, 3), (0, 1)])
def test_parameter_count_closed_form(layers, scales):
    model = tiny_model(layers=layers, scales=scales)
    assert model.num_parameters() == tally(model.config)
    assert model.num_active_parameters() == model.num_parameters() - int((~model.tokenizer.mask).sum())


def model_loss_fn(model, x, y):
    return lambda: mse_loss(model.forward_batch(x), y)


@pytest.mark.parametrize("pe_mode", ["grope", "rope", "none"])
def test_end_to_end_gradient_check(pe_mode):
    rng = np.random.default_rng(4)
    model = tiny_model(pe_mode=pe_mode, seed=7)
    for blk in model.blocks:
        for p in (blk.ln1_gain, blk.ln1_shift, blk.ln2_gain, blk.ln2_shift):
            p.data += rng.normal(scale=0.2, size=p.shape)
    x = rng.normal(size=(3, 32)) + rng.normal(scale=1e-3, size=(3, 32))
    y = rng.normal(size=(3, 8))
    params = list(model.parameters().values())
    assert check_gradients(model_loss_fn(model, x, y), params) < 1e-4


def test_masked_weights_have_zero_gradient():
    rng = np.random.default_rng(5)
    model = tiny_model()
    loss = mse_loss(model.forward_batch(rng.normal(size=(4, 32))), rng.normal(size=(4, 8)))
    loss.backward()
    assert not model.tokenizer.weight.grad[~model.tokenizer.mask].any()


@pytest.mark.parametrize("c", [0.5, 2.0, 10.0])
@pytest.mark.parametrize("b", [-5.0, 0.0, 7.0])
def test_instance_norm_equivariance(c, b):
    model = tiny_model(seed=3)
    x = np.random.default_rng(6).normal(size=(32, 2))
    base = forward(model, x)
    np.testing.assert_allclose(forward(model, c * x + b), c * base + b, rtol=1e-6, atol=1e-6 * abs(b))


def test_dense_tokenizer_ablation():
    model = tiny_model(dynamic_tokenizer=False)
    assert model.tokenizer.mask.all() and not model.tokenizer.dynamic


def test_rotary_table_shared_across_layers():
    model = tiny_model(layers=3)
    assert model.rotary.angles is model.angles
    assert model.angles.head_dim == model.config.dim // model.config.heads
