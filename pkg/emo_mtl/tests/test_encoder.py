import numpy as np
import pytest

from ..encoder import (
    EncoderConfig,
    attention_bias,
    encode,
    init_encoder,
    parameter_shapes,
    pool_cls,
    self_attention,
)
from ..errors import ConfigError, DimensionError
from ..tensor import Tensor, cross_entropy, grad_check, softmax

SEEDS = range(20)


def identity_attention(width):
    eye = Tensor(np.eye(width, dtype=np.float32))
    zero = Tensor(np.zeros(width, dtype=np.float32))
    return {
        "attention.wq": eye, "attention.bq": zero,
        "attention.wk": eye, "attention.bk": zero,
        "attention.wv": eye, "attention.bv": zero,
        "attention.wo": eye, "attention.bo": zero,
    }


def batch(config, rng, batch_size=2, seq=None):
    seq = seq or config.max_seq_len
    ids = rng.integers(4, config.vocab_size, size=(batch_size, seq))
    ids[:, 0] = 2
    return ids, np.ones((batch_size, seq), dtype=np.int8)


@pytest.mark.parametrize(
    "kwargs, field",
    [
        ({"d_model": 30, "n_heads": 4}, "encoder.n_heads"),
        ({"max_seq_len": 2}, "encoder.max_seq_len"),
        ({"n_layers": 0}, "encoder.n_layers"),
        ({"dropout_p": 1.0}, "encoder.dropout_p"),
    ],
)
def test_config_validation(kwargs, field):
    with pytest.raises(ConfigError) as info:
        EncoderConfig(vocab_size=10, **kwargs)
    assert field in info.value.fields


def test_config_round_trip():
    config = EncoderConfig(vocab_size=50, d_model=16, n_heads=2)
    assert EncoderConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ConfigError):
        EncoderConfig.from_dict({"vocab_size": 5, "width": 3})


def test_parameter_count_closed_form():
    config = EncoderConfig(vocab_size=100, d_model=32, n_heads=4, d_ff=64, n_layers=2,
                           max_seq_len=64)
    state = init_encoder(config, seed=0)
    assert config.parameter_count() == 22336
    assert state.parameter_count() == 22336
    assert len({name for name, _ in parameter_shapes(config)}) == len(state.params)


def test_init_is_deterministic(toy_config):
    first = init_encoder(toy_config, seed=3)
    second = init_encoder(toy_config, seed=3)
    for name, tensor in first.params.items():
        assert tensor.data.tobytes() == second[name].data.tobytes()
    other = init_encoder(toy_config, seed=4)
    assert other["token_embedding"].data.tobytes() != first["token_embedding"].data.tobytes()


def test_init_values():
    config = EncoderConfig(vocab_size=500, d_model=64, n_heads=4, d_ff=128, n_layers=1)
    state = init_encoder(config, seed=0)
    np.testing.assert_array_equal(state["layers.0.attention_norm.gamma"].data, 1.0)
    np.testing.assert_array_equal(state["layers.0.ffn_norm.beta"].data, 0.0)
    np.testing.assert_array_equal(state["layers.0.attention.bq"].data, 0.0)
    assert state["token_embedding"].data.dtype == np.float32
    assert abs(state["token_embedding"].data.std() - 0.02) < 1e-3


def test_attention_uniform_when_scores_vanish():
    # Keys orthogonal to the queries give zero scores everywhere.
    x = np.array([[[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 5.0, 1.0], [0.0, 0.0, 2.0, 3.0]]],
                 dtype=np.float32)
    params = identity_attention(4)
    params["attention.wk"] = Tensor(np.diag([0.0, 0.0, 0.0, 0.0]).astype(np.float32))
    out, weights = self_attention(Tensor(x), np.ones((1, 3)), params, n_heads=1,
                                  return_weights=True)
    np.testing.assert_allclose(weights.data, 1.0 / 3.0, atol=1e-6)
    np.testing.assert_allclose(out.data[0], np.tile(x[0].mean(axis=0), (3, 1)), atol=1e-6)


def test_attention_single_unmasked_key():
    x = np.random.default_rng(0).normal(size=(1, 3, 4)).astype(np.float32)
    mask = np.array([[1, 0, 0]])
    out = self_attention(Tensor(x), mask, identity_attention(4), n_heads=2)
    np.testing.assert_allclose(out.data[0, 0], x[0, 0], atol=1e-6)


def test_attention_weights_sum_to_one(toy_config, rng):
    state = init_encoder(toy_config, seed=1)
    x = Tensor(rng.normal(size=(2, 5, 8)).astype(np.float32))
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]])
    _, weights = self_attention(x, mask, state.layer(0), toy_config.n_heads,
                                return_weights=True)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(weights.data[0, :, :, 3:] < 1e-6)


def test_attention_shape_checks():
    params = identity_attention(4)
    with pytest.raises(DimensionError):
        self_attention(Tensor(np.zeros((3, 4))), np.ones((1, 3)), params, n_heads=2)
    with pytest.raises(DimensionError):
        self_attention(Tensor(np.zeros((1, 3, 4))), np.ones((1, 2)), params, n_heads=2)


def test_attention_bias_shape():
    bias = attention_bias(np.array([[1, 1, 0]]))
    assert bias.shape == (1, 1, 1, 3)
    assert bias[0, 0, 0, 2] == np.float32(-1e9)


@pytest.mark.parametrize("seed", SEEDS)
def test_encode_full_gradient_check(seed):
    config = EncoderConfig(vocab_size=10, d_model=8, n_heads=2, d_ff=16, n_layers=1,
                           max_seq_len=4, dropout_p=0.0)
    state = init_encoder(config, seed=seed)
    rng = np.random.default_rng(seed)
    # Larger weights keep the layernorms away from their flat region.
    for tensor in state.params.values():
        tensor.data = rng.normal(0.0, 0.5, size=tensor.shape).astype(np.float32)
    head = Tensor(rng.normal(0.0, 0.5, size=(8, 3)).astype(np.float32), requires_grad=True)
    ids = np.array([[2, 5, 7, 3], [2, 4, 3, 0]])
    mask = (ids != 0).astype(np.int8)
    labels = rng.integers(0, 3, size=2)

    def f():
        return cross_entropy(softmax(pool_cls(encode(ids, mask, state)) @ head), labels)

    # Every encoder tensor, so the whole check runs in float64.
    inputs = [head] + list(state.params.values())
    assert grad_check(f, inputs, h=1e-5, floor=1e-5) < 1e-3


def test_encode_eval_mode_is_deterministic(toy_config, rng):
    config = EncoderConfig(**{**toy_config.to_dict(), "dropout_p": 0.3})
    state = init_encoder(config, seed=0)
    ids, mask = batch(config, rng)
    first = encode(ids, mask, state).data
    second = encode(ids, mask, state).data
    assert first.tobytes() == second.tobytes()
    trained = encode(ids, mask, state, training=True, rng=np.random.default_rng(0)).data
    assert trained.tobytes() != first.tobytes()


def test_pad_positions_do_not_leak(toy_config, rng):
    state = init_encoder(toy_config, seed=2)
    ids = np.array([[2, 5, 6, 3, 0, 0], [2, 7, 3, 0, 0, 0]])
    mask = (ids != 0).astype(np.int8)
    base = encode(ids, mask, state).data
    for _ in range(5):
        swapped = ids.copy()
        swapped[mask == 0] = rng.integers(4, toy_config.vocab_size, size=(mask == 0).sum())
        out = encode(swapped, mask, state).data
        np.testing.assert_allclose(out[mask == 1], base[mask == 1], atol=1e-6)


def test_encode_rejects_long_sequences(toy_config):
    state = init_encoder(toy_config, seed=0)
    ids = np.full((1, toy_config.max_seq_len + 1), 2)
    with pytest.raises(IndexError):
        encode(ids, np.ones_like(ids), state)
    with pytest.raises(IndexError):
        encode(np.array([[2, 99]]), np.ones((1, 2)), state)


def test_pool_cls(rng):
    hidden = Tensor(rng.normal(size=(3, 16, 8)).astype(np.float32), requires_grad=True)
    pooled = pool_cls(hidden)
    assert pooled.shape == (3, 8)
    np.testing.assert_array_equal(pooled.data[0], hidden.data[0, 0])
    pooled.sum().backward()
    assert np.all(hidden.grad[:, 0, :] == 1.0)
    assert np.all(hidden.grad[:, 1:, :] == 0.0)
