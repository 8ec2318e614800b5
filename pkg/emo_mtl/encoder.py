"""
The shared sentence encoder: a small post-norm BERT-style transformer.
"""
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import FLOAT, Tensor, dropout, embedding_gather, gelu, layernorm, softmax

INIT_STD = 0.02
MASK_VALUE = -1e9


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    n_layers: int = 2
    max_seq_len: int = 64
    dropout_p: float = 0.1
    layernorm_eps: float = 1e-12

    def __post_init__(self):
        problems = {}
        for name in ("vocab_size", "d_model", "n_heads", "d_ff", "n_layers"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                problems[f"encoder.{name}"] = f"must be a positive integer, got {value!r}"
        if not problems and self.d_model % self.n_heads:
            problems["encoder.n_heads"] = (
                f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}"
            )
        if not isinstance(self.max_seq_len, int) or self.max_seq_len < 3:
            problems["encoder.max_seq_len"] = f"must be at least 3, got {self.max_seq_len!r}"
        if not 0.0 <= self.dropout_p < 1.0:
            problems["encoder.dropout_p"] = f"must lie in [0, 1), got {self.dropout_p!r}"
        if not self.layernorm_eps > 0:
            problems["encoder.layernorm_eps"] = f"must be positive, got {self.layernorm_eps!r}"
        if problems:
            raise ConfigError(problems)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError({f"encoder.{key}": "unknown field" for key in unknown})
        return cls(**values)

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    def parameter_count(self):
        d, f = self.d_model, self.d_ff
        per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
        return (self.vocab_size + self.max_seq_len) * d + self.n_layers * per_layer


def _layer_shapes(config):
    d, f = config.d_model, config.d_ff
    return [
        ("attention.wq", (d, d)),
        ("attention.bq", (d,)),
        ("attention.wk", (d, d)),
        ("attention.bk", (d,)),
        ("attention.wv", (d, d)),
        ("attention.bv", (d,)),
        ("attention.wo", (d, d)),
        ("attention.bo", (d,)),
        ("attention_norm.gamma", (d,)),
        ("attention_norm.beta", (d,)),
        ("ffn.w1", (d, f)),
        ("ffn.b1", (f,)),
        ("ffn.w2", (f, d)),
        ("ffn.b2", (d,)),
        ("ffn_norm.gamma", (d,)),
        ("ffn_norm.beta", (d,)),
    ]


def parameter_shapes(config):
    "Ordered ``(name, shape)`` pairs of every encoder parameter."
    shapes = [
        ("token_embedding", (config.vocab_size, config.d_model)),
        ("position_embedding", (config.max_seq_len, config.d_model)),
    ]
    for i in range(config.n_layers):
        shapes.extend((f"layers.{i}.{name}", shape) for name, shape in _layer_shapes(config))
    return shapes


class EncoderState:
    """
    The single parameter set shared by every task head.

    ``params`` maps names such as ``layers.0.attention.wq`` to tensors.
    """

    def __init__(self, config, params):
        self.config = config
        self.params = params

    def __getitem__(self, name):
        return self.params[name]

    def layer(self, i):
        prefix = f"layers.{i}."
        return {
            name[len(prefix):]: tensor
            for name, tensor in self.params.items()
            if name.startswith(prefix)
        }

    def parameter_count(self):
        return sum(tensor.size for tensor in self.params.values())


def init_encoder(config, seed):
    """
    Weights ~ Normal(0, 0.02), biases and betas 0, gammas 1.

    Deterministic in ``seed``.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            data = np.ones(shape, dtype=FLOAT)
        elif leaf == "beta" or leaf.startswith("b"):
            data = np.zeros(shape, dtype=FLOAT)
        else:
            data = rng.normal(0.0, INIT_STD, size=shape).astype(FLOAT)
        params[name] = Tensor(data, requires_grad=True, name=f"encoder.{name}")
    return EncoderState(config, params)


def attention_bias(mask):
    "Additive bias of shape [B x 1 x 1 x S]: 0 at real keys, -1e9 at PAD keys."
    mask = np.asarray(mask)
    bias = np.where(mask > 0, 0.0, MASK_VALUE).astype(FLOAT)
    return bias[:, None, None, :]


def self_attention(x, mask, params, n_heads, return_weights=False):
    """
    Multi-head scaled dot-product self-attention.

    Parameters
    ----------
    x : Tensor
        Hidden states of shape [B x S x d].
    mask : array-like
        [B x S], 1 at real tokens and 0 at PAD.
    params : dict
        ``attention.wq`` ... ``attention.bo`` of one layer.
    n_heads : int
    return_weights : bool
        Also return the [B x heads x S x S] attention weights.
    """
    if x.ndim != 3:
        raise DimensionError(f"self_attention expects [B x S x d], got {list(x.shape)}")
    batch, seq, width = x.shape
    mask = np.asarray(mask)
    if mask.shape != (batch, seq):
        raise DimensionError(
            f"attention mask {list(mask.shape)} does not match input {list(x.shape)}"
        )
    if width % n_heads:
        raise DimensionError(f"width {width} is not divisible into {n_heads} heads")
    head_dim = width // n_heads

    def split_heads(t):
        return t.reshape(batch, seq, n_heads, head_dim).transpose(0, 2, 1, 3)

    query = split_heads(x @ params["attention.wq"] + params["attention.bq"])
    key = split_heads(x @ params["attention.wk"] + params["attention.bk"])
    value = split_heads(x @ params["attention.wv"] + params["attention.bv"])

    scores = (query @ key.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(head_dim))
    weights = softmax(scores + attention_bias(mask), axis=-1)
    context = (weights @ value).transpose(0, 2, 1, 3).reshape(batch, seq, width)
    out = context @ params["attention.wo"] + params["attention.bo"]
    if return_weights:
        return out, weights
    return out


def encode(ids, mask, state, training=False, rng=None):
    """
    Run the encoder over a padded id batch.

    Token and position embeddings, then per layer: attention, add & norm,
    GELU feed-forward, add & norm. Dropout is active only when ``training``.

    Returns
    -------
    Tensor
        Hidden states of shape [B x S x d].
    """
    config = state.config
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise DimensionError(f"encode expects [B x S] ids, got shape {list(ids.shape)}")
    seq = ids.shape[1]
    if seq > config.max_seq_len:
        raise IndexError(f"sequence length {seq} exceeds max_seq_len {config.max_seq_len}")

    p = config.dropout_p
    hidden = embedding_gather(state["token_embedding"], ids) + embedding_gather(
        state["position_embedding"], np.arange(seq)
    )
    hidden = dropout(hidden, p, training, rng)
    for i in range(config.n_layers):
        layer = state.layer(i)
        attended = self_attention(hidden, mask, layer, config.n_heads)
        hidden = layernorm(
            hidden + dropout(attended, p, training, rng),
            layer["attention_norm.gamma"],
            layer["attention_norm.beta"],
            config.layernorm_eps,
        )
        inner = gelu(hidden @ layer["ffn.w1"] + layer["ffn.b1"])
        projected = inner @ layer["ffn.w2"] + layer["ffn.b2"]
        hidden = layernorm(
            hidden + dropout(projected, p, training, rng),
            layer["ffn_norm.gamma"],
            layer["ffn_norm.beta"],
            config.layernorm_eps,
        )
    return hidden


def pool_cls(hidden):
    "The hidden row at position 0 (CLS) of every sequence: [B x S x d] -> [B x d]."
    if hidden.ndim != 3 or hidden.shape[1] < 1:
        raise DimensionError(f"pool_cls expects [B x S x d] with S >= 1, got {list(hidden.shape)}")
    return hidden[:, 0, :]
