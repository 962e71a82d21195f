"""Layers built on the autodiff core: linear maps, layer norm, multi-head
self-attention, and the pre-norm set encoder used by the listwise ranker.

The encoder carries no positional signal and no dropout, so it is
permutation-equivariant over input rows and fully deterministic.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ENCODER_LAYER_RANGE = (1, 4)
ENCODER_HEAD_CHOICES = (2, 4, 8)


class ConfigError(ValueError):
    pass


def glorot_uniform(rng, fan_in, fan_out, shape):
    """Symmetric uniform init with limit sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear:
    def __init__(self, in_dim, out_dim, rng, name):
        self.name = name
        self.weight = ad.tensor(glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim)), requires_grad=True)
        self.bias = ad.tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]


class LayerNorm:
    def __init__(self, dim, name):
        self.name = name
        self.gain = ad.tensor(np.ones(dim), requires_grad=True)
        self.bias = ad.tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.bias)

    def parameters(self):
        return [(f"{self.name}.gain", self.gain), (f"{self.name}.bias", self.bias)]


class SelfAttention:
    """Multi-head scaled dot-product self-attention over list rows."""

    def __init__(self, dim, heads, rng, name):
        if dim % heads != 0:
            raise ConfigError(f"model width {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.name = name
        self.query = Linear(dim, dim, rng, f"{name}.query")
        self.key = Linear(dim, dim, rng, f"{name}.key")
        self.value = Linear(dim, dim, rng, f"{name}.value")
        self.out = Linear(dim, dim, rng, f"{name}.out")

    def __call__(self, x):
        # x: (batch, n, dim)
        b, n, d = x.shape
        h, hd = self.heads, self.head_dim

        def split(t):
            return ad.transpose(ad.reshape(t, (b, n, h, hd)), (0, 2, 1, 3))

        q = split(self.query(x))
        k = split(self.key(x))
        v = split(self.value(x))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
        mixed = ad.matmul(ad.softmax(scores, axis=-1), v)
        merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, n, d))
        return self.out(merged)

    def parameters(self):
        params = []
        for part in (self.query, self.key, self.value, self.out):
            params.extend(part.parameters())
        return params


class FeedForward:
    """Position-wise two-layer map with ELU, hidden width 2x the model dim."""

    def __init__(self, dim, rng, name):
        self.inner = Linear(dim, 2 * dim, rng, f"{name}.inner")
        self.outer = Linear(2 * dim, dim, rng, f"{name}.outer")

    def __call__(self, x):
        return self.outer(ad.elu(self.inner(x)))

    def parameters(self):
        return self.inner.parameters() + self.outer.parameters()


class EncoderLayer:
    """Pre-norm block: LN -> attention -> residual, LN -> feed-forward -> residual."""

    def __init__(self, dim, heads, rng, name):
        self.norm_attn = LayerNorm(dim, f"{name}.norm_attn")
        self.attn = SelfAttention(dim, heads, rng, f"{name}.attn")
        self.norm_ff = LayerNorm(dim, f"{name}.norm_ff")
        self.ff = FeedForward(dim, rng, f"{name}.ff")

    def __call__(self, x):
        x = ad.add(x, self.attn(self.norm_attn(x)))
        return ad.add(x, self.ff(self.norm_ff(x)))

    def parameters(self):
        return (
            self.norm_attn.parameters()
            + self.attn.parameters()
            + self.norm_ff.parameters()
            + self.ff.parameters()
        )


class TransformerEncoder:
    """Stack of pre-norm self-attention blocks mixing context across rows.

    Accepts (n, dim) or (batch, n, dim); output keeps the input shape and
    row i is a context-mixed representation of input row i.
    """

    def __init__(self, dim, layers, heads, rng, name="encoder"):
        lo, hi = ENCODER_LAYER_RANGE
        if not lo <= layers <= hi:
            raise ConfigError(f"encoder layers must be in [{lo}, {hi}], got {layers}")
        if heads not in ENCODER_HEAD_CHOICES:
            raise ConfigError(f"encoder heads must be one of {ENCODER_HEAD_CHOICES}, got {heads}")
        if dim % heads != 0:
            raise ConfigError(f"model width {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.layers = [EncoderLayer(dim, heads, rng, f"{name}.layer{i}") for i in range(layers)]

    def __call__(self, x):
        single = isinstance(x, Tensor) and x.values.ndim == 2
        if single:
            n, d = x.shape
            x = ad.reshape(x, (1, n, d))
        for layer in self.layers:
            x = layer(x)
        if single:
            b, n, d = x.shape
            x = ad.reshape(x, (n, d))
        return x

    def parameters(self):
        params = []
        for layer in self.layers:
            params.extend(layer.parameters())
        return params


class MLP:
    """Fully connected scorer with ELU on hidden layers and a linear output."""

    def __init__(self, dims, rng, name):
        self.stages = [
            Linear(dims[i], dims[i + 1], rng, f"{name}.stage{i}") for i in range(len(dims) - 1)
        ]

    def __call__(self, x):
        for stage in self.stages[:-1]:
            x = ad.elu(stage(x))
        return self.stages[-1](x)

    def parameters(self):
        params = []
        for stage in self.stages:
            params.extend(stage.parameters())
        return params


def attention_encode(inputs, layers, heads, rng=None):
    """Run a freshly initialized set encoder over (n, d) rows.

    Convenience for experiments and tests; models own their encoder instance.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = inputs if isinstance(inputs, Tensor) else ad.tensor(inputs)
    encoder = TransformerEncoder(x.shape[-1], layers, heads, rng)
    return encoder(x)
