"""Post-layer-norm transformer encoder (BERT layout) with padding-masked self-attention."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from medner.numerics import nn
from medner.numerics.tensor import (
    Parameter, Tensor, dropout, embedding_lookup, gelu, layer_norm, matmul, softmax,
)

MASK_BIAS = -1e9


@dataclass
class EncoderConfig:
    vocab_size: int
    num_layers: int = 4
    hidden_size: int = 64
    num_heads: int = 4
    max_positions: int = 128
    intermediate_size: int = 256
    dropout_prob: float = 0.1

    def __post_init__(self):
        if self.hidden_size % self.num_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")

    @classmethod
    def bert_base(cls, vocab_size: int = 30522) -> "EncoderConfig":
        return cls(vocab_size, num_layers=12, hidden_size=768, num_heads=12, max_positions=512,
                   intermediate_size=3072)


class LayerNorm(nn.Module):
    def __init__(self, dim: int):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class SelfAttention(nn.Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        H = config.hidden_size
        self.num_heads = config.num_heads
        self.query = nn.Linear(H, H, rng, init="normal")
        self.key = nn.Linear(H, H, rng, init="normal")
        self.value = nn.Linear(H, H, rng, init="normal")
        self.output = nn.Linear(H, H, rng, init="normal")

    def __call__(self, x: Tensor, key_bias: np.ndarray, p: float, rng, training: bool):
        batch, steps, H = x.shape
        h, d = self.num_heads, H // self.num_heads

        def heads(t):
            return t.reshape(batch, steps, h, d).transpose(0, 2, 1, 3)

        q, k, v = heads(self.query(x)), heads(self.key(x)), heads(self.value(x))
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d)) + key_bias
        probs = softmax(scores, axis=-1)
        context = matmul(dropout(probs, p, rng, training), v)
        merged = context.transpose(0, 2, 1, 3).reshape(batch, steps, H)
        return self.output(merged), probs


class EncoderLayer(nn.Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.attention = SelfAttention(config, rng)
        self.attention_norm = LayerNorm(config.hidden_size)
        self.intermediate = nn.Linear(config.hidden_size, config.intermediate_size, rng, init="normal")
        self.output = nn.Linear(config.intermediate_size, config.hidden_size, rng, init="normal")
        self.output_norm = LayerNorm(config.hidden_size)
        self.dropout_prob = config.dropout_prob

    def __call__(self, x: Tensor, key_bias: np.ndarray, rng=None):
        p, training = self.dropout_prob, self.training
        attended, probs = self.attention(x, key_bias, p, rng, training)
        x = self.attention_norm(x + dropout(attended, p, rng, training))
        ff = self.output(gelu(self.intermediate(x)))
        return self.output_norm(x + dropout(ff, p, rng, training)), probs


class TransformerEncoder(nn.Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.token_embedding = Parameter(nn.scaled_normal(rng, (config.vocab_size, config.hidden_size)))
        self.position_embedding = Parameter(nn.scaled_normal(rng, (config.max_positions, config.hidden_size)))
        self.embedding_norm = LayerNorm(config.hidden_size)
        self.layers = [EncoderLayer(config, rng) for _ in range(config.num_layers)]

    @property
    def hidden_size(self) -> int:
        return self.config.hidden_size

    def __call__(self, piece_ids, mask=None, rng=None, return_attention: bool = False):
        """Per-layer hidden states, each ``(batch, time, hidden)``; padding keys get zero attention."""
        ids = np.asarray(piece_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        batch, steps = ids.shape
        if steps > self.config.max_positions:
            raise ValueError(f"input of {steps} pieces exceeds max_positions={self.config.max_positions}")
        mask = np.ones_like(ids, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(ids.shape)
        key_bias = np.where(mask, 0.0, MASK_BIAS)[:, None, None, :]
        x = embedding_lookup(self.token_embedding, ids) + self.position_embedding[:steps]
        x = dropout(self.embedding_norm(x), self.config.dropout_prob, rng, self.training)
        outputs, attention = [], []
        for layer in self.layers:
            x, probs = layer(x, key_bias, rng)
            outputs.append(x)
            attention.append(probs)
        return (outputs, attention) if return_attention else outputs


def transformer_forward(piece_ids, config: EncoderConfig, params: TransformerEncoder, mask=None, rng=None):
    if params.config is not config and params.config != config:
        raise ValueError("transformer_forward: parameters were built for a different config")
    return params(piece_ids, mask, rng)
