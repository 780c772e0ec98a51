"""LSTM layers: single direction, bidirectional, stacked, and the character encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from medner.numerics import nn
from medner.numerics.tensor import (
    Parameter, Tensor, as_tensor, concat, dropout, embedding_lookup, getitem, matmul, sigmoid, stack, tanh, where,
)


@dataclass
class BiLstmConfig:
    num_layers: int = 2
    # both directions concatenated; each direction gets half
    hidden_total: int = 1536

    def __post_init__(self):
        if self.hidden_total % 2:
            raise ValueError(f"hidden_total must be even, got {self.hidden_total}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")


class LSTMDirection(nn.Module):
    """Left-to-right LSTM over right-padded ``(batch, time, features)`` input.

    Gate layout along the last axis of the weights is input, forget, output, candidate.
    """

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w_input = Parameter(nn.xavier_uniform(rng, in_dim, 4 * hidden))
        self.w_hidden = Parameter(nn.xavier_uniform(rng, hidden, 4 * hidden))
        self.bias = Parameter(np.zeros(4 * hidden))

    def __call__(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        batch, steps, _ = x.shape
        H = self.hidden
        projected = matmul(x, self.w_input) + self.bias
        h = Tensor(np.zeros((batch, H), dtype=x.dtype))
        c = Tensor(np.zeros((batch, H), dtype=x.dtype))
        outputs = []
        for t in range(steps):
            z = projected[:, t] + matmul(h, self.w_hidden)
            gates = sigmoid(z[:, :3 * H])
            cand = tanh(z[:, 3 * H:])
            i, f, o = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:]
            c = f * c + i * cand
            h = o * tanh(c)
            outputs.append(h)
        return stack(outputs, axis=1)


def reverse_index(lengths: np.ndarray, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Index pair that reverses each row within its length and leaves padding in place."""
    lengths = np.asarray(lengths)
    t = np.arange(steps)[None, :]
    rev = np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
    return np.arange(len(lengths))[:, None], rev


class BiLSTM(nn.Module):
    def __init__(self, in_dim: int, hidden_total: int, rng: np.random.Generator):
        if hidden_total % 2:
            raise ValueError(f"hidden_total must be even, got {hidden_total}")
        self.forward_dir = LSTMDirection(in_dim, hidden_total // 2, rng)
        self.backward_dir = LSTMDirection(in_dim, hidden_total // 2, rng)

    @property
    def out_dim(self) -> int:
        return 2 * self.forward_dir.hidden

    def directions(self, x: Tensor, lengths) -> tuple[Tensor, Tensor]:
        x = as_tensor(x)
        idx = reverse_index(lengths, x.shape[1])
        fwd = self.forward_dir(x)
        bwd = getitem(self.backward_dir(getitem(x, idx)), idx)
        return fwd, bwd

    def __call__(self, x: Tensor, lengths) -> Tensor:
        fwd, bwd = self.directions(x, lengths)
        return concat([fwd, bwd], axis=-1)


class StackedBiLSTM(nn.Module):
    """Layer k+1 consumes the concatenated output of layer k."""

    def __init__(self, in_dim: int, config: BiLstmConfig, rng: np.random.Generator, dropout_prob: float = 0.0):
        self.layers = []
        dim = in_dim
        for _ in range(config.num_layers):
            self.layers.append(BiLSTM(dim, config.hidden_total, rng))
            dim = config.hidden_total
        self.dropout_prob = dropout_prob

    def __call__(self, x: Tensor, lengths, rng: np.random.Generator | None = None) -> Tensor:
        for k, layer in enumerate(self.layers):
            if k:
                x = dropout(x, self.dropout_prob, rng, self.training)
            x = layer(x, lengths)
        return x


def bilstm_forward(inputs, config: BiLstmConfig, params: StackedBiLSTM, lengths=None) -> Tensor:
    """Run ``params`` over a single ``(time, features)`` sequence or a padded batch."""
    x = as_tensor(inputs)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.shape[1] == 0:
        raise ValueError("bilstm_forward: empty sequence")
    if len(params.layers) != config.num_layers:
        raise ValueError("bilstm_forward: parameters do not match config")
    if lengths is None:
        lengths = np.full(x.shape[0], x.shape[1])
    out = params(x, lengths)
    return out.reshape(out.shape[1:]) if squeeze else out


class CharEncoder(nn.Module):
    """Per-character embeddings through one bidirectional LSTM; final states concatenated."""

    def __init__(self, num_chars: int, char_inner_dim: int, out_dim: int, rng: np.random.Generator):
        self.embedding = Parameter(nn.embedding_uniform(rng, num_chars, char_inner_dim))
        self.rnn = BiLSTM(char_inner_dim, out_dim, rng)

    @property
    def out_dim(self) -> int:
        return self.rnn.out_dim

    def __call__(self, char_ids: np.ndarray, lengths: np.ndarray) -> Tensor:
        """``char_ids``: ``(words, max_chars)``; zero-length words encode to zeros."""
        n, width = char_ids.shape
        if width == 0:
            return Tensor(np.zeros((n, self.out_dim)))
        chars = embedding_lookup(self.embedding, char_ids)
        fwd, bwd = self.rnn.directions(chars, lengths)
        rows = np.arange(n)
        last = np.maximum(lengths - 1, 0)
        final = concat([getitem(fwd, (rows, last)), getitem(bwd, (rows, np.zeros(n, dtype=np.int64)))], axis=-1)
        return where((lengths > 0)[:, None], final, 0.0)
