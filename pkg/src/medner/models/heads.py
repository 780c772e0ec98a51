"""Token classification heads and the dual-encoder concatenation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from medner.models.recurrent import BiLSTM
from medner.models.transformer import TransformerEncoder
from medner.numerics import nn
from medner.numerics.tensor import ShapeError, Tensor, concat, dropout, getitem

HEAD_KINDS = ("linear_softmax", "bilstm_over_last4")


@dataclass
class HeadConfig:
    kind: str = "linear_softmax"
    # encoder layers concatenated as head input: 1 for linear, 4 for bilstm_over_last4
    layers_used: int | None = None

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.kind!r}")
        if self.layers_used is None:
            self.layers_used = 1 if self.kind == "linear_softmax" else 4

    def input_dim(self, hidden_size: int) -> int:
        return self.layers_used * hidden_size


class TokenHead(nn.Module):
    """Linear head over the last layer, or a bidirectional LSTM over the last ``k`` layers.

    The recurrent variant keeps its width: per-direction hidden is half the
    input size, so input and output are both ``k * hidden``.
    """

    def __init__(self, config: HeadConfig, hidden_size: int, num_tags: int, rng: np.random.Generator,
                 dropout_prob: float = 0.1):
        self.config = config
        self.in_dim = config.input_dim(hidden_size)
        self.rnn = BiLSTM(self.in_dim, self.in_dim, rng) if config.kind == "bilstm_over_last4" else None
        self.proj = nn.Linear(self.in_dim, num_tags, rng)
        self.dropout_prob = dropout_prob

    def __call__(self, layer_outputs: Sequence[Tensor], lengths, rng=None) -> Tensor:
        k = self.config.layers_used
        if len(layer_outputs) < k:
            raise ValueError(f"{self.config.kind} head needs {k} encoder layers, got {len(layer_outputs)}")
        feats = layer_outputs[-1] if k == 1 else concat(list(layer_outputs[-k:]), axis=-1)
        if feats.shape[-1] != self.in_dim:
            raise ShapeError(f"head expects features of size {self.in_dim}, got {feats.shape[-1]}")
        if self.rnn is not None:
            feats = self.rnn(feats, lengths)
        return self.proj(dropout(feats, self.dropout_prob, rng, self.training))


def classify_tokens(layer_outputs: Sequence[Tensor], head: TokenHead, lengths=None, rng=None) -> Tensor:
    if lengths is None:
        last = layer_outputs[-1]
        lengths = np.full(last.shape[0], last.shape[1])
    return head(layer_outputs, lengths, rng)


def gather_positions(states: Tensor, positions: np.ndarray) -> Tensor:
    """``states[b, positions[b, w]]`` for a ``(batch, words)`` position table."""
    rows = np.arange(states.shape[0])[:, None]
    return getitem(states, (rows, np.asarray(positions, dtype=np.int64)))


def dual_encoder_forward(ids_a, ids_b, encoder_a: TransformerEncoder, encoder_b: TransformerEncoder,
                         mask_a=None, mask_b=None, positions_a=None, positions_b=None, rng=None) -> Tensor:
    """Concatenate the final hidden states of two encoders.

    Without position tables both encoders must see the same piece sequence
    and states are joined piece by piece.  With ``(batch, words)`` tables of
    first-piece positions each encoder keeps its own tokenization and states
    are joined word by word.
    """
    last_a = encoder_a(ids_a, mask_a, rng)[-1]
    last_b = encoder_b(ids_b, mask_b, rng)[-1]
    if positions_a is not None or positions_b is not None:
        if positions_a is None or positions_b is None:
            raise ValueError("dual_encoder_forward: give position tables for both encoders or neither")
        last_a = gather_positions(last_a, positions_a)
        last_b = gather_positions(last_b, positions_b)
    if last_a.shape[:2] != last_b.shape[:2]:
        raise ShapeError(f"dual_encoder_forward: sequence lengths differ, {last_a.shape[:2]} vs {last_b.shape[:2]}")
    return concat([last_a, last_b], axis=-1)
