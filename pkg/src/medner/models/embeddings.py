"""Word vocabularies, pretrained vector files and the word+character representation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from medner.models.recurrent import CharEncoder
from medner.numerics import nn
from medner.numerics.tensor import Parameter, Tensor, concat, embedding_lookup
from medner.tokenization import normalize_numbers

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"


@dataclass
class EmbeddingConfig:
    word_dim: int = 300
    char_dim: int = 100
    char_inner_dim: int = 25

    @property
    def output_dim(self) -> int:
        return self.word_dim + self.char_dim


@dataclass
class Vocab:
    """Index 0 is padding and index 1 the unknown symbol."""

    items: list[str] = field(default_factory=lambda: [PAD, UNK])

    def __post_init__(self):
        if self.items[:2] != [PAD, UNK]:
            self.items = [PAD, UNK] + [t for t in self.items if t not in (PAD, UNK)]
        self.index = {t: i for i, t in enumerate(self.items)}

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item: str) -> bool:
        return item in self.index

    def add(self, item: str) -> int:
        if item not in self.index:
            self.index[item] = len(self.items)
            self.items.append(item)
        return self.index[item]

    def lookup(self, item: str) -> int:
        return self.index.get(item, 1)

    @classmethod
    def build(cls, items: Iterable[str]) -> "Vocab":
        vocab = cls()
        for item in items:
            vocab.add(item)
        return vocab


def load_pretrained_embeddings(path) -> tuple[np.ndarray, list[str]]:
    """Read ``token v1 ... vd`` lines.  Duplicate tokens keep their first vector."""
    rows: list[np.ndarray] = []
    tokens: list[str] = []
    seen = set()
    dim = None
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise ValueError(f"{path}:{ln}: expected {dim} values, found {len(values)}")
            if token in seen:
                log.warning("%s:%d: duplicate token %r ignored", path, ln, token)
                continue
            seen.add(token)
            tokens.append(token)
            rows.append(np.array(values, dtype=np.float64))
    matrix = np.stack(rows) if rows else np.zeros((0, dim or 0))
    return matrix, tokens


def embedding_matrix(vocab: Vocab, dim: int, rng: np.random.Generator,
                     pretrained: tuple[np.ndarray, list[str]] | None = None) -> np.ndarray:
    """Random rows for every vocab entry, overwritten by pretrained vectors where available; padding row zero."""
    matrix = nn.embedding_uniform(rng, len(vocab), dim)
    if pretrained is not None:
        vectors, tokens = pretrained
        if vectors.shape[1] != dim:
            raise ValueError(f"pretrained vectors have dimension {vectors.shape[1]}, expected {dim}")
        for tok, vec in zip(tokens, vectors):
            if tok in vocab:
                matrix[vocab.index[tok]] = vec
    matrix[0] = 0.0
    return matrix


class WordRepresentation(nn.Module):
    """Word vector (pretrained or learned) concatenated with a character-level encoding."""

    def __init__(self, word_vocab: Vocab, char_vocab: Vocab, config: EmbeddingConfig, rng: np.random.Generator,
                 pretrained: tuple[np.ndarray, list[str]] | None = None):
        self.word_vocab = word_vocab
        self.char_vocab = char_vocab
        self.config = config
        self.words = Parameter(embedding_matrix(word_vocab, config.word_dim, rng, pretrained))
        self.chars = CharEncoder(len(char_vocab), config.char_inner_dim, config.char_dim, rng)

    @property
    def out_dim(self) -> int:
        return self.config.word_dim + self.chars.out_dim

    def encode_words(self, sentences: Sequence[Sequence[str]]):
        """Integer arrays for a batch: word ids, char ids of every word, char lengths."""
        batch = len(sentences)
        steps = max((len(s) for s in sentences), default=0)
        word_ids = np.zeros((batch, steps), dtype=np.int64)
        flat = []
        for b, sent in enumerate(sentences):
            normalized = normalize_numbers(sent)
            word_ids[b, :len(sent)] = [self.word_vocab.lookup(w) for w in normalized]
            flat.extend(normalized)
            flat.extend([""] * (steps - len(sent)))
        width = max((len(w) for w in flat), default=0)
        char_ids = np.zeros((len(flat), width), dtype=np.int64)
        char_len = np.array([len(w) for w in flat], dtype=np.int64)
        for i, w in enumerate(flat):
            char_ids[i, :len(w)] = [self.char_vocab.lookup(ch) for ch in w]
        return word_ids, char_ids, char_len

    def __call__(self, sentences: Sequence[Sequence[str]]) -> Tensor:
        """``(batch, max_len, word_dim + char_dim)`` for a list of token lists."""
        word_ids, char_ids, char_len = self.encode_words(sentences)
        batch, steps = word_ids.shape
        words = embedding_lookup(self.words, word_ids)
        chars = self.chars(char_ids, char_len).reshape(batch, steps, self.chars.out_dim)
        return concat([words, chars], axis=-1)

    def assemble_word_repr(self, word: str) -> Tensor:
        return self([[word]]).reshape(self.out_dim)
