"""End-to-end taggers: bi-LSTM+CRF, single encoder + head, and the dual-encoder model.

Every tagger exposes the same small surface used by training and the CLI:
``loss(sequences, rng)`` (summed over the batch), ``predict(token_lists)``,
``meta()`` and ``from_meta(meta)`` for checkpoints.
"""
from __future__ import annotations

import collections
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from medner.corpus import LabeledSequence
from medner.models.crf import CRF
from medner.models.embeddings import EmbeddingConfig, Vocab, WordRepresentation, load_pretrained_embeddings
from medner.models.heads import HeadConfig, TokenHead, classify_tokens, dual_encoder_forward
from medner.models.recurrent import BiLstmConfig, StackedBiLSTM
from medner.models.transformer import EncoderConfig, TransformerEncoder
from medner.numerics import nn
from medner.numerics.random import derive_rng
from medner.numerics.tensor import Tensor, dropout, getitem, log_softmax, tsum
from medner.tokenization import PAD_LABEL, SubwordVocab, align_words, build_vocab, normalize_numbers, split_counts

FAMILIES = ("bilstm_crf", "encoder_linear", "encoder_bilstm", "dual_encoder_linear", "dual_encoder_bilstm")
PREDICT_BATCH = 32


@dataclass
class ModelConfig:
    """Architecture sizes for every family; defaults are desk-scale, far smaller than full-size models."""

    word_dim: int = 300
    char_dim: int = 100
    char_inner_dim: int = 25
    lstm_layers: int = 2
    lstm_hidden: int = 1536
    pretrained_embeddings: str | None = None
    encoder_layers: int = 4
    encoder_hidden: int = 64
    encoder_heads: int = 4
    encoder_intermediate: int = 256
    max_positions: int = 128
    head_layers_used: int | None = None
    vocab_min_count: int = 2
    vocab_file: str | None = None
    lowercase: bool = False
    # second encoder of the dual model
    encoder_b_layers: int | None = None
    encoder_b_hidden: int | None = None
    encoder_b_heads: int | None = None
    vocab_file_b: str | None = None
    lowercase_b: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model settings: {sorted(unknown)}")
        return cls(**d)


def _pad(rows: Sequence[Sequence[int]], fill: int = 0) -> tuple[np.ndarray, np.ndarray]:
    width = max((len(r) for r in rows), default=0)
    out = np.full((len(rows), width), fill, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
        mask[i, :len(r)] = True
    return out, mask


def _batches(items, size=PREDICT_BATCH):
    for i in range(0, len(items), size):
        yield items[i:i + size]


class Tagger(nn.Module):
    family: str = ""
    tags: list[str]

    def tag_index(self, tag_lists) -> list[list[int]]:
        index = {t: i for i, t in enumerate(self.tags)}
        try:
            return [[index[t] for t in tags] for tags in tag_lists]
        except KeyError as exc:
            raise ValueError(f"tag {exc.args[0]!r} is not in the model's tag set") from None


# ---------------------------------------------------------------------------

class BiLstmCrfTagger(Tagger):
    family = "bilstm_crf"

    def __init__(self, word_vocab: Vocab, char_vocab: Vocab, tags: Sequence[str], emb: EmbeddingConfig,
                 lstm: BiLstmConfig, rng: np.random.Generator, dropout_prob: float = 0.1, pretrained=None):
        self.tags = list(tags)
        self.emb_config, self.lstm_config = emb, lstm
        self.dropout_prob = dropout_prob
        self.embed = WordRepresentation(word_vocab, char_vocab, emb, rng, pretrained)
        self.encoder = StackedBiLSTM(self.embed.out_dim, lstm, rng, dropout_prob)
        self.emit = nn.Linear(lstm.hidden_total, len(self.tags), rng)
        self.crf = CRF(len(self.tags))

    def emissions(self, token_lists, rng=None) -> tuple[Tensor, np.ndarray]:
        lengths = np.array([len(t) for t in token_lists])
        x = dropout(self.embed(token_lists), self.dropout_prob, rng, self.training)
        h = self.encoder(x, lengths, rng)
        return self.emit(dropout(h, self.dropout_prob, rng, self.training)), lengths

    def loss(self, seqs: Sequence[LabeledSequence], rng=None) -> Tensor:
        emissions, _ = self.emissions([s.tokens for s in seqs], rng)
        tags, mask = _pad(self.tag_index([s.tags for s in seqs]))
        return self.crf.nll(emissions, tags, mask)

    def predict(self, token_lists) -> list[list[str]]:
        was = self.training
        self.eval()
        out = []
        for chunk in _batches(list(token_lists)):
            nonempty = [t for t in chunk if t]
            paths = []
            if nonempty:
                emissions, lengths = self.emissions(nonempty)
                paths = self.crf.decode(emissions.data, lengths)
            decoded = iter(paths)
            for tokens in chunk:
                out.append([self.tags[i] for i in next(decoded)] if tokens else [])
        self.train(was)
        return out

    def meta(self) -> dict:
        return {"family": self.family, "tags": self.tags, "word_vocab": self.embed.word_vocab.items,
                "char_vocab": self.embed.char_vocab.items, "emb": asdict(self.emb_config),
                "lstm": asdict(self.lstm_config), "dropout_prob": self.dropout_prob}

    @classmethod
    def from_meta(cls, meta: dict) -> "BiLstmCrfTagger":
        return cls(Vocab(meta["word_vocab"]), Vocab(meta["char_vocab"]), meta["tags"],
                   EmbeddingConfig(**meta["emb"]), BiLstmConfig(**meta["lstm"]),
                   np.random.default_rng(0), meta["dropout_prob"])


# ---------------------------------------------------------------------------

@dataclass
class _Chunk:
    seq: int
    words: tuple[int, int]
    ids: list[int]
    first: list[int]
    labels: list[str] | None = None


def _piece_chunks(token_lists, vocabs: Sequence[SubwordVocab], limit: int, tag_lists=None) -> list[list[_Chunk]]:
    """Split each sentence into word ranges that fit every encoder, then encode each range per vocabulary.

    Returns one list of chunks per vocabulary, aligned index by index.
    """
    per_vocab: list[list[_Chunk]] = [[] for _ in vocabs]
    for si, words in enumerate(token_lists):
        aligns = [align_words(words, v) for v in vocabs]
        counts = [0] * len(words)
        for al in aligns:
            per_word = collections.Counter(al.word_index)
            counts = [max(n, per_word[w]) for w, n in enumerate(counts)]
        for lo, hi in split_counts(counts, limit):
            for vi, (vocab, al) in enumerate(zip(vocabs, aligns)):
                ids = [vocab.id(vocab.cls_token)]
                first, labels = [], [PAD_LABEL]
                for p, w, is_first in zip(al.pieces, al.word_index, al.is_first_piece):
                    if lo <= w < hi:
                        if is_first:
                            first.append(len(ids))
                        ids.append(vocab.id(p))
                        if tag_lists is not None:
                            labels.append(tag_lists[si][w] if is_first else PAD_LABEL)
                ids.append(vocab.id(vocab.sep_token))
                labels.append(PAD_LABEL)
                per_vocab[vi].append(_Chunk(si, (lo, hi), ids, first, labels if tag_lists is not None else None))
    return per_vocab


def _stitch(chunks: Sequence[_Chunk], chunk_tags: Sequence[list[str]], n: int) -> list[list[str]]:
    out = [[] for _ in range(n)]
    for ch, tags in zip(chunks, chunk_tags):
        out[ch.seq].extend(tags)
    return out


class EncoderTagger(Tagger):
    """Transformer encoder with a token head; labels live on first pieces, other pieces carry ``X``."""

    def __init__(self, vocab: SubwordVocab, tags: Sequence[str], enc: EncoderConfig, head: HeadConfig,
                 rng: np.random.Generator):
        if head.layers_used > enc.num_layers:
            raise ValueError(f"{head.kind} head uses {head.layers_used} layers but the encoder has {enc.num_layers}")
        word_tags = [t for t in tags if t != PAD_LABEL]
        self.tags = word_tags + [PAD_LABEL]
        self.vocab, self.enc_config, self.head_config = vocab, enc, head
        self.family = "encoder_linear" if head.kind == "linear_softmax" else "encoder_bilstm"
        self.encoder = TransformerEncoder(enc, rng)
        self.head = TokenHead(head, enc.hidden_size, len(self.tags), rng, enc.dropout_prob)

    @property
    def pad_index(self) -> int:
        return len(self.tags) - 1

    def _logits(self, chunks: Sequence[_Chunk], rng=None) -> tuple[Tensor, np.ndarray]:
        ids, mask = _pad([c.ids for c in chunks], self.vocab.pad_id)
        layers = self.encoder(ids, mask, rng)
        return classify_tokens(layers, self.head, mask.sum(axis=1), rng), mask

    def loss(self, seqs: Sequence[LabeledSequence], rng=None) -> Tensor:
        (chunks,) = _piece_chunks([s.tokens for s in seqs], [self.vocab], self.enc_config.max_positions - 2,
                                  [s.tags for s in seqs])
        logits, mask = self._logits(chunks, rng)
        gold, _ = _pad(self.tag_index([c.labels for c in chunks]), self.pad_index)
        counted = mask & (gold != self.pad_index)
        logp = log_softmax(logits, axis=-1)
        rows = np.arange(gold.shape[0])[:, None]
        picked = getitem(logp, (rows, np.arange(gold.shape[1])[None, :], gold))
        return -tsum(picked * counted.astype(picked.dtype))

    def predict(self, token_lists) -> list[list[str]]:
        was = self.training
        self.eval()
        token_lists = list(token_lists)
        (chunks,) = _piece_chunks(token_lists, [self.vocab], self.enc_config.max_positions - 2)
        chunk_tags = []
        for group in _batches(chunks):
            logits, _ = self._logits(group)
            scores = logits.data[..., :self.pad_index]
            for b, ch in enumerate(group):
                chunk_tags.append([self.tags[i] for i in np.argmax(scores[b, ch.first], axis=-1)])
        self.train(was)
        return _stitch(chunks, chunk_tags, len(token_lists))

    def meta(self) -> dict:
        return {"family": self.family, "tags": self.tags, "vocab": self.vocab.pieces,
                "lowercase": self.vocab.lowercase, "enc": asdict(self.enc_config), "head": asdict(self.head_config)}

    @classmethod
    def from_meta(cls, meta: dict) -> "EncoderTagger":
        return cls(SubwordVocab(meta["vocab"], lowercase=meta["lowercase"]), meta["tags"],
                   EncoderConfig(**meta["enc"]), HeadConfig(**meta["head"]), np.random.default_rng(0))


class DualEncoderTagger(Tagger):
    """Two encoders, each with its own tokenization; word-level concatenation of final states."""

    def __init__(self, vocab_a: SubwordVocab, vocab_b: SubwordVocab, tags: Sequence[str],
                 enc_a: EncoderConfig, enc_b: EncoderConfig, head: HeadConfig, rng: np.random.Generator):
        self.tags = [t for t in tags if t != PAD_LABEL]
        self.vocab_a, self.vocab_b = vocab_a, vocab_b
        self.enc_a_config, self.enc_b_config, self.head_config = enc_a, enc_b, head
        self.family = "dual_encoder_linear" if head.kind == "linear_softmax" else "dual_encoder_bilstm"
        self.encoder_a = TransformerEncoder(enc_a, rng)
        self.encoder_b = TransformerEncoder(enc_b, rng)
        self.head = TokenHead(head, enc_a.hidden_size + enc_b.hidden_size, len(self.tags), rng, enc_a.dropout_prob)

    @property
    def limit(self) -> int:
        return min(self.enc_a_config.max_positions, self.enc_b_config.max_positions) - 2

    def _logits(self, chunks_a, chunks_b, rng=None) -> tuple[Tensor, np.ndarray]:
        ids_a, mask_a = _pad([c.ids for c in chunks_a], self.vocab_a.pad_id)
        ids_b, mask_b = _pad([c.ids for c in chunks_b], self.vocab_b.pad_id)
        pos_a, word_mask = _pad([c.first for c in chunks_a])
        pos_b, _ = _pad([c.first for c in chunks_b])
        joined = dual_encoder_forward(ids_a, ids_b, self.encoder_a, self.encoder_b, mask_a, mask_b,
                                      pos_a, pos_b, rng)
        return self.head([joined], word_mask.sum(axis=1), rng), word_mask

    def loss(self, seqs: Sequence[LabeledSequence], rng=None) -> Tensor:
        token_lists = [s.tokens for s in seqs]
        chunks_a, chunks_b = _piece_chunks(token_lists, [self.vocab_a, self.vocab_b], self.limit)
        logits, mask = self._logits(chunks_a, chunks_b, rng)
        gold, _ = _pad(self.tag_index([seqs[c.seq].tags[c.words[0]:c.words[1]] for c in chunks_a]))
        logp = log_softmax(logits, axis=-1)
        rows = np.arange(gold.shape[0])[:, None]
        picked = getitem(logp, (rows, np.arange(gold.shape[1])[None, :], gold))
        return -tsum(picked * mask.astype(picked.dtype))

    def predict(self, token_lists) -> list[list[str]]:
        was = self.training
        self.eval()
        token_lists = list(token_lists)
        chunks_a, chunks_b = _piece_chunks(token_lists, [self.vocab_a, self.vocab_b], self.limit)
        chunk_tags = []
        for lo in range(0, len(chunks_a), PREDICT_BATCH):
            ga, gb = chunks_a[lo:lo + PREDICT_BATCH], chunks_b[lo:lo + PREDICT_BATCH]
            logits, _ = self._logits(ga, gb)
            for b, ch in enumerate(ga):
                n = ch.words[1] - ch.words[0]
                chunk_tags.append([self.tags[i] for i in np.argmax(logits.data[b, :n], axis=-1)])
        self.train(was)
        return _stitch(chunks_a, chunk_tags, len(token_lists))

    def meta(self) -> dict:
        return {"family": self.family, "tags": self.tags,
                "vocab_a": self.vocab_a.pieces, "lowercase_a": self.vocab_a.lowercase,
                "vocab_b": self.vocab_b.pieces, "lowercase_b": self.vocab_b.lowercase,
                "enc_a": asdict(self.enc_a_config), "enc_b": asdict(self.enc_b_config),
                "head": asdict(self.head_config)}

    @classmethod
    def from_meta(cls, meta: dict) -> "DualEncoderTagger":
        return cls(SubwordVocab(meta["vocab_a"], lowercase=meta["lowercase_a"]),
                   SubwordVocab(meta["vocab_b"], lowercase=meta["lowercase_b"]), meta["tags"],
                   EncoderConfig(**meta["enc_a"]), EncoderConfig(**meta["enc_b"]), HeadConfig(**meta["head"]),
                   np.random.default_rng(0))


# ---------------------------------------------------------------------------

def _subword_vocab(words, vocab_file, min_count, lowercase) -> SubwordVocab:
    if vocab_file:
        return SubwordVocab.load(vocab_file, lowercase=lowercase)
    return build_vocab(words, min_count=min_count, lowercase=lowercase)


def build_tagger(family: str, train: Sequence[LabeledSequence], tags: Sequence[str], config: ModelConfig,
                 seed: int, dropout_prob: float = 0.1) -> Tagger:
    """Construct a freshly initialised tagger whose vocabularies come from ``train``."""
    if family not in FAMILIES:
        raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")
    rng = derive_rng(seed, "init")
    words = [w for s in train for w in s.tokens]
    if family == "bilstm_crf":
        normalized = normalize_numbers(words)
        word_vocab = Vocab.build(sorted(set(normalized)))
        char_vocab = Vocab.build(sorted({ch for w in normalized for ch in w}))
        pretrained = load_pretrained_embeddings(config.pretrained_embeddings) if config.pretrained_embeddings else None
        if pretrained is not None:
            for tok in pretrained[1]:
                word_vocab.add(tok)
        emb = EmbeddingConfig(config.word_dim, config.char_dim, config.char_inner_dim)
        lstm = BiLstmConfig(config.lstm_layers, config.lstm_hidden)
        return BiLstmCrfTagger(word_vocab, char_vocab, tags, emb, lstm, rng, dropout_prob, pretrained)

    vocab_a = _subword_vocab(words, config.vocab_file, config.vocab_min_count, config.lowercase)
    enc_a = EncoderConfig(len(vocab_a), config.encoder_layers, config.encoder_hidden, config.encoder_heads,
                          config.max_positions, config.encoder_intermediate, dropout_prob)
    kind = "linear_softmax" if family.endswith("linear") else "bilstm_over_last4"
    if family.startswith("encoder"):
        return EncoderTagger(vocab_a, tags, enc_a, HeadConfig(kind, config.head_layers_used), rng)
    vocab_b = _subword_vocab(words, config.vocab_file_b, config.vocab_min_count, config.lowercase_b)
    hidden_b = config.encoder_b_hidden or config.encoder_hidden
    enc_b = EncoderConfig(len(vocab_b), config.encoder_b_layers or config.encoder_layers, hidden_b,
                          config.encoder_b_heads or config.encoder_heads, config.max_positions,
                          4 * hidden_b, dropout_prob)
    return DualEncoderTagger(vocab_a, vocab_b, tags, enc_a, enc_b, HeadConfig(kind, 1), rng)


def tagger_from_meta(meta: dict) -> Tagger:
    family = meta["family"]
    if family == "bilstm_crf":
        return BiLstmCrfTagger.from_meta(meta)
    if family.startswith("encoder"):
        return EncoderTagger.from_meta(meta)
    if family.startswith("dual_encoder"):
        return DualEncoderTagger.from_meta(meta)
    raise ValueError(f"unknown model family {family!r}")
