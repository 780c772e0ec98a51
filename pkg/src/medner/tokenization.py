"""Word tokenization, number normalisation, WordPiece and label alignment."""
from __future__ import annotations

import collections
import re
import string
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

PAD_LABEL = "X"
NUM_TOKEN = "NUM"
MAX_PIECES = 512

_NUMBER = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)$")
_SENTENCE_END = frozenset(".!?")


class Token(NamedTuple):
    text: str
    start: int
    end: int


@dataclass
class TokenizedText:
    tokens: list[Token]
    normalized: list[str] = field(default_factory=list)

    @property
    def surfaces(self) -> list[str]:
        return [t.text for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)


def is_punctuation(ch: str) -> bool:
    return ch in string.punctuation or unicodedata.category(ch).startswith("P")


def word_tokenize(text: str) -> TokenizedText:
    """Split on whitespace, then peel leading and trailing punctuation off one character at a time.

    >>> [t.text for t in word_tokenize("pH7.4,").tokens]
    ['pH7.4', ',']
    """
    tokens: list[Token] = []
    for m in re.finditer(r"\S+", text):
        chunk, start = m.group(), m.start()
        lo, hi = 0, len(chunk)
        while lo < hi and is_punctuation(chunk[lo]):
            lo += 1
        if lo == hi:
            # all punctuation: one token per character
            tokens.extend(Token(ch, start + i, start + i + 1) for i, ch in enumerate(chunk))
            continue
        while hi > lo and is_punctuation(chunk[hi - 1]):
            hi -= 1
        tokens.extend(Token(chunk[i], start + i, start + i + 1) for i in range(lo))
        tokens.append(Token(chunk[lo:hi], start + lo, start + hi))
        tokens.extend(Token(chunk[i], start + i, start + i + 1) for i in range(hi, len(chunk)))
    return TokenizedText(tokens, [t.text for t in tokens])


def whitespace_tokenize(text: str) -> TokenizedText:
    """Plain whitespace split; used for corpora that ship pre-tokenized (i2b2)."""
    tokens = [Token(m.group(), m.start(), m.end()) for m in re.finditer(r"\S+", text)]
    return TokenizedText(tokens, [t.text for t in tokens])


def is_number(token: str) -> bool:
    return bool(_NUMBER.match(token))


def normalize_numbers(tokens: Iterable[str]) -> list[str]:
    """Replace purely numeric tokens (optional sign, at most one decimal point) by ``NUM``."""
    return [NUM_TOKEN if is_number(t) else t for t in tokens]


def sentence_spans(tokens: Sequence[Token], text: str) -> list[tuple[int, int]]:
    """Token-index ranges of sentences.

    A sentence ends after a token that is exactly ``.``, ``!`` or ``?``, or
    wherever a line break separates two tokens.
    """
    spans = []
    start = 0
    for i, tok in enumerate(tokens):
        last = i == len(tokens) - 1
        breaks = tok.text in _SENTENCE_END
        if not last and not breaks and "\n" in text[tok.end:tokens[i + 1].start]:
            breaks = True
        if breaks or last:
            spans.append((start, i + 1))
            start = i + 1
    return spans


# ---------------------------------------------------------------------------
# WordPiece

@dataclass
class SubwordVocab:
    pieces: list[str]
    continuation: str = "##"
    unk_token: str = "[UNK]"
    pad_token: str = "[PAD]"
    cls_token: str = "[CLS]"
    sep_token: str = "[SEP]"
    lowercase: bool = False
    max_chars_per_word: int = 100

    def __post_init__(self):
        self.index = {p: i for i, p in enumerate(self.pieces)}
        for tok in (self.unk_token, self.pad_token, self.cls_token, self.sep_token):
            if tok not in self.index:
                raise ValueError(f"vocabulary is missing special token {tok!r}")

    def __len__(self) -> int:
        return len(self.pieces)

    def __contains__(self, piece: str) -> bool:
        return piece in self.index

    def id(self, piece: str) -> int:
        return self.index.get(piece, self.index[self.unk_token])

    @property
    def pad_id(self) -> int:
        return self.index[self.pad_token]

    @classmethod
    def load(cls, path, **kwargs) -> "SubwordVocab":
        """One piece per line; the line index is the piece id."""
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines, **kwargs)

    def save(self, path) -> None:
        Path(path).write_text("".join(p + "\n" for p in self.pieces), encoding="utf-8")


SPECIAL_PIECES = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]


def build_vocab(words: Iterable[str], min_count: int = 1, lowercase: bool = False) -> SubwordVocab:
    """Desk-scale vocabulary: frequent whole words plus every character as initial and ``##`` piece.

    This is not a learned subword vocabulary; it only guarantees every word
    decomposes, with rarer words falling back to character pieces.
    """
    counts = collections.Counter(w.lower() if lowercase else w for w in words)
    chars = sorted({ch for w in counts for ch in w})
    frequent = sorted(w for w, c in counts.items() if c >= min_count and len(w) > 1)
    pieces = list(SPECIAL_PIECES) + chars + ["##" + ch for ch in chars] + frequent
    return SubwordVocab(list(dict.fromkeys(pieces)), lowercase=lowercase)


def wordpiece_tokenize(word: str, vocab: SubwordVocab) -> list[str]:
    """Greedy longest-match-first; unknown words become a single unknown piece."""
    if not word:
        raise ValueError("wordpiece_tokenize: empty word")
    if vocab.lowercase:
        word = word.lower()
    if len(word) > vocab.max_chars_per_word:
        return [vocab.unk_token]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = vocab.continuation + candidate
            if candidate in vocab.index:
                match = candidate
                break
            end -= 1
        if match is None:
            return [vocab.unk_token]
        pieces.append(match)
        start = end
    return pieces


@dataclass
class PieceAlignment:
    pieces: list[str]
    word_index: list[int]
    is_first_piece: list[bool]

    @property
    def num_words(self) -> int:
        return self.word_index[-1] + 1 if self.word_index else 0

    def first_piece_positions(self) -> list[int]:
        return [i for i, first in enumerate(self.is_first_piece) if first]


def align_words(words: Sequence[str], vocab: SubwordVocab) -> PieceAlignment:
    pieces, word_index, first = [], [], []
    for wi, word in enumerate(words):
        for j, piece in enumerate(wordpiece_tokenize(word, vocab)):
            pieces.append(piece)
            word_index.append(wi)
            first.append(j == 0)
    return PieceAlignment(pieces, word_index, first)


def align_labels(word_tags: Sequence[str], alignment: PieceAlignment) -> list[str]:
    """First piece of each word carries the word's tag; continuation pieces get ``X``."""
    if len(word_tags) != alignment.num_words:
        raise ValueError(f"align_labels: {len(word_tags)} tags for {alignment.num_words} words")
    return [word_tags[wi] if first else PAD_LABEL
            for wi, first in zip(alignment.word_index, alignment.is_first_piece)]


def collapse_predictions(piece_tags: Sequence[str], alignment: PieceAlignment) -> list[str]:
    """Inverse of :func:`align_labels`: keep each word's first-piece tag."""
    if len(piece_tags) != len(alignment.pieces):
        raise ValueError(f"collapse_predictions: {len(piece_tags)} tags for {len(alignment.pieces)} pieces")
    return [tag for tag, first in zip(piece_tags, alignment.is_first_piece) if first]


def split_counts(counts: Sequence[int], max_pieces: int) -> list[tuple[int, int]]:
    """Greedy word ranges whose summed piece counts stay within ``max_pieces``."""
    if max_pieces < 1:
        raise ValueError("max_pieces must be positive")
    ranges = []
    start, used = 0, 0
    for w, n in enumerate(counts):
        if n > max_pieces:
            raise ValueError(f"word {w} alone needs {n} pieces, limit is {max_pieces}")
        if used + n > max_pieces:
            ranges.append((start, w))
            start, used = w, 0
        used += n
    if len(counts):
        ranges.append((start, len(counts)))
    return ranges


def split_for_length(alignment: PieceAlignment, max_pieces: int = MAX_PIECES) -> list[tuple[int, int]]:
    """Word ranges whose piece counts each fit in ``max_pieces``; splits only at word boundaries."""
    per_word = collections.Counter(alignment.word_index)
    return split_counts([per_word[w] for w in range(alignment.num_words)], max_pieces)
