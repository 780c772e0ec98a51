"""Corpus ingestion: PubTator and i2b2 readers, label resolution, IOB conversion, statistics."""
from __future__ import annotations

import collections
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from medner.tokenization import Token, TokenizedText, sentence_spans, whitespace_tokenize, word_tokenize

log = logging.getLogger(__name__)

UNKNOWN_TYPE = "UnknownType"
PARTITIONS = ("train", "dev", "test", "unassigned")
I2B2_TYPES = ("problem", "test", "treatment")
ST21PV_TYPES = (
    "T005", "T007", "T017", "T022", "T031", "T033", "T037", "T038", "T058", "T062", "T074",
    "T082", "T091", "T092", "T097", "T098", "T103", "T168", "T170", "T201", "T204",
)


class CorpusFormatError(ValueError):
    pass


@dataclass
class Mention:
    start_char: int
    end_char: int
    surface: str
    raw_types: list[str]
    resolved_type: str | None = None
    concept: str = ""

    @property
    def span(self) -> tuple[int, int]:
        return self.start_char, self.end_char

    def __len__(self) -> int:
        return self.end_char - self.start_char


@dataclass
class Document:
    doc_id: str
    text: str
    mentions: list[Mention] = field(default_factory=list)
    partition: str = "unassigned"
    # "word" (punctuation-aware) or "whitespace" (pre-tokenized corpora)
    tokenizer: str = "word"

    def tokenize(self) -> TokenizedText:
        return whitespace_tokenize(self.text) if self.tokenizer == "whitespace" else word_tokenize(self.text)


@dataclass(frozen=True)
class LabelScheme:
    inventory: frozenset
    unknown: str = UNKNOWN_TYPE

    def __post_init__(self):
        object.__setattr__(self, "inventory", frozenset(self.inventory) | {self.unknown})

    @property
    def types(self) -> list[str]:
        return sorted(self.inventory)

    @property
    def tags(self) -> list[str]:
        return ["O"] + [f"{p}-{t}" for t in self.types for p in ("B", "I")]

    def __contains__(self, label: str) -> bool:
        return label in self.inventory

    @classmethod
    def from_documents(cls, docs: Iterable[Document]) -> "LabelScheme":
        """Inventory = every first-listed type seen in ``docs``."""
        return cls(frozenset(m.raw_types[0] for d in docs for m in d.mentions if m.raw_types))

    @classmethod
    def named(cls, name: str, docs: Iterable[Document] = ()) -> "LabelScheme":
        if name == "i2b2":
            return cls(frozenset(I2B2_TYPES))
        if name == "medmentions_st21pv":
            return cls(frozenset(ST21PV_TYPES))
        if name in ("medmentions_full", "custom"):
            return cls.from_documents(docs)
        raise ValueError(f"unknown label scheme {name!r}")


@dataclass
class LabeledSequence:
    tokens: list[str]
    tags: list[str]
    doc_id: str = ""
    spans: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class CorpusStats:
    num_types: int = 0
    num_documents: int = 0
    num_tokens: int = 0
    num_entities: int = 0
    per_type: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"num_types": self.num_types, "num_documents": self.num_documents,
                "num_tokens": self.num_tokens, "num_entities": self.num_entities,
                "per_type": dict(sorted(self.per_type.items()))}


# ---------------------------------------------------------------------------
# overlap handling

def _overlaps(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def remove_overlaps(mentions: Sequence[Mention], doc_id: str = "",
                    span=lambda m: m.span) -> list[Mention]:
    """Keep the longer of any two overlapping mentions (earlier start wins ties)."""
    order = sorted(range(len(mentions)),
                   key=lambda i: (-(span(mentions[i])[1] - span(mentions[i])[0]), span(mentions[i])[0], i))
    kept: list[int] = []
    for i in order:
        clash = next((j for j in kept if _overlaps(span(mentions[i]), span(mentions[j]))), None)
        if clash is None:
            kept.append(i)
        else:
            log.warning("%s: dropping mention %s overlapping kept mention %s",
                        doc_id, span(mentions[i]), span(mentions[clash]))
    return [mentions[i] for i in sorted(kept, key=lambda i: (span(mentions[i])[0], i))]


# ---------------------------------------------------------------------------
# PubTator

_TITLE = re.compile(r"^([^|\t]+)\|t\|(.*)$")
_ABSTRACT = re.compile(r"^([^|\t]+)\|a\|(.*)$")


def parse_pubtator(lines: Iterable[str]) -> list[Document]:
    """Parse PubTator blocks (title, abstract, tab-separated mention lines; blank-line separated).

    Title and abstract are joined with a single space; mention offsets refer to
    that joined text.
    """
    docs = []
    block: list[tuple[int, str]] = []
    lineno = 0
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            if block:
                docs.append(_parse_block(block))
                block = []
            continue
        block.append((lineno, line))
    if block:
        docs.append(_parse_block(block))
    return docs


def _parse_block(block: list[tuple[int, str]]) -> Document:
    (ln_t, title_line), rest = block[0], block[1:]
    m = _TITLE.match(title_line)
    if not m:
        raise CorpusFormatError(f"line {ln_t}: expected 'ID|t|title', got {title_line[:60]!r}")
    doc_id, title = m.group(1), m.group(2)
    if not rest:
        raise CorpusFormatError(f"line {ln_t}: document {doc_id} has no abstract line")
    ln_a, abstract_line = rest[0]
    m = _ABSTRACT.match(abstract_line)
    if not m or m.group(1) != doc_id:
        raise CorpusFormatError(f"line {ln_a}: expected '{doc_id}|a|abstract', got {abstract_line[:60]!r}")
    text = title + " " + m.group(2)
    mentions = []
    for ln, line in rest[1:]:
        fields = line.split("\t")
        if len(fields) < 5 or fields[0] != doc_id:
            raise CorpusFormatError(f"line {ln}: malformed mention line for document {doc_id}")
        try:
            start, end = int(fields[1]), int(fields[2])
        except ValueError:
            raise CorpusFormatError(f"line {ln}: non-integer offsets {fields[1]!r}, {fields[2]!r}") from None
        surface = fields[3]
        if not (0 <= start < end <= len(text)) or text[start:end] != surface:
            raise CorpusFormatError(
                f"line {ln}: document {doc_id} offsets [{start}, {end}) do not match surface {surface!r}")
        raw_types = [t.strip() for t in fields[4].split(",") if t.strip()]
        if not raw_types:
            raise CorpusFormatError(f"line {ln}: mention without a semantic type")
        concept = fields[5] if len(fields) > 5 else ""
        mentions.append(Mention(start, end, surface, raw_types, concept=concept))
    return Document(doc_id, text, remove_overlaps(mentions, doc_id))


def read_pubtator(path) -> list[Document]:
    with open(path, encoding="utf-8") as f:
        return parse_pubtator(f)


def assign_partitions(docs: Sequence[Document], id_lists: dict[str, Iterable[str]]) -> list[Document]:
    """Return copies of ``docs`` with ``partition`` set from per-partition id lists."""
    lookup = {}
    for part, ids in id_lists.items():
        if part not in PARTITIONS:
            raise ValueError(f"unknown partition {part!r}")
        for doc_id in ids:
            lookup[doc_id.strip()] = part
    return [replace(d, partition=lookup.get(d.doc_id, "unassigned")) for d in docs]


def medmentions_splits(docs: Sequence[Document]) -> dict[str, list[Document]]:
    """Train = official train + dev; dev and test kept as released."""
    by = collections.defaultdict(list)
    for d in docs:
        by[d.partition].append(d)
    return {"train": by["train"] + by["dev"], "dev": by["dev"], "test": by["test"]}


# ---------------------------------------------------------------------------
# i2b2

_CONCEPT = re.compile(r'^c="(.*)" (\d+):(\d+) (\d+):(\d+)\|\|t="([^"]*)"\s*$')


def parse_i2b2(note_text: str, concept_lines: Iterable[str], doc_id: str = "", token_base: int = 0) -> Document:
    """Read an i2b2 note and its ``.con`` concept lines.

    Coordinates are ``line:token``; lines are 1-based and tokens are
    ``token_base``-based (the public release numbers tokens from 0) over the
    whitespace-split line.
    """
    lines = note_text.split("\n")
    line_starts = []
    pos = 0
    for line in lines:
        line_starts.append(pos)
        pos += len(line) + 1
    line_tokens = [[(m.start() + line_starts[i], m.end() + line_starts[i]) for m in re.finditer(r"\S+", line)]
                   for i, line in enumerate(lines)]
    mentions = []
    for ln, raw in enumerate(concept_lines, 1):
        raw = raw.rstrip("\r\n")
        if not raw.strip():
            continue
        m = _CONCEPT.match(raw)
        if not m:
            raise CorpusFormatError(f"{doc_id} concept line {ln}: malformed: {raw[:80]!r}")
        surface, l1, t1, l2, t2, ctype = m.groups()
        if ctype not in I2B2_TYPES:
            raise CorpusFormatError(f"{doc_id} concept line {ln}: unknown concept type {ctype!r}")
        first = _i2b2_token(line_tokens, int(l1), int(t1) - token_base, doc_id, ln)
        last = _i2b2_token(line_tokens, int(l2), int(t2) - token_base, doc_id, ln)
        start, end = first[0], last[1]
        if end <= start:
            raise CorpusFormatError(f"{doc_id} concept line {ln}: end precedes start")
        text_span = note_text[start:end]
        if " ".join(text_span.split()).lower() != " ".join(surface.split()).lower():
            log.warning("%s concept line %d: surface %r differs from text %r", doc_id, ln, surface, text_span)
        mentions.append(Mention(start, end, text_span, [ctype]))
    return Document(doc_id, note_text, remove_overlaps(mentions, doc_id), tokenizer="whitespace")


def _i2b2_token(line_tokens, line_no: int, tok_no: int, doc_id: str, ln: int) -> tuple[int, int]:
    if not 1 <= line_no <= len(line_tokens):
        raise CorpusFormatError(f"{doc_id} concept line {ln}: line {line_no} out of range")
    toks = line_tokens[line_no - 1]
    if not 0 <= tok_no < len(toks):
        raise CorpusFormatError(f"{doc_id} concept line {ln}: token {tok_no} out of range on line {line_no}")
    return toks[tok_no]


def read_i2b2_dir(directory, token_base: int = 0) -> list[Document]:
    """Pair ``*.txt`` notes with ``*.con`` files found anywhere under ``directory`` by stem."""
    directory = Path(directory)
    cons = {p.stem: p for p in directory.rglob("*.con")}
    docs = []
    for txt in sorted(directory.rglob("*.txt")):
        con = cons.get(txt.stem)
        if con is None:
            continue
        note = txt.read_text(encoding="utf-8")
        docs.append(parse_i2b2(note, con.read_text(encoding="utf-8").splitlines(), txt.stem, token_base))
    return docs


# ---------------------------------------------------------------------------
# labels, IOB, statistics

def resolve_labels(doc: Document, scheme: LabelScheme) -> Document:
    """Keep the first listed type; types outside the scheme become ``UnknownType``."""
    mentions = []
    for m in doc.mentions:
        if not m.raw_types:
            raise ValueError(f"{doc.doc_id}: mention {m.span} has no types")
        first = m.raw_types[0]
        mentions.append(replace(m, resolved_type=first if first in scheme else scheme.unknown))
    return replace(doc, mentions=mentions)


def _snap(mention: Mention, tokens: Sequence[Token], doc_id: str) -> tuple[int, int] | None:
    inside = [i for i, t in enumerate(tokens) if t.start < mention.end_char and mention.start_char < t.end]
    if not inside:
        log.warning("%s: mention %s covers no token; dropped", doc_id, mention.span)
        return None
    lo, hi = inside[0], inside[-1] + 1
    if tokens[lo].start != mention.start_char or tokens[hi - 1].end != mention.end_char:
        log.warning("%s: mention %s snapped outward to token boundaries [%d, %d)",
                    doc_id, mention.span, tokens[lo].start, tokens[hi - 1].end)
    return lo, hi


def to_iob(doc: Document, tokens: Sequence[Token] | TokenizedText | None = None) -> LabeledSequence:
    """Token-level IOB tags for a resolved document (tokens default to ``doc.tokenize()``)."""
    if tokens is None:
        tokens = doc.tokenize()
    if isinstance(tokens, TokenizedText):
        tokens = tokens.tokens
    ordered = sorted(doc.mentions, key=lambda m: m.span)
    for a, b in zip(ordered, ordered[1:]):
        if _overlaps(a.span, b.span):
            raise ValueError(f"{doc.doc_id}: overlapping mentions {a.span} and {b.span}")
    tags = ["O"] * len(tokens)
    snapped = []
    for m in ordered:
        if m.resolved_type is None:
            raise ValueError(f"{doc.doc_id}: mention {m.span} has not been resolved")
        rng = _snap(m, tokens, doc.doc_id)
        if rng is not None:
            snapped.append((rng, m.resolved_type))
    # snapping can make two mentions share a token; keep the longer one
    kept = remove_overlaps(snapped, doc.doc_id, span=lambda s: s[0])
    for (lo, hi), label in kept:
        tags[lo] = f"B-{label}"
        for i in range(lo + 1, hi):
            tags[i] = f"I-{label}"
    return LabeledSequence([t.text for t in tokens], tags, doc.doc_id, [(t.start, t.end) for t in tokens])


def to_sentences(doc: Document, tokens: TokenizedText | None = None) -> list[LabeledSequence]:
    """IOB-tag ``doc`` and cut it into sentences; entities never straddle a cut."""
    tokens = tokens if tokens is not None else doc.tokenize()
    seq = to_iob(doc, tokens)
    spans = sentence_spans(tokens.tokens, doc.text)
    # move a cut that would split an entity to the entity's end
    merged: list[list[int]] = []
    for lo, hi in spans:
        if merged and lo < len(seq.tags) and seq.tags[lo].startswith("I-"):
            merged[-1][1] = hi
        else:
            merged.append([lo, hi])
    return [LabeledSequence(seq.tokens[lo:hi], seq.tags[lo:hi], doc.doc_id, seq.spans[lo:hi])
            for lo, hi in merged]


def corpus_stats(corpus: Sequence[Document], scheme: LabelScheme | None = None,
                 tokenize: Callable[[Document], TokenizedText] | None = None) -> CorpusStats:
    """Counts over resolved labels; ``num_types`` counts the distinct types actually present."""
    per_type: collections.Counter = collections.Counter()
    num_tokens = 0
    for doc in corpus:
        if scheme is not None:
            doc = resolve_labels(doc, scheme)
        toks = tokenize(doc) if tokenize else doc.tokenize()
        num_tokens += len(toks)
        for m in doc.mentions:
            per_type[m.resolved_type if m.resolved_type is not None else m.raw_types[0]] += 1
    return CorpusStats(num_types=len(per_type), num_documents=len(corpus), num_tokens=num_tokens,
                       num_entities=sum(per_type.values()), per_type=dict(per_type))


# ---------------------------------------------------------------------------
# CoNLL

def write_conll(sequences: Iterable[LabeledSequence], path_or_file) -> None:
    """``token<TAB>tag`` per line, one blank line after every sequence."""
    text = "".join("".join(f"{tok}\t{tag}\n" for tok, tag in zip(s.tokens, s.tags)) + "\n"
                   for s in sequences)
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        Path(path_or_file).write_text(text, encoding="utf-8", newline="\n")


def read_conll(path) -> list[LabeledSequence]:
    return parse_conll(Path(path).read_text(encoding="utf-8").split("\n"), str(path))[0]


def parse_conll(lines: Sequence[str], source: str = "<conll>") -> tuple[list[LabeledSequence], list[int]]:
    """Returns sequences and the 1-based line number at which each begins."""
    seqs, starts = [], []
    toks: list[str] = []
    tags: list[str] = []
    begin = 0
    for ln, line in enumerate(lines, 1):
        line = line.rstrip("\r")
        if not line.strip():
            if toks:
                seqs.append(LabeledSequence(toks, tags, f"s{len(seqs)}"))
                starts.append(begin)
                toks, tags = [], []
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise CorpusFormatError(f"{source}:{ln}: expected 'token<TAB>tag', got {line[:60]!r}")
        if not toks:
            begin = ln
        toks.append(parts[0])
        tags.append(parts[-1])
    if toks:
        seqs.append(LabeledSequence(toks, tags, f"s{len(seqs)}"))
        starts.append(begin)
    return seqs, starts
