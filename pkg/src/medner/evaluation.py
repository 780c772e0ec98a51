"""Strict entity-level scoring, partial-error taxonomy and model disagreement."""
from __future__ import annotations

import collections
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from medner.corpus import CorpusFormatError, LabeledSequence, parse_conll
from medner.tokenization import PAD_LABEL


class Entity(NamedTuple):
    doc_id: str
    start: int
    end: int
    label: str

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end

    def overlap(self, other: "Entity") -> int:
        if self.doc_id != other.doc_id:
            return 0
        return max(0, min(self.end, other.end) - max(self.start, other.start))


def decode_entities(tags: Sequence[str], doc_id: str = "", allowed: Iterable[str] | None = None) -> list[Entity]:
    """Maximal ``B-t I-t*`` runs.

    An ``I-t`` that does not continue an open ``t`` entity opens a new one.
    If ``allowed`` is given, tags outside it raise ``ValueError``.
    """
    allowed = set(allowed) if allowed is not None else None
    entities = []
    label, start = None, 0
    for i, tag in enumerate(tags):
        if allowed is not None and tag not in allowed:
            raise ValueError(f"unknown tag {tag!r} at position {i}")
        if tag == "O" or tag == PAD_LABEL:
            prefix, t = "O", None
        elif len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
            prefix, t = tag[0], tag[2:]
        else:
            raise ValueError(f"malformed tag {tag!r} at position {i}")
        if prefix == "I" and label == t:
            continue
        if label is not None:
            entities.append(Entity(doc_id, start, i, label))
            label = None
        if prefix in "BI" and t is not None:
            label, start = t, i
    if label is not None:
        entities.append(Entity(doc_id, start, len(tags), label))
    return entities


@dataclass
class Score:
    tp: int
    n_pred: int
    n_gold: int

    @property
    def precision(self) -> float:
        return self.tp / self.n_pred if self.n_pred else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.n_gold if self.n_gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def as_dict(self) -> dict:
        return {"tp": self.tp, "n_pred": self.n_pred, "n_gold": self.n_gold,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def _exact_matches(gold: Sequence[Entity], pred: Sequence[Entity]) -> collections.Counter:
    return collections.Counter(gold) & collections.Counter(pred)


def strict_score(gold: Sequence[Entity], pred: Sequence[Entity]) -> Score:
    """Micro-averaged strict P/R/F1; each gold entity can be matched at most once."""
    return Score(sum(_exact_matches(gold, pred).values()), len(pred), len(gold))


def per_type_scores(gold: Sequence[Entity], pred: Sequence[Entity]) -> dict[str, Score]:
    labels = sorted({e.label for e in gold} | {e.label for e in pred})
    return {lab: strict_score([e for e in gold if e.label == lab], [e for e in pred if e.label == lab])
            for lab in labels}


CATEGORIES = ("right_span_wrong_label", "right_label_overlapping_span", "wrong_label_overlapping_span",
              "complete_false_positive", "complete_false_negative")


@dataclass
class ErrorBreakdown:
    true_positive: int = 0
    right_span_wrong_label: int = 0
    right_label_overlapping_span: int = 0
    wrong_label_overlapping_span: int = 0
    complete_false_positive: int = 0
    complete_false_negative: int = 0
    pairs: list = field(default_factory=list, repr=False)

    def counts(self) -> tuple[int, int, int, int, int]:
        return tuple(getattr(self, c) for c in CATEGORIES)

    @property
    def partial(self) -> int:
        return self.right_span_wrong_label + self.right_label_overlapping_span + self.wrong_label_overlapping_span

    @property
    def errors(self) -> int:
        return self.partial + self.complete_false_positive + self.complete_false_negative

    def as_dict(self) -> dict:
        d = {"true_positive": self.true_positive}
        d.update({c: getattr(self, c) for c in CATEGORIES})
        return d


def _priority(p: Entity, g: Entity) -> int | None:
    if p.doc_id != g.doc_id:
        return None
    if p.span == g.span:
        return 0 if p.label != g.label else None
    if p.overlap(g) == 0:
        return None
    return 1 if p.label == g.label else 2


_CATEGORY_BY_PRIORITY = ("right_span_wrong_label", "right_label_overlapping_span", "wrong_label_overlapping_span")


def classify_errors(gold: Sequence[Entity], pred: Sequence[Entity]) -> ErrorBreakdown:
    """Five-way breakdown of strict errors.

    Exact matches are removed first.  Remaining predictions and gold entities
    are then paired one-to-one, greedily by category priority (same span and
    different label, then same label and overlapping span, then different
    label and overlapping span); within a category larger token overlap wins,
    then the leftmost gold entity.  Leftovers are complete false positives
    and complete false negatives.
    """
    gold_left = collections.Counter(gold)
    pred_left = collections.Counter(pred)
    tp = _exact_matches(gold, pred)
    gold_left -= tp
    pred_left -= tp
    out = ErrorBreakdown(true_positive=sum(tp.values()))
    g_pool = sorted(gold_left.elements())
    p_pool = sorted(pred_left.elements())
    g_used = [False] * len(g_pool)
    p_used = [False] * len(p_pool)
    for level in range(3):
        candidates = []
        for pi, p in enumerate(p_pool):
            if p_used[pi]:
                continue
            for gi, g in enumerate(g_pool):
                if not g_used[gi] and _priority(p, g) == level:
                    candidates.append((-p.overlap(g), g.doc_id, g.start, g.end, g.label, p, gi, pi))
        candidates.sort(key=lambda c: c[:6])
        for *_, p, gi, pi in candidates:
            if g_used[gi] or p_used[pi]:
                continue
            g_used[gi] = p_used[pi] = True
            name = _CATEGORY_BY_PRIORITY[level]
            setattr(out, name, getattr(out, name) + 1)
            out.pairs.append((name, g_pool[gi], p))
    out.complete_false_positive = p_used.count(False)
    out.complete_false_negative = g_used.count(False)
    out.pairs.extend(("complete_false_positive", None, p) for p, used in zip(p_pool, p_used) if not used)
    out.pairs.extend(("complete_false_negative", g, None) for g, used in zip(g_pool, g_used) if not used)
    return out


@dataclass
class Disagreement:
    a_not_b: list[Entity]
    b_not_a: list[Entity]
    both: list[Entity]
    neither: list[Entity]

    def counts(self) -> tuple[int, int, int, int]:
        return len(self.a_not_b), len(self.b_not_a), len(self.both), len(self.neither)

    def as_dict(self) -> dict:
        return {k: [list(e) for e in v] for k, v in asdict(self).items()} | {
            "counts": dict(zip(("a_not_b", "b_not_a", "both", "neither"), self.counts()))}


def compare_models(gold: Sequence[Entity], pred_a: Sequence[Entity], pred_b: Sequence[Entity],
                   docs: Iterable[str] | None = None, docs_a: Iterable[str] | None = None,
                   docs_b: Iterable[str] | None = None) -> Disagreement:
    """Split gold entities by which system recovers them exactly.

    When document-id sets are supplied for the three inputs they must agree.
    """
    if docs is not None and (set(docs) != set(docs_a or ()) or set(docs) != set(docs_b or ())):
        raise ValueError("compare_models: prediction sets cover different documents than gold")
    sa, sb = set(pred_a), set(pred_b)
    out = Disagreement([], [], [], [])
    for g in sorted(gold):
        ina, inb = g in sa, g in sb
        (out.both if ina and inb else out.a_not_b if ina else out.b_not_a if inb else out.neither).append(g)
    return out


# ---------------------------------------------------------------------------
# reports over CoNLL files

@dataclass
class EvalReport:
    micro: Score
    per_type: dict[str, Score]
    errors: ErrorBreakdown

    @property
    def precision(self) -> float:
        return self.micro.precision

    @property
    def recall(self) -> float:
        return self.micro.recall

    @property
    def f1(self) -> float:
        return self.micro.f1

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "micro": self.micro.as_dict(),
                "per_type": {k: v.as_dict() for k, v in self.per_type.items()},
                "errors": self.errors.as_dict(),
                "confusion": [[cat, list(g) if g else None, list(p) if p else None]
                              for cat, g, p in self.errors.pairs]}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [("type", "P", "R", "F1", "TP", "pred", "gold")]
        for label, s in self.per_type.items():
            rows.append((label, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}",
                         str(s.tp), str(s.n_pred), str(s.n_gold)))
        m = self.micro
        rows.append(("micro", f"{m.precision:.4f}", f"{m.recall:.4f}", f"{m.f1:.4f}",
                     str(m.tp), str(m.n_pred), str(m.n_gold)))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                 for r in rows]
        lines.append("")
        lines.append("errors:")
        for k, v in self.errors.as_dict().items():
            lines.append(f"  {k:<30} {v}")
        return "\n".join(lines) + "\n"


def evaluate(gold: Sequence[Entity], pred: Sequence[Entity]) -> EvalReport:
    return EvalReport(strict_score(gold, pred), per_type_scores(gold, pred), classify_errors(gold, pred))


def entities_from_sequences(seqs: Sequence[LabeledSequence]) -> list[Entity]:
    out = []
    for i, s in enumerate(seqs):
        out.extend(decode_entities(s.tags, s.doc_id or f"s{i}"))
    return out


def load_aligned_conll(*paths) -> list[list[LabeledSequence]]:
    """Read CoNLL files that must agree line-for-line on sentence boundaries."""
    texts = [Path(p).read_text(encoding="utf-8").split("\n") for p in paths]
    ref = texts[0]
    for path, other in zip(paths[1:], texts[1:]):
        n = max(len(ref), len(other))
        for ln in range(n):
            a = ref[ln] if ln < len(ref) else ""
            b = other[ln] if ln < len(other) else ""
            if bool(a.strip()) != bool(b.strip()):
                raise CorpusFormatError(f"{path}:{ln + 1}: sentence boundary does not match {paths[0]}")
    return [parse_conll(t, str(p))[0] for t, p in zip(texts, paths)]


def evaluate_conll(gold_path, pred_path) -> EvalReport:
    gold, pred = load_aligned_conll(gold_path, pred_path)
    return evaluate(entities_from_sequences(gold), entities_from_sequences(pred))


def compare_conll(gold_path, pred_a_path, pred_b_path) -> Disagreement:
    gold, a, b = load_aligned_conll(gold_path, pred_a_path, pred_b_path)
    return compare_models(entities_from_sequences(gold), entities_from_sequences(a), entities_from_sequences(b))
