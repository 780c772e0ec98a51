from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from medner.corpus import CorpusFormatError
from medner.evaluation import (
    CATEGORIES, Entity, classify_errors, compare_conll, compare_models, decode_entities, evaluate,
    evaluate_conll, per_type_scores, strict_score,
)

DATA = Path(__file__).parent / "data"


def E(start, end, label="t", doc="d"):
    return Entity(doc, start, end, label)


def test_decode_examples():
    assert decode_entities(["O", "O", "B-prob", "I-prob", "I-prob"]) == [Entity("", 2, 5, "prob")]
    assert decode_entities(["O", "O"]) == []
    assert decode_entities(["I-t", "I-t"]) == [Entity("", 0, 2, "t")]
    assert decode_entities(["B-a", "I-b", "X", "I-b"]) == [Entity("", 0, 1, "a"), Entity("", 1, 2, "b"),
                                                          Entity("", 3, 4, "b")]


def test_decode_rejects_unknown_tags():
    with pytest.raises(ValueError):
        decode_entities(["Q"])
    with pytest.raises(ValueError, match="position 1"):
        decode_entities(["O", "B-a"], allowed={"O"})


def test_strict_partial_match_earns_nothing():
    gold = decode_entities(["O", "O", "B-prob", "I-prob", "I-prob"])
    pred = decode_entities(["O", "O", "B-prob", "I-prob", "O"])
    s = strict_score(gold, pred)
    assert (s.tp, s.precision, s.recall, s.f1) == (0, 0.0, 0.0, 0.0)


def test_strict_perfect_and_duplicates():
    g = [E(0, 1), E(2, 4, "u")]
    s = strict_score(g, g)
    assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)
    s = strict_score([E(0, 1)], [E(0, 1), E(0, 1)])
    assert (s.tp, s.n_pred - s.tp) == (1, 1)
    assert strict_score([], []).f1 == 0.0


def test_per_type_scores():
    scores = per_type_scores([E(0, 1, "a"), E(2, 3, "b")], [E(0, 1, "a"), E(2, 3, "a")])
    assert (scores["a"].tp, scores["a"].n_pred, scores["b"].recall) == (1, 2, 0.0)


def test_error_category_examples():
    # gold "weaker than usual" vs predicted "weaker", both problem
    assert classify_errors([E(3, 6, "problem")], [E(3, 4, "problem")]).right_label_overlapping_span == 1
    # gold "region of the brain" vs predicted "brain" with another label
    out = classify_errors([E(0, 4, "spatial")], [E(3, 4, "anatomy")])
    assert out.wrong_label_overlapping_span == 1
    assert classify_errors([E(0, 1)], []).complete_false_negative == 1


def test_one_of_each_category():
    report = evaluate_conll(DATA / "categories_gold.conll", DATA / "categories_pred.conll")
    assert report.errors.counts() == (1, 1, 1, 1, 1)
    assert report.errors.true_positive == 0


def test_greedy_matching_prefers_exact_span_then_overlap():
    gold = [E(0, 3, "a")]
    pred = [E(0, 3, "b"), E(0, 2, "a")]
    out = classify_errors(gold, pred)
    assert (out.right_span_wrong_label, out.right_label_overlapping_span, out.complete_false_positive) == (1, 0, 1)


ENTS = st.lists(st.builds(lambda s, n, lab, doc: Entity(doc, s, s + n, lab),
                          st.integers(0, 12), st.integers(1, 4), st.sampled_from("ab"), st.sampled_from("xy")),
                max_size=10)


@given(ENTS, ENTS)
def test_breakdown_accounting_identities(gold, pred):
    out = classify_errors(gold, pred)
    assert out.true_positive + out.right_span_wrong_label + out.right_label_overlapping_span + \
        out.wrong_label_overlapping_span + out.complete_false_positive == len(pred)
    assert out.true_positive + out.partial + out.complete_false_negative == len(gold)
    assert out.true_positive == strict_score(gold, pred).tp


@given(ENTS, ENTS, st.randoms(use_true_random=False))
def test_breakdown_ignores_prediction_order(gold, pred, rnd):
    shuffled = list(pred)
    rnd.shuffle(shuffled)
    assert classify_errors(gold, pred).counts() == classify_errors(gold, shuffled).counts()


@given(ENTS, ENTS)
def test_removing_a_false_positive_never_lowers_precision(gold, pred):
    fps = [p for p in pred if p not in gold]
    if not fps:
        return
    smaller = list(pred)
    smaller.remove(fps[0])
    assert strict_score(gold, smaller).precision >= strict_score(gold, pred).precision


def test_compare_models_examples():
    e1, e2, e3 = E(0, 1), E(2, 3), E(4, 5)
    assert compare_models([e1, e2, e3], [e1, e2], [e2, e3]).counts() == (1, 1, 1, 0)
    same = compare_models([e1], [e1], [e1])
    assert same.a_not_b == [] and same.b_not_a == []
    assert compare_models([e1, e2], [e1, e2], []).a_not_b == [e1, e2]
    with pytest.raises(ValueError):
        compare_models([e1], [e1], [e1], docs=["d"], docs_a=["d"], docs_b=["other"])


def test_report_formats():
    report = evaluate([E(0, 1, "a")], [E(0, 1, "a"), E(3, 4, "b")])
    d = report.as_dict()
    assert d["precision"] == 0.5 and d["recall"] == 1.0
    assert d["f1"] == pytest.approx(2 * 0.5 / 1.5)
    assert set(CATEGORIES) <= set(d["errors"])
    assert "micro" in report.to_table()


def test_conll_evaluation_and_misalignment(tmp_path):
    gold = DATA / "strict_gold.conll"
    assert evaluate_conll(gold, DATA / "strict_pred.conll").micro.tp == 0
    assert evaluate_conll(gold, gold).f1 == 1.0
    bad = tmp_path / "bad.conll"
    bad.write_text("patient\tO\n\ndenies\tO\n")
    with pytest.raises(CorpusFormatError, match="bad.conll:2"):
        evaluate_conll(gold, bad)
    assert compare_conll(gold, gold, DATA / "strict_pred.conll").counts() == (1, 0, 0, 0)
