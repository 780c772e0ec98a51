"""Acceptance suite: one test per criterion, tolerances pinned below.

Run alone with ``pytest tests/test_acceptance.py -v``; a per-criterion
PASS/FAIL/SKIP table is printed at the end of the session.
"""
import itertools
import os
import time
from pathlib import Path

import numpy as np
import pytest

from medner.corpus import LabeledSequence, LabelScheme, corpus_stats, medmentions_splits, read_i2b2_dir, \
    read_pubtator, assign_partitions, write_conll
from medner.evaluation import classify_errors, decode_entities, evaluate_conll, strict_score, Entity
from medner.models import ModelConfig, build_tagger, crf_log_partition, crf_viterbi
from medner.numerics import (
    Adam, OptimizerConfig, Parameter, Tensor, backward, concat, dropout, embedding_lookup, gelu, getitem,
    gradcheck, layer_norm, log_softmax, log_sum_exp, lr_schedule, masked_fill, matmul, recording, sigmoid,
    softmax, stack, tanh, tsum, where,
)
from medner.tokenization import SubwordVocab, align_labels, align_words, collapse_predictions
from medner.training import TrainConfig, score_tagger, train

DATA = Path(__file__).parent / "data"

# pinned tolerances and budgets
CRF_INSTANCES = 1000
CRF_LOGZ_ABS_TOL = 1e-8
CRF_TIME_BUDGET_S = 60.0
GRAD_REL_TOL = 1e-4
GRAD_ENTRIES_PER_PARAM = 12
RANDOM_PAIRS = 1000
ROUND_TRIPS = 1000
OVERFIT_BILSTM_F1 = 0.95
OVERFIT_BILSTM_EPOCHS = 50
OVERFIT_ENCODER_F1 = 0.90
OVERFIT_TIME_BUDGET_S = 300.0
SCHEDULE_REL_TOL = 1e-12
SCHEDULE_TOTALS = (10, 100, 1000)


# --- 1 --------------------------------------------------------------------------

def _enumerate_paths(e, trans):
    steps, T = e.shape
    best, best_score, scores = None, -np.inf, []
    for path in itertools.product(range(T), repeat=steps):
        s = trans[T, path[0]] + trans[path[-1], T + 1]
        s += sum(e[i, t] for i, t in enumerate(path)) + sum(trans[a, b] for a, b in zip(path, path[1:]))
        scores.append(s)
        if s > best_score:
            best, best_score = list(path), s
    m = max(scores)
    return m + np.log(np.sum(np.exp(np.array(scores) - m))), best


@pytest.mark.criterion(1, "CRF forward/Viterbi equal brute-force enumeration")
def test_criterion_1_crf_oracle_equivalence():
    rng = np.random.default_rng(20240101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(CRF_INSTANCES):
        steps, T = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        e = rng.normal(0, 2, (steps, T))
        trans = rng.normal(0, 2, (T + 2, T + 2))
        log_z, best = _enumerate_paths(e, trans)
        worst = max(worst, abs(crf_log_partition(e, trans).item() - log_z))
        assert crf_viterbi(e, trans) == best
    assert worst < CRF_LOGZ_ABS_TOL
    assert time.perf_counter() - start < CRF_TIME_BUDGET_S


# --- 2 --------------------------------------------------------------------------

KERNELS = {
    "matmul": lambda a, b: tsum(tanh(matmul(a, b.transpose(1, 0)))),
    "add": lambda a, b: tsum((a + b) * b),
    "concat": lambda a, b: tsum(concat([a, b], axis=0) * concat([b, a], axis=0)),
    "stack": lambda a, b: tsum(stack([a, b]) * stack([b, b])),
    "embedding_lookup": lambda a, b: tsum(embedding_lookup(a, np.array([[0, 2, 2]])) * b[:3, :4].reshape(1, 3, 4)),
    "tanh": lambda a, b: tsum(tanh(a) * b),
    "sigmoid": lambda a, b: tsum(sigmoid(a) * b),
    "elementwise_product": lambda a, b: tsum(a * b * a),
    "softmax": lambda a, b: tsum(softmax(a) * b),
    "log_softmax": lambda a, b: tsum(log_softmax(a) * b),
    "log_sum_exp": lambda a, b: tsum(log_sum_exp(a * b, axis=0)),
    "dropout": lambda a, b: tsum(dropout(a, 0.25, np.random.default_rng(3), True) * b),
    "masked_fill": lambda a, b: tsum(masked_fill(a, np.eye(3, 4, dtype=bool), 0.0) * b),
    "where": lambda a, b: tsum(where(np.eye(3, 4, dtype=bool), a, b) * a),
    "getitem": lambda a, b: tsum(getitem(a, (np.array([0, 0, 2]), np.array([1, 1, 3]))) * b[1, :3]),
    "gelu": lambda a, b: tsum(gelu(a) * b),
    "layer_norm": lambda a, b: tsum(layer_norm(a, b[0], b[1]) * b),
}

SEQ3 = [LabeledSequence(["Aspirin", "relieves", "pain"], ["B-x", "O", "B-y"])]
TAGS3 = ["O", "B-x", "B-y"]
FAMILY_CASES = {
    "bilstm_crf": ("bilstm_crf", dict(word_dim=4, char_dim=4, char_inner_dim=3, lstm_layers=2, lstm_hidden=6)),
    "encoder_linear_2layer": ("encoder_linear", dict(encoder_layers=2)),
    "encoder_bilstm_2layer": ("encoder_bilstm", dict(encoder_layers=2, head_layers_used=2)),
    "encoder_bilstm_last4": ("encoder_bilstm", dict(encoder_layers=4)),
    "dual_encoder_linear": ("dual_encoder_linear", dict(encoder_layers=2, encoder_b_layers=1)),
    "dual_encoder_bilstm": ("dual_encoder_bilstm", dict(encoder_layers=2, encoder_b_layers=1)),
}
ENCODER_BASE = dict(encoder_hidden=4, encoder_heads=2, encoder_intermediate=8, max_positions=16, vocab_min_count=1)


@pytest.mark.criterion(2, "finite-difference gradient checks, kernels and all model families")
def test_criterion_2_gradient_checks():
    rng = np.random.default_rng(99)
    failures = {}
    for name, fn in KERNELS.items():
        a, b = Parameter(rng.standard_normal((3, 4))), Parameter(rng.standard_normal((3, 4)))
        errs = gradcheck(lambda: fn(a, b), {"a": a, "b": b})
        if max(errs.values()) >= GRAD_REL_TOL:
            failures[name] = errs
    for case, (family, overrides) in FAMILY_CASES.items():
        tagger = build_tagger(family, SEQ3, TAGS3, ModelConfig(**{**ENCODER_BASE, **overrides}), seed=1)
        tagger.eval()
        params = tagger.parameters()
        errs = gradcheck(lambda: tagger.loss(SEQ3), params, max_entries=GRAD_ENTRIES_PER_PARAM,
                         rng=np.random.default_rng(0))
        bad = {k: v for k, v in errs.items() if v >= GRAD_REL_TOL}
        if bad:
            failures[case] = bad
        if family.startswith("dual"):
            with recording() as tape:
                loss = tagger.loss(SEQ3)
            grads = backward(tape, loss, params.values())
            for side in ("encoder_a.", "encoder_b."):
                assert any(np.abs(grads[p]).max() > 0 for n, p in params.items() if n.startswith(side)), side
    assert not failures, failures


# --- 3 --------------------------------------------------------------------------

@pytest.mark.criterion(3, "scorer: zero-TP worked example, one-of-each fixture, accounting identities")
def test_criterion_3_scorer_ground_truth():
    gold = decode_entities(["O", "O", "B-prob", "I-prob", "I-prob"], "d")
    pred = decode_entities(["O", "O", "B-prob", "I-prob", "O"], "d")
    s = strict_score(gold, pred)
    assert (s.tp, s.precision, s.recall) == (0, 0.0, 0.0)
    report = evaluate_conll(DATA / "categories_gold.conll", DATA / "categories_pred.conll")
    assert report.errors.counts() == (1, 1, 1, 1, 1)
    rng = np.random.default_rng(5)

    def random_entities():
        out = []
        for _ in range(rng.integers(0, 8)):
            start = int(rng.integers(0, 15))
            out.append(Entity(str(rng.integers(0, 2)), start, start + int(rng.integers(1, 4)), "abc"[rng.integers(3)]))
        return out
    for _ in range(RANDOM_PAIRS):
        g, p = random_entities(), random_entities()
        b = classify_errors(g, p)
        assert b.true_positive + b.right_span_wrong_label + b.right_label_overlapping_span \
            + b.wrong_label_overlapping_span + b.complete_false_positive == len(p)
        assert b.true_positive + b.partial + b.complete_false_negative == len(g)


# --- 4 --------------------------------------------------------------------------

@pytest.mark.criterion(4, "collapse(align(tags)) is the identity under random piece splits")
def test_criterion_4_alignment_round_trip():
    rng = np.random.default_rng(11)
    letters = "abcdefgh"
    vocab = SubwordVocab(["[PAD]", "[UNK]", "[CLS]", "[SEP]"] + list(letters) + ["##" + c for c in letters])
    tagset = ["O", "B-t", "I-t", "B-u", "I-u"]
    for _ in range(ROUND_TRIPS):
        n = int(rng.integers(0, 25))
        words = ["".join(rng.choice(list(letters), int(rng.integers(1, 6)))) for _ in range(n)]
        tags = [tagset[i] for i in rng.integers(0, len(tagset), n)]
        al = align_words(words, vocab)
        assert len(al.pieces) == sum(len(w) for w in words)
        assert collapse_predictions(align_labels(tags, al), al) == tags


# --- 5 --------------------------------------------------------------------------

@pytest.mark.criterion(5, "overfit sanity on the bundled toy corpus")
def test_criterion_5_overfit(toy_sentences, toy_scheme):
    assert len(toy_sentences) == 40 and len(toy_scheme.types) - 1 == 6
    start = time.perf_counter()
    bilstm = TrainConfig.for_family("bilstm_crf", seed=0, model=ModelConfig(
        word_dim=16, char_dim=8, char_inner_dim=8, lstm_hidden=32))
    bilstm.optimizer = OptimizerConfig(peak_lr=0.01, batch_size=8, epochs=OVERFIT_BILSTM_EPOCHS, weight_decay=0.0,
                                       schedule="constant", clip_norm=5.0)
    result = train(toy_sentences, bilstm, dev_seqs=toy_sentences, tags=toy_scheme.tags)
    assert result.best_f1 >= OVERFIT_BILSTM_F1
    assert score_tagger(result.tagger, toy_sentences).f1 >= OVERFIT_BILSTM_F1
    assert time.perf_counter() - start < OVERFIT_TIME_BUDGET_S

    encoder = TrainConfig.for_family("encoder_linear", seed=0, model=ModelConfig(
        encoder_layers=2, encoder_hidden=32, encoder_heads=2, encoder_intermediate=64, vocab_min_count=1))
    encoder.optimizer = OptimizerConfig(peak_lr=1e-3, batch_size=8, epochs=30)
    assert encoder.optimizer.schedule == "warmup_linear" and encoder.optimizer.warmup_fraction == 0.1
    result = train(toy_sentences, encoder, tags=toy_scheme.tags)
    assert score_tagger(result.tagger, toy_sentences).f1 >= OVERFIT_ENCODER_F1


# --- 6 --------------------------------------------------------------------------

@pytest.mark.criterion(6, "warmup/linear-decay schedule is exact pointwise")
def test_criterion_6_schedule_exactness():
    peak = 5e-5
    for T in SCHEDULE_TOTALS:
        warm = T // 10
        assert lr_schedule(0, T, peak) == 0.0
        assert lr_schedule(warm, T, peak) == pytest.approx(peak, rel=SCHEDULE_REL_TOL)
        assert lr_schedule(T, T, peak) == 0.0
        for s in range(T + 1):
            expected = peak * s / warm if s <= warm else peak * (T - s) / (T - warm)
            assert lr_schedule(s, T, peak) == pytest.approx(expected, rel=SCHEDULE_REL_TOL, abs=1e-300)
        p = Parameter(np.zeros(1))
        opt = Adam({"w": p}, OptimizerConfig(peak_lr=peak), T)
        seen = [opt.step({"w": np.ones(1)}) for _ in range(T)]
        assert seen == [lr_schedule(k, T, peak) for k in range(1, T + 1)]


# --- 7 --------------------------------------------------------------------------

REFERENCE_STATS = {
    ("i2b2", "train"): dict(num_types=3, num_documents=170, num_tokens=149_743, num_entities=16_520),
    ("i2b2", "test"): dict(num_types=3, num_documents=256, num_tokens=267_837, num_entities=31_161),
    ("medmentions_full", "train"): dict(num_types=126, num_documents=3513, num_tokens=936_247, num_entities=281_719),
    ("medmentions_full", "test"): dict(num_types=123, num_documents=879, num_tokens=234_910, num_entities=70_305),
    ("medmentions_st21pv", "train"): dict(num_types=21, num_documents=3513, num_tokens=936_247,
                                          num_entities=162_908),
    ("medmentions_st21pv", "test"): dict(num_types=21, num_documents=879, num_tokens=234_910, num_entities=40_101),
}
ENV = {"i2b2_train": "MEDNER_I2B2_TRAIN", "i2b2_test": "MEDNER_I2B2_TEST",
       "full": "MEDNER_MEDMENTIONS_FULL", "st21pv": "MEDNER_MEDMENTIONS_ST21PV",
       "splits": "MEDNER_MEDMENTIONS_SPLITS"}


def _medmentions(path, splits_dir):
    docs = read_pubtator(path)
    ids = {part: (Path(splits_dir) / f"corpus_pubtator_pmids_{suffix}.txt").read_text().split()
           for part, suffix in (("train", "trng"), ("dev", "dev"), ("test", "test"))}
    return medmentions_splits(assign_partitions(docs, ids))


@pytest.mark.criterion(7, "corpus statistics match the reference dataset statistics (needs released corpora)")
def test_criterion_7_dataset_statistics():
    env = {k: os.environ.get(v) for k, v in ENV.items()}
    corpora = {}
    if env["i2b2_train"]:
        corpora[("i2b2", "train")] = read_i2b2_dir(env["i2b2_train"])
    if env["i2b2_test"]:
        corpora[("i2b2", "test")] = read_i2b2_dir(env["i2b2_test"])
    for key, scheme in (("full", "medmentions_full"), ("st21pv", "medmentions_st21pv")):
        if env[key] and env["splits"]:
            splits = _medmentions(env[key], env["splits"])
            corpora[(scheme, "train")] = splits["train"]
            corpora[(scheme, "test")] = splits["test"]
    if not corpora:
        pytest.skip("set " + ", ".join(ENV.values()) + " to run against the released corpora")
    mismatches = {}
    for (scheme, split), docs in corpora.items():
        got = corpus_stats(docs, LabelScheme.named(scheme, docs)).as_dict()
        got = {k: got[k] for k in REFERENCE_STATS[(scheme, split)]}
        if got != REFERENCE_STATS[(scheme, split)]:
            mismatches[(scheme, split)] = (got, REFERENCE_STATS[(scheme, split)])
    assert not mismatches, mismatches


# --- 8 --------------------------------------------------------------------------

@pytest.mark.criterion(8, "identical config and seed give bit-identical losses and predictions")
def test_criterion_8_determinism(toy_sentences, toy_scheme, tmp_path):
    model = ModelConfig(word_dim=8, char_dim=4, char_inner_dim=4, lstm_layers=1, lstm_hidden=8,
                        encoder_layers=1, encoder_hidden=8, encoder_heads=2, encoder_intermediate=16,
                        vocab_min_count=1)
    for family in ("bilstm_crf", "encoder_linear", "dual_encoder_bilstm"):
        outputs = []
        for run in range(2):
            cfg = TrainConfig.for_family(family, seed=42, model=model)
            cfg.optimizer = OptimizerConfig(**{**cfg.optimizer.__dict__, "epochs": 2, "batch_size": 8})
            result = train(toy_sentences, cfg, tags=toy_scheme.tags)
            path = tmp_path / f"{family}-{run}.conll"
            preds = result.tagger.predict([s.tokens for s in toy_sentences])
            write_conll([LabeledSequence(s.tokens, p) for s, p in zip(toy_sentences, preds)], path)
            outputs.append((np.float64(result.final_loss).tobytes(), path.read_bytes()))
        assert outputs[0] == outputs[1], family
