import json
import math

import numpy as np
import pytest

from medner.corpus import LabeledSequence
from medner.models import ModelConfig
from medner.numerics.optim import OptimizerConfig
from medner.training import (
    GridPoint, TrainConfig, TrainingError, choose, document_folds, kfold_cv, load_tagger, make_batches,
    score_tagger, steps_per_epoch, train,
)

TINY = ModelConfig(word_dim=8, char_dim=4, char_inner_dim=4, lstm_layers=1, lstm_hidden=8,
                   encoder_layers=1, encoder_hidden=8, encoder_heads=2, encoder_intermediate=16,
                   vocab_min_count=1, max_positions=32)


def seqs(n):
    return [LabeledSequence([f"w{i}", "fever", "."], ["O", "B-dis", "O"], f"d{i}") for i in range(n)]


def config(family="bilstm_crf", epochs=2, batch=4, **opt):
    cfg = TrainConfig.for_family(family, model=TINY, seed=5)
    cfg.optimizer = OptimizerConfig(**{**cfg.optimizer.__dict__, "epochs": epochs, "batch_size": batch, **opt})
    return cfg


def test_make_batches_small_corpus_is_one_batch():
    (batch,) = make_batches(seqs(10), 32, seed=0)
    assert len(batch) == 10 and sorted(batch.indices) == list(range(10))


def test_make_batches_is_seed_deterministic_and_masks_padding():
    data = seqs(7) + [LabeledSequence(["a"], ["O"])]
    a = make_batches(data, 3, seed=1, epoch=2)
    b = make_batches(data, 3, seed=1, epoch=2)
    assert [x.indices for x in a] == [x.indices for x in b]
    assert [x.indices for x in a] != [x.indices for x in make_batches(data, 3, seed=1, epoch=3)]
    for batch in a:
        np.testing.assert_array_equal(batch.mask.sum(1), batch.lengths)
    with pytest.raises(ValueError):
        make_batches(data, 0, seed=0)


@pytest.mark.parametrize("family", ["bilstm_crf", "encoder_linear", "dual_encoder_linear"])
def test_padded_batch_loss_equals_sum_of_single_losses(family):
    from medner.models import build_tagger
    data = [LabeledSequence(["Severe", "chest", "pain", "today"], ["O", "B-dis", "I-dis", "O"]),
            LabeledSequence(["Aspirin"], ["B-drug"]),
            LabeledSequence(["no", "fever"], ["O", "B-dis"])]
    tags = ["O", "B-dis", "I-dis", "B-drug", "I-drug"]
    tagger = build_tagger(family, data, tags, TINY, seed=0)
    tagger.eval()
    batched = tagger.loss(data).item()
    assert batched == pytest.approx(sum(tagger.loss([s]).item() for s in data), abs=1e-6)


def test_train_runs_exact_step_count_and_logs(tmp_path):
    result = train(seqs(10), config(epochs=3, batch=4), dev_seqs=seqs(3), out_dir=tmp_path)
    assert result.steps == 3 * steps_per_epoch(10, 4) == 9
    lines = [json.loads(x) for x in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert lines[0]["event"] == "start" and "time" in lines[0]
    assert [r["epoch"] for r in lines[1:]] == [1, 2, 3]
    assert {"step", "lr", "loss", "dev_p", "dev_r", "dev_f1"} <= set(lines[-1])


def test_best_dev_checkpoint_reproduces_logged_f1(tmp_path):
    dev = seqs(4)
    result = train(seqs(12), config(epochs=4, batch=4, peak_lr=0.05), dev_seqs=dev, out_dir=tmp_path)
    tagger, header = load_tagger(result.checkpoint)
    assert header["meta"]["dev_f1"] == result.best_f1
    assert score_tagger(tagger, dev).f1 == result.best_f1
    assert result.log[result.best_epoch - 1]["dev_f1"] == result.best_f1


def test_epochs_zero_is_rejected():
    with pytest.raises(ValueError):
        config(epochs=0)
    with pytest.raises(ValueError):
        train([], config())


def test_non_finite_loss_halts(monkeypatch):
    from medner.models.taggers import BiLstmCrfTagger
    original = BiLstmCrfTagger.loss
    monkeypatch.setattr(BiLstmCrfTagger, "loss", lambda self, s, rng=None: original(self, s, rng) * float("nan"))
    with pytest.raises(TrainingError, match="non-finite"):
        train([LabeledSequence(["x"], ["B-dis"])], config(epochs=1))


def test_same_seed_gives_bit_identical_loss():
    a = train(seqs(8), config("encoder_linear", epochs=2))
    b = train(seqs(8), config("encoder_linear", epochs=2))
    assert a.final_loss == b.final_loss and math.isfinite(a.final_loss)
    c = train(seqs(8), TrainConfig(**{**config("encoder_linear", epochs=2).__dict__, "seed": 6}))
    assert c.final_loss != a.final_loss


def test_document_folds():
    folds = document_folds(4, 2, seed=0)
    assert [len(f) for f in folds] == [2, 2]
    assert sorted(i for f in folds for i in f) == [0, 1, 2, 3]
    assert folds == document_folds(4, 2, seed=0)
    assert any(document_folds(20, 4, s) != document_folds(20, 4, 0) for s in range(1, 4))
    with pytest.raises(ValueError):
        document_folds(3, 4, seed=0)


def test_grid_choice_breaks_ties_toward_cheaper_settings():
    pts = [GridPoint(32, 5e-5, 3, [0.5]), GridPoint(16, 2e-5, 3, [0.5]), GridPoint(16, 1e-4, 2, [0.5]),
           GridPoint(16, 1e-4, 9, [0.4])]
    assert choose(pts) is pts[2]


def test_kfold_cv_single_point_grid():
    docs = [[s] for s in seqs(4)]
    result = kfold_cv(docs, [GridPoint(2, 1e-3, 1)], config(), k=2)
    assert result.chosen.key() == {"batch_size": 2, "peak_lr": 1e-3, "epochs": 1}
    assert len(result.chosen.fold_f1) == 2
    with pytest.raises(ValueError):
        kfold_cv(docs, [GridPoint(2, 1e-3, 1)], config(), k=5)
