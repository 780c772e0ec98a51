"""Batching, the training loop, document-level cross-validation and grid search."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from medner.corpus import LabeledSequence
from medner.evaluation import Score, entities_from_sequences, strict_score
from medner.models.taggers import FAMILIES, ModelConfig, Tagger, build_tagger, tagger_from_meta
from medner.numerics.checkpoint import load_checkpoint, save_checkpoint
from medner.numerics.optim import Adam, OptimizerConfig, clip_grad_norm
from medner.numerics.random import derive_rng
from medner.numerics.tensor import backward, recording

log = logging.getLogger(__name__)

BILSTM_CLIP_NORM = 5.0


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    family: str = "bilstm_crf"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    folds: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        if self.folds < 2:
            raise ValueError("cross-validation needs at least 2 folds")

    @classmethod
    def for_family(cls, family: str, **overrides) -> "TrainConfig":
        """Defaults: Adam 1e-3, batch 32, 10 epochs for bi-LSTM+CRF; the fine-tuning recipe otherwise."""
        if family == "bilstm_crf":
            opt = OptimizerConfig(peak_lr=1e-3, batch_size=32, epochs=10, weight_decay=0.0,
                                  schedule="constant", clip_norm=BILSTM_CLIP_NORM)
        else:
            opt = OptimizerConfig(peak_lr=5e-5, batch_size=32, epochs=3)
        return cls(family=family, optimizer=opt, **overrides)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    indices: list[int]
    sequences: list[LabeledSequence]
    lengths: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def make_batches(sequences: Sequence[LabeledSequence], batch_size: int, seed: int, epoch: int = 0,
                 shuffle: bool = True) -> list[Batch]:
    """Deterministic per-epoch shuffle, then consecutive batches with a ``(batch, max_len)`` mask."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(sequences))
    if shuffle:
        order = derive_rng(seed, f"shuffle/{epoch}").permutation(len(sequences))
    batches = []
    for lo in range(0, len(order), batch_size):
        idx = [int(i) for i in order[lo:lo + batch_size]]
        seqs = [sequences[i] for i in idx]
        lengths = np.array([len(s) for s in seqs])
        mask = np.arange(lengths.max(initial=0))[None, :] < lengths[:, None]
        batches.append(Batch(idx, seqs, lengths, mask))
    return batches


def steps_per_epoch(num_sequences: int, batch_size: int) -> int:
    return math.ceil(num_sequences / batch_size)


def tags_for(sequences: Sequence[LabeledSequence]) -> list[str]:
    labels = sorted({t[2:] for s in sequences for t in s.tags if t != "O"})
    return ["O"] + [f"{p}-{lab}" for lab in labels for p in ("B", "I")]


def score_tagger(tagger: Tagger, sequences: Sequence[LabeledSequence]) -> Score:
    predicted = tagger.predict([s.tokens for s in sequences])
    pred_seqs = [LabeledSequence(s.tokens, p, f"s{i}") for i, (s, p) in enumerate(zip(sequences, predicted))]
    gold_seqs = [LabeledSequence(s.tokens, s.tags, f"s{i}") for i, s in enumerate(sequences)]
    return strict_score(entities_from_sequences(gold_seqs), entities_from_sequences(pred_seqs))


@dataclass
class TrainResult:
    tagger: Tagger
    log: list[dict]
    final_loss: float
    steps: int
    best_epoch: int | None = None
    best_f1: float | None = None
    checkpoint: Path | None = None


def save_tagger(path, tagger: Tagger, config: TrainConfig | None = None, seed: int | None = None,
                extra: dict | None = None) -> None:
    meta = tagger.meta() | (extra or {})
    save_checkpoint(path, tagger.state_dict(), config.as_dict() if config else None, seed, meta)


def load_tagger(path) -> tuple[Tagger, dict]:
    tensors, header = load_checkpoint(path)
    tagger = tagger_from_meta(header["meta"])
    tagger.load_state_dict(tensors)
    return tagger, header


def train(train_seqs: Sequence[LabeledSequence], config: TrainConfig, dev_seqs: Sequence[LabeledSequence] | None = None,
          tags: Sequence[str] | None = None, out_dir=None) -> TrainResult:
    """Train one tagger.

    The optimizer runs exactly ``epochs * ceil(N / batch_size)`` steps.  With
    ``dev_seqs`` the tagger is scored after every epoch and the best-scoring
    state is kept (and written to ``out_dir/best.ckpt``); otherwise the final
    state is returned.  Per-epoch records go to ``out_dir/train_log.jsonl``.
    """
    opt_cfg = config.optimizer
    if opt_cfg.epochs < 1:
        raise ValueError("epochs must be >= 1")
    if not train_seqs:
        raise ValueError("no training sequences")
    tags = list(tags) if tags is not None else tags_for(train_seqs)
    tagger = build_tagger(config.family, train_seqs, tags, config.model, config.seed, opt_cfg.dropout_prob)
    params = tagger.parameters()
    total = opt_cfg.epochs * steps_per_epoch(len(train_seqs), opt_cfg.batch_size)
    optimizer = Adam(params, opt_cfg, total)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "train_log.jsonl", "w", encoding="utf-8")
        log_file.write(json.dumps({"event": "start", "time": time.strftime("%Y-%m-%dT%H:%M:%S"),
                                   "family": config.family, "seed": config.seed, "total_steps": total}) + "\n")
    records: list[dict] = []
    best_f1, best_epoch, best_state = -1.0, None, None
    epoch_loss = float("nan")
    try:
        for epoch in range(1, opt_cfg.epochs + 1):
            tagger.train()
            dropout_rng = derive_rng(config.seed, f"dropout/{epoch}")
            epoch_loss = 0.0
            lr = 0.0
            for batch in make_batches(train_seqs, opt_cfg.batch_size, config.seed, epoch):
                with recording() as tape:
                    loss = tagger.loss(batch.sequences, dropout_rng)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss {value} at epoch {epoch}, step {optimizer.state.step + 1}")
                grads_by_param = backward(tape, loss, params.values())
                grads = {name: grads_by_param[p] for name, p in params.items()}
                if opt_cfg.clip_norm:
                    clip_grad_norm(grads, opt_cfg.clip_norm)
                lr = optimizer.step(grads)
                epoch_loss += value
            record = {"epoch": epoch, "step": optimizer.state.step, "lr": lr, "loss": epoch_loss}
            if dev_seqs is not None:
                score = score_tagger(tagger, dev_seqs)
                record.update(dev_p=score.precision, dev_r=score.recall, dev_f1=score.f1)
                if score.f1 > best_f1:
                    best_f1, best_epoch, best_state = score.f1, epoch, tagger.state_dict()
                    if out_dir is not None:
                        save_tagger(out_dir / "best.ckpt", tagger, config, config.seed,
                                    {"epoch": epoch, "dev_f1": score.f1})
            records.append(record)
            log.info("epoch %d loss %.4f%s", epoch, epoch_loss,
                     f" dev F1 {record['dev_f1']:.4f}" if "dev_f1" in record else "")
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()
    if optimizer.state.step != total:
        raise TrainingError(f"schedule mismatch: ran {optimizer.state.step} of {total} steps")
    checkpoint = None
    if best_state is not None:
        tagger.load_state_dict(best_state)
        checkpoint = out_dir / "best.ckpt" if out_dir is not None else None
    elif out_dir is not None:
        checkpoint = out_dir / "final.ckpt"
        save_tagger(checkpoint, tagger, config, config.seed, {"epoch": opt_cfg.epochs})
    tagger.eval()
    return TrainResult(tagger, records, epoch_loss, optimizer.state.step,
                       best_epoch, best_f1 if best_state is not None else None, checkpoint)


# ---------------------------------------------------------------------------
# cross-validation

def document_folds(num_documents: int, k: int, seed: int) -> list[list[int]]:
    """Seeded shuffle of document indices cut into ``k`` near-equal folds."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > num_documents:
        raise ValueError(f"cannot make {k} folds from {num_documents} documents")
    perm = derive_rng(seed, "folds").permutation(num_documents)
    return [sorted(int(i) for i in part) for part in np.array_split(perm, k)]


@dataclass
class GridPoint:
    batch_size: int
    peak_lr: float
    epochs: int
    fold_f1: list[float] = field(default_factory=list)

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.fold_f1)) if self.fold_f1 else 0.0

    def key(self) -> dict:
        return {"batch_size": self.batch_size, "peak_lr": self.peak_lr, "epochs": self.epochs}


@dataclass
class GridResult:
    points: list[GridPoint]
    chosen: GridPoint

    def as_dict(self) -> dict:
        return {"chosen": self.chosen.key() | {"mean_f1": self.chosen.mean_f1},
                "points": [p.key() | {"fold_f1": p.fold_f1, "mean_f1": p.mean_f1} for p in self.points]}


DEFAULT_GRID = {"batch_size": (16, 32), "peak_lr": (2e-5, 3e-5, 5e-5, 1e-4), "epochs": tuple(range(1, 11))}


def expand_grid(grid: dict) -> list[GridPoint]:
    return [GridPoint(b, lr, e) for b in grid["batch_size"] for lr in grid["peak_lr"] for e in grid["epochs"]]


def choose(points: Sequence[GridPoint]) -> GridPoint:
    """Highest mean F1; ties go to fewer epochs, then the smaller learning rate."""
    return min(points, key=lambda p: (-p.mean_f1, p.epochs, p.peak_lr, p.batch_size))


def kfold_cv(documents: Sequence[Sequence[LabeledSequence]], grid, base: TrainConfig, k: int = 10,
             seed: int | None = None, tags: Sequence[str] | None = None) -> GridResult:
    """Score every grid point by mean held-out strict F1 over ``k`` document-level folds.

    ``documents`` holds each document's sentences, so no document is split
    across folds.  ``grid`` is a list of :class:`GridPoint` or a dict of
    value lists as in :data:`DEFAULT_GRID`.
    """
    seed = base.seed if seed is None else seed
    points = expand_grid(grid) if isinstance(grid, dict) else [GridPoint(p.batch_size, p.peak_lr, p.epochs)
                                                               for p in grid]
    if not points:
        raise ValueError("empty hyper-parameter grid")
    folds = document_folds(len(documents), k, seed)
    all_seqs = [s for doc in documents for s in doc]
    tags = list(tags) if tags is not None else tags_for(all_seqs)
    for point in points:
        for held_out in folds:
            held = set(held_out)
            train_seqs = [s for i, doc in enumerate(documents) if i not in held for s in doc]
            dev_seqs = [s for i in held_out for s in documents[i]]
            opt = OptimizerConfig(**(asdict(base.optimizer) | point.key()))
            cfg = TrainConfig(base.family, opt, base.model, max(k, 2), seed)
            result = train(train_seqs, cfg, tags=tags)
            point.fold_f1.append(score_tagger(result.tagger, dev_seqs).f1)
    return GridResult(points, choose(points))
