"""Linear-chain CRF: log partition by the forward algorithm, gold path score, Viterbi.

Transitions are a ``(T + 2) x (T + 2)`` matrix ``trans[from, to]`` whose last
two indices are the synthetic START and STOP states.  Only
``trans[START, :T]``, ``trans[:T, :T]`` and ``trans[:T, STOP]`` are used.
"""
from __future__ import annotations

import numpy as np

from medner.numerics import nn
from medner.numerics.tensor import Parameter, Tensor, as_tensor, getitem, log_sum_exp, tsum, where


class CRF(nn.Module):
    def __init__(self, num_tags: int):
        self.num_tags = num_tags
        self.transitions = Parameter(np.zeros((num_tags + 2, num_tags + 2)))

    @property
    def start(self) -> int:
        return self.num_tags

    @property
    def stop(self) -> int:
        return self.num_tags + 1

    def nll(self, emissions, tags, mask=None) -> Tensor:
        return crf_negative_log_likelihood(emissions, self.transitions, tags, mask)

    def decode(self, emissions: np.ndarray, lengths=None) -> list[list[int]]:
        e = np.asarray(emissions.data if isinstance(emissions, Tensor) else emissions)
        if e.ndim == 2:
            return [crf_viterbi(e, self.transitions.data)]
        lengths = lengths if lengths is not None else [e.shape[1]] * e.shape[0]
        return [crf_viterbi(e[b, :n], self.transitions.data) for b, n in enumerate(lengths)]


def _batchify(emissions, tags=None, mask=None):
    emissions = as_tensor(emissions)
    single = emissions.ndim == 2
    if single:
        emissions = emissions.reshape(1, *emissions.shape)
        if tags is not None:
            tags = np.asarray(tags)[None]
    batch, steps, _ = emissions.shape
    if mask is None:
        mask = np.ones((batch, steps), dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if single and mask.ndim == 1:
            mask = mask[None]
    if steps == 0 or not mask[:, 0].all():
        raise ValueError("CRF: every sequence needs at least one position")
    return emissions, tags, mask


def crf_log_partition(emissions, transitions, mask=None) -> Tensor:
    """log Z per sequence, shape ``(batch,)``."""
    emissions, _, mask = _batchify(emissions, None, mask)
    trans = as_tensor(transitions)
    T = emissions.shape[-1]
    if trans.shape != (T + 2, T + 2):
        raise ValueError(f"CRF: transitions must be {(T + 2, T + 2)}, got {trans.shape}")
    start, stop = T, T + 1
    inner = trans[:T, :T]
    alpha = trans[start, :T] + emissions[:, 0]
    for t in range(1, emissions.shape[1]):
        scores = alpha.reshape(alpha.shape[0], T, 1) + inner + emissions[:, t].reshape(alpha.shape[0], 1, T)
        alpha = where(mask[:, t:t + 1], log_sum_exp(scores, axis=1), alpha)
    return log_sum_exp(alpha + trans[:T, stop], axis=1)


def crf_path_score(emissions, transitions, tags, mask=None) -> Tensor:
    """Score of ``tags`` per sequence: emissions plus START, pairwise and STOP transitions."""
    emissions, tags, mask = _batchify(emissions, tags, mask)
    trans = as_tensor(transitions)
    batch, steps, T = emissions.shape
    tags = np.asarray(tags, dtype=np.int64)
    if tags.shape != (batch, steps):
        raise ValueError(f"CRF: tags shape {tags.shape} does not match emissions {emissions.shape[:2]}")
    valid = tags[mask]
    if valid.size and (valid.min() < 0 or valid.max() >= T):
        raise IndexError(f"CRF: tag index out of range [0, {T})")
    tags = np.where(mask, tags, 0)
    fmask = mask.astype(emissions.dtype)
    rows = np.arange(batch)[:, None]
    emit = getitem(emissions, (rows, np.arange(steps)[None, :], tags))
    score = tsum(emit * fmask, axis=1) + trans[T, tags[:, 0]]
    if steps > 1:
        pair = getitem(trans, (tags[:, :-1], tags[:, 1:]))
        score = score + tsum(pair * fmask[:, 1:], axis=1)
    lengths = mask.sum(axis=1)
    last = tags[np.arange(batch), lengths - 1]
    return score + trans[last, T + 1]


def crf_negative_log_likelihood(emissions, transitions, gold_tags, mask=None) -> Tensor:
    """Summed over the batch: ``log Z - score(gold)``."""
    return tsum(crf_log_partition(emissions, transitions, mask)
                - crf_path_score(emissions, transitions, gold_tags, mask))


def crf_viterbi(emissions, transitions) -> list[int]:
    """Highest-scoring path; ties go to the lower tag index."""
    e = np.asarray(emissions.data if isinstance(emissions, Tensor) else emissions)
    trans = np.asarray(transitions.data if isinstance(transitions, Tensor) else transitions)
    steps, T = e.shape
    if steps == 0:
        return []
    inner = trans[:T, :T]
    score = trans[T, :T] + e[0]
    back = np.zeros((steps, T), dtype=np.int64)
    for t in range(1, steps):
        cand = score[:, None] + inner
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(T)] + e[t]
    score = score + trans[:T, T + 1]
    best = int(np.argmax(score))
    path = [best]
    for t in range(steps - 1, 0, -1):
        best = int(back[t, best])
        path.append(best)
    return path[::-1]
