"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from medner.numerics.tensor import Parameter, Tensor, backward, recording


def numerical_gradient(fn: Callable[[], Tensor], param: Parameter, h: float = 1e-5,
                       indices: Iterable[tuple] | None = None) -> np.ndarray:
    """d fn / d param by central differences; only ``indices`` are probed when given (others stay 0)."""
    grad = np.zeros_like(param.data)
    flat_idx = list(np.ndindex(param.shape)) if indices is None else list(indices)
    for idx in flat_idx:
        orig = param.data[idx]
        param.data[idx] = orig + h
        up = fn().item()
        param.data[idx] = orig - h
        down = fn().item()
        param.data[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(fn: Callable[[], Tensor], params: dict[str, Parameter], h: float = 1e-5,
              max_entries: int | None = None, rng: np.random.Generator | None = None,
              floor: float = 1e-6) -> dict[str, float]:
    """Compare tape gradients of ``fn`` with central differences; returns max relative error per parameter.

    ``max_entries`` caps how many entries of each parameter are probed (a
    random subset drawn from ``rng``), keeping large models affordable.
    """
    with recording() as tape:
        loss = fn()
    analytic = backward(tape, loss, params.values())
    report = {}
    for name, p in params.items():
        indices = None
        if max_entries is not None and p.data.size > max_entries:
            rng = rng or np.random.default_rng(0)
            flat = rng.choice(p.data.size, size=max_entries, replace=False)
            indices = [np.unravel_index(i, p.shape) for i in sorted(flat)]
        numeric = numerical_gradient(fn, p, h, indices)
        a = analytic[p]
        if indices is not None:
            sel = tuple(np.array(ix) for ix in zip(*indices))
            a, numeric = a[sel], numeric[sel]
        report[name] = max_relative_error(a, numeric, floor)
    return report
