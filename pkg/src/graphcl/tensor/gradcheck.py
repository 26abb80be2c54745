"""Central finite differences, used as an independent oracle for ``backward``."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, no_grad


def numerical_grad(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-5,
                   entries: Sequence[np.ndarray] | None = None) -> list[np.ndarray]:
    """d fn() / d input for each input, by perturbing entries one at a time.

    Inputs should hold float64 data; the perturbation is applied in place and
    restored afterwards. ``entries`` optionally restricts each input to the
    given flat indices (other entries of the result stay NaN).
    """
    out = []
    with no_grad():
        for k, t in enumerate(inputs):
            g = np.zeros_like(t.data, dtype=np.float64)
            flat = t.data.reshape(-1)
            which = range(flat.size)
            if entries is not None:
                g[...] = np.nan
                which = entries[k]
            for i in which:
                orig = flat[i]
                flat[i] = orig + step
                plus = float(fn().data)
                flat[i] = orig - step
                minus = float(fn().data)
                flat[i] = orig
                g.reshape(-1)[i] = (plus - minus) / (2 * step)
            out.append(g)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-5,
                    max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Worst relative error between backprop and finite differences over ``inputs``.

    With ``max_entries`` only that many randomly chosen entries per input are
    compared, which keeps whole-model checks affordable.
    """
    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    entries = None
    if max_entries is not None:
        rng = rng or np.random.default_rng(0)
        entries = [rng.choice(t.data.size, size=min(max_entries, t.data.size), replace=False) for t in inputs]
    numeric = numerical_grad(fn, inputs, step, entries)
    if entries is None:
        return max(relative_error(a, n) for a, n in zip(analytic, numeric))
    return max(relative_error(a.reshape(-1)[e], n.reshape(-1)[e]) for a, n, e in zip(analytic, numeric, entries))
