"""Flat-vector maximizers: Adam and a plain-gradient mode.

Trainers expose (get_params, set_params, value_and_grad) over a flat
float64 vector; this module owns the update rule and the windowed
relative-change stopping test shared by all of them.
"""

import contextlib
from dataclasses import dataclass

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

__all__ = ["AdamState", "adam_step", "maximize"]

STOP_WINDOW = 50


def _single_threaded_blas():
    """Training loops run thousands of small-matrix BLAS calls; letting the
    pool spin up threads for each one costs far more than it saves."""
    if threadpool_limits is None:
        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


def adam_step(state, grad, lr, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update; returns the increment to ADD (ascent convention)."""
    b1, b2 = betas
    state.t += 1
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    mhat = state.m / (1.0 - b1**state.t)
    vhat = state.v / (1.0 - b2**state.t)
    return lr * mhat / (np.sqrt(vhat) + eps)


def maximize(value_and_grad, x0, max_iters, learning_rate, *, betas=(0.9, 0.999),
             eps=1e-8, rel_tol=0.0, method="adam", callback=None, track_best=False):
    """Run gradient ascent on value_and_grad starting from x0.

    Stops at max_iters or when the objective changed by less than
    rel_tol * max(1, |old|) over a 50-iteration window. Returns
    (x, history) with history the per-iteration objective values.

    With track_best the best-objective iterate is returned instead of the
    final one; use it only when value_and_grad evaluates the exact
    objective (full batch), not a noisy minibatch estimate.
    """
    x = np.array(x0, dtype=np.float64)
    state = AdamState.zeros(x.shape[0]) if method == "adam" else None
    history = []
    best_val, best_x = -np.inf, x
    with _single_threaded_blas():
        for it in range(max_iters):
            val, grad = value_and_grad(x)
            history.append(val)
            if track_best and val > best_val:
                best_val, best_x = val, x.copy()
            if callback is not None:
                callback(it, val, x)
            if method == "adam":
                x = x + adam_step(state, grad, learning_rate, betas, eps)
            elif method == "gd":
                x = x + learning_rate * grad
            else:
                raise ValueError(f"unknown method {method!r}")
            if rel_tol > 0 and len(history) > STOP_WINDOW:
                old = history[-1 - STOP_WINDOW]
                if abs(history[-1] - old) < rel_tol * max(1.0, abs(old)):
                    break
    return (best_x if track_best else x), history
