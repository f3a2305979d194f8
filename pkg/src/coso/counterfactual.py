"""Nullification interventions and per-token causal weights.

The weight of token i is the absolute change in the surrogate classifier's
likelihood of the realized action when position i is replaced by NULL.  Raw
weights live in [0, 1]; max-normalization (with a small floor so an
undertrained classifier never fully silences the entropy signal) is the
default mode consumed by the training objective.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scm as scm_mod
from .textmdp import NULL

EPS_B = 1e-6
W_FLOOR = 0.01

DEFAULT_BIN_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class CausalWeights:
    values: np.ndarray
    mode: str  # 'raw' or 'maxnorm'


@dataclass(frozen=True)
class WeightHistogram:
    edges: tuple[float, ...]
    counts: np.ndarray
    fractions: np.ndarray


def nullify(y, i: int) -> tuple[int, ...]:
    """Copy of y with position i replaced by the NULL symbol."""
    y = tuple(y)
    if not (0 <= i < len(y)):
        raise IndexError(f"position {i} out of range for length {len(y)}")
    return y[:i] + (NULL,) + y[i + 1:]


def causal_weights(phi, y, a: int) -> CausalWeights:
    """Raw weights for one (utterance, parsed action) pair.

    Runs exactly n+1 classifier evaluations: the base sequence plus one
    nullified variant per position, in a single batch.
    """
    y = tuple(y)
    n = len(y)
    batch = [list(y)] + [list(nullify(y, i)) for i in range(n)]
    probs = scm_mod.scm_likelihood_batch(phi, batch)[:, a]
    raw = np.abs(probs[0] - probs[1:])
    return CausalWeights(values=raw, mode="raw")


def causal_weights_batch(phi, ys, actions) -> np.ndarray:
    """(m, n) raw weight matrix for m utterances, fully batched."""
    ys = np.asarray(ys, dtype=np.intp)
    actions = np.asarray(actions, dtype=np.intp)
    m, n = ys.shape
    stacked = np.repeat(ys[:, None, :], n + 1, axis=1)  # (m, n+1, n)
    for i in range(n):
        stacked[:, i + 1, i] = NULL
    probs = scm_mod.scm_likelihood_batch(phi, stacked.reshape(m * (n + 1), n))
    probs = probs.reshape(m, n + 1, -1)[np.arange(m), :, actions]
    return np.abs(probs[:, :1] - probs[:, 1:])


def normalize_weights(w: CausalWeights, mode: str = "maxnorm",
                      eps: float = EPS_B, floor: float = W_FLOOR) -> CausalWeights:
    if mode == "raw":
        return CausalWeights(values=w.values.copy(), mode="raw")
    if mode != "maxnorm":
        raise ValueError(f"unknown weight mode {mode!r}")
    top = float(np.max(w.values))
    if top > eps:
        vals = np.maximum(w.values / top, floor)
    else:
        vals = np.full_like(w.values, floor)
    return CausalWeights(values=vals, mode="maxnorm")


def normalize_weights_batch(raw: np.ndarray, mode: str = "maxnorm",
                            eps: float = EPS_B,
                            floor: float = W_FLOOR) -> np.ndarray:
    if mode == "raw":
        return raw.copy()
    if mode != "maxnorm":
        raise ValueError(f"unknown weight mode {mode!r}")
    top = np.max(raw, axis=1, keepdims=True)
    out = np.where(top > eps, np.maximum(raw / np.where(top > eps, top, 1.0),
                                         floor), floor)
    return out


def weight_stats(batch, edges=DEFAULT_BIN_EDGES) -> WeightHistogram:
    """Histogram over every position of every normalized weight vector."""
    if isinstance(batch, np.ndarray):
        flat = batch.ravel()
    else:
        vecs = [w.values if isinstance(w, CausalWeights) else np.asarray(w)
                for w in batch]
        if not vecs:
            raise ValueError("empty weight batch")
        flat = np.concatenate(vecs)
    if flat.size == 0:
        raise ValueError("empty weight batch")
    counts, _ = np.histogram(flat, bins=np.asarray(edges))
    # np.histogram puts values == last edge in the final bin already
    fractions = counts / flat.size
    return WeightHistogram(edges=tuple(edges), counts=counts,
                           fractions=fractions)
