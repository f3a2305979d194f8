"""Autoregressive categorical token policy with exact entropies.

A linear-softmax model over hand-built features: one-hot state features,
one-hots of the last K previous tokens, and a position one-hot.  The NULL
token is masked before normalization so the policy can never emit it; NULL is
reserved for counterfactual interventions.

All entropies are exact (computed from the full conditional distribution, not
estimated), and the gradients of all supported objectives are analytic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .textmdp import NULL, EnvState, TextEnv


@dataclass(frozen=True)
class FeatureSpec:
    """Layout of the policy's feature vector."""

    state_cards: tuple[int, ...]
    vocab_size: int
    n: int
    context: int = 3  # number of previous tokens visible

    @property
    def dim(self) -> int:
        return sum(self.state_cards) + self.context * self.vocab_size + self.n

    @classmethod
    def for_env(cls, env: TextEnv, context: int = 3) -> "FeatureSpec":
        return cls(state_cards=env.state_feature_cards(),
                   vocab_size=env.vocab.size, n=env.grammar.n, context=context)


@dataclass
class PolicyParams:
    spec: FeatureSpec
    weights: np.ndarray  # (feature dim, vocab)

    @classmethod
    def zeros(cls, spec: FeatureSpec) -> "PolicyParams":
        return cls(spec=spec, weights=np.zeros((spec.dim, spec.vocab_size)))

    def copy(self) -> "PolicyParams":
        return PolicyParams(spec=self.spec, weights=self.weights.copy())


@dataclass(frozen=True)
class TokenDist:
    probs: np.ndarray
    logprobs: np.ndarray  # -inf on masked entries


@dataclass(frozen=True)
class SampledUtterance:
    utterance: tuple[int, ...]
    per_token_logprob: np.ndarray
    per_token_entropy: np.ndarray


def features(spec: FeatureSpec, state: EnvState, prefix,
             position: int) -> np.ndarray:
    """Feature vector for one next-token decision."""
    f = np.zeros(spec.dim)
    off = 0
    for card, v in zip(spec.state_cards, state.features):
        f[off + v] = 1.0
        off += card
    # most recent K tokens, newest first; absent slots stay zero
    for k in range(spec.context):
        idx = position - 1 - k
        if idx >= 0:
            f[off + prefix[idx]] = 1.0
        off += spec.vocab_size
    f[off + position] = 1.0
    return f


def features_batch(spec: FeatureSpec, states, prefixes,
                   position: int) -> np.ndarray:
    """(batch, dim) feature matrix; all rows share one position."""
    m = len(states)
    F = np.zeros((m, spec.dim))
    off = 0
    for j, card in enumerate(spec.state_cards):
        vals = np.fromiter((s.features[j] for s in states), dtype=np.intp,
                           count=m)
        F[np.arange(m), off + vals] = 1.0
        off += card
    for k in range(spec.context):
        idx = position - 1 - k
        if idx >= 0:
            toks = np.fromiter((p[idx] for p in prefixes), dtype=np.intp,
                               count=m)
            F[np.arange(m), off + toks] = 1.0
        off += spec.vocab_size
    F[:, off + position] = 1.0
    return F


def _masked_softmax(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise softmax with the NULL column forced to zero probability."""
    z = np.array(logits, dtype=np.float64, copy=True)
    z[..., NULL] = -np.inf
    zmax = np.max(z, axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    total = np.sum(ez, axis=-1, keepdims=True)
    probs = ez / total
    with np.errstate(divide="ignore"):
        logprobs = (z - zmax) - np.log(total)
    return probs, logprobs


def _entropy(probs: np.ndarray, logprobs: np.ndarray) -> np.ndarray:
    terms = probs * np.where(probs > 0.0, logprobs, 0.0)
    return -np.sum(terms, axis=-1)


def next_token_dist(params: PolicyParams, state: EnvState, prefix) -> TokenDist:
    if len(prefix) >= params.spec.n:
        raise ValueError("prefix already has n tokens")
    f = features(params.spec, state, prefix, len(prefix))
    probs, logprobs = _masked_softmax(f @ params.weights)
    return TokenDist(probs=probs, logprobs=logprobs)


def sample_utterance(params: PolicyParams, state: EnvState,
                     rng: np.random.Generator) -> SampledUtterance:
    toks: list[int] = []
    lps = np.empty(params.spec.n)
    ents = np.empty(params.spec.n)
    for i in range(params.spec.n):
        d = next_token_dist(params, state, toks)
        u = rng.random()
        t = int(np.searchsorted(np.cumsum(d.probs), u, side="right"))
        t = min(t, params.spec.vocab_size - 1)
        toks.append(t)
        lps[i] = d.logprobs[t]
        ents[i] = _entropy(d.probs, d.logprobs)
    return SampledUtterance(utterance=tuple(toks), per_token_logprob=lps,
                            per_token_entropy=ents)


def sample_utterances_batch(params: PolicyParams, states,
                            rng: np.random.Generator) -> list[SampledUtterance]:
    """Sample one utterance per state, vectorized across the batch.

    Consumes exactly n * len(states) uniforms in row-major order, so a batch
    of one is bit-identical to sample_utterance with the same generator.
    """
    spec = params.spec
    m = len(states)
    toks = [[] for _ in range(m)]
    lps = np.empty((m, spec.n))
    ents = np.empty((m, spec.n))
    for i in range(spec.n):
        F = features_batch(spec, states, toks, i)
        probs, logprobs = _masked_softmax(F @ params.weights)
        u = rng.random(m)
        cum = np.cumsum(probs, axis=1)
        picks = np.empty(m, dtype=np.intp)
        for b in range(m):
            picks[b] = np.searchsorted(cum[b], u[b], side="right")
        picks = np.minimum(picks, spec.vocab_size - 1)
        for b in range(m):
            toks[b].append(int(picks[b]))
        lps[:, i] = logprobs[np.arange(m), picks]
        ents[:, i] = _entropy(probs, logprobs)
    return [SampledUtterance(utterance=tuple(toks[b]),
                             per_token_logprob=lps[b].copy(),
                             per_token_entropy=ents[b].copy())
            for b in range(m)]


def logprob_and_entropy(params: PolicyParams, state: EnvState,
                        utterance) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forced per-token log-probs and exact conditional entropies."""
    spec = params.spec
    if len(utterance) != spec.n:
        raise ValueError("utterance length mismatch")
    lps = np.empty(spec.n)
    ents = np.empty(spec.n)
    for i, t in enumerate(utterance):
        if not (0 <= t < spec.vocab_size):
            raise ValueError(f"token {t} out of vocab")
        d = next_token_dist(params, state, utterance[:i])
        lps[i] = d.logprobs[t]
        ents[i] = _entropy(d.probs, d.logprobs)
    return lps, ents


def teacher_forced_batch(params: PolicyParams, states, utterances):
    """Batched teacher forcing.

    Returns (probs, logprobs, tok_logprob, tok_entropy) with shapes
    (m, n, V), (m, n, V), (m, n), (m, n).
    """
    spec = params.spec
    m = len(states)
    probs = np.empty((m, spec.n, spec.vocab_size))
    logprobs = np.empty_like(probs)
    for i in range(spec.n):
        prefixes = [u[:i] for u in utterances]
        F = features_batch(spec, states, prefixes, i)
        probs[:, i], logprobs[:, i] = _masked_softmax(F @ params.weights)
    tok = np.asarray(utterances, dtype=np.intp)
    rows = np.arange(m)[:, None]
    cols = np.arange(spec.n)[None, :]
    tok_lp = logprobs[rows, cols, tok]
    tok_ent = _entropy(probs, logprobs)
    return probs, logprobs, tok_lp, tok_ent


# ---------------------------------------------------------------------------
# Objectives and analytic gradients


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which differentiable objective to evaluate over a batch.

    kind: 'logprob-weighted' | 'entropy' | 'weighted-entropy'
    sample_weights: per-sample coefficients for logprob-weighted
    token_weights: per-sample length-n entropy weights for weighted-entropy
    """

    kind: str
    sample_weights: np.ndarray | None = None
    token_weights: np.ndarray | None = None


def _entropy_dlogits(probs: np.ndarray, logprobs: np.ndarray,
                     ent: np.ndarray) -> np.ndarray:
    # dH/dz_v = -p_v * (log p_v + H); zero off the support
    safe_lp = np.where(probs > 0.0, logprobs, 0.0)
    return -probs * (safe_lp + ent[..., None]) * (probs > 0.0)


def objective_value(params: PolicyParams, batch, spec: ObjectiveSpec) -> float:
    """Scalar objective over a batch of (state, utterance) pairs."""
    states = [b[0] for b in batch]
    utterances = [b[1] for b in batch]
    _, _, tok_lp, tok_ent = teacher_forced_batch(params, states, utterances)
    if spec.kind == "logprob-weighted":
        w = np.asarray(spec.sample_weights, dtype=np.float64)
        return float(np.sum(w * np.sum(tok_lp, axis=1)))
    if spec.kind == "entropy":
        return float(np.sum(tok_ent))
    if spec.kind == "weighted-entropy":
        B = np.asarray(spec.token_weights, dtype=np.float64)
        return float(np.sum(B * tok_ent))
    raise ValueError(f"unknown objective kind {spec.kind!r}")


def grad_objective(params: PolicyParams, batch,
                   spec: ObjectiveSpec) -> np.ndarray:
    """Analytic gradient of objective_value w.r.t. the weight matrix."""
    if not batch:
        raise ValueError("empty batch")
    pspec = params.spec
    states = [b[0] for b in batch]
    utterances = [b[1] for b in batch]
    m = len(batch)
    probs, logprobs, _, tok_ent = teacher_forced_batch(params, states,
                                                       utterances)
    grad = np.zeros_like(params.weights)
    for i in range(pspec.n):
        prefixes = [u[:i] for u in utterances]
        F = features_batch(pspec, states, prefixes, i)  # (m, dim)
        if spec.kind == "logprob-weighted":
            w = np.asarray(spec.sample_weights, dtype=np.float64)
            dz = -probs[:, i].copy()
            dz[:, NULL] = 0.0
            toks = np.fromiter((u[i] for u in utterances), dtype=np.intp,
                               count=m)
            dz[np.arange(m), toks] += 1.0
            dz *= w[:, None]
        elif spec.kind == "entropy":
            dz = _entropy_dlogits(probs[:, i], logprobs[:, i], tok_ent[:, i])
        elif spec.kind == "weighted-entropy":
            B = np.asarray(spec.token_weights, dtype=np.float64)
            dz = _entropy_dlogits(probs[:, i], logprobs[:, i], tok_ent[:, i])
            dz *= B[:, i][:, None]
        else:
            raise ValueError(f"unknown objective kind {spec.kind!r}")
        grad += F.T @ dz
    return grad


def greedy_utterance(params: PolicyParams, state: EnvState) -> tuple[int, ...]:
    """Per-position argmax decoding (ties to lowest token id)."""
    toks: list[int] = []
    for _ in range(params.spec.n):
        d = next_token_dist(params, state, toks)
        toks.append(int(np.argmax(d.probs)))
    return tuple(toks)


def joint_entropy_bruteforce(params: PolicyParams, state: EnvState) -> float:
    """Exact joint utterance entropy by enumerating every sequence.

    Only feasible for tiny vocab/length; used as an oracle for the
    conditional-entropy decomposition.
    """
    spec = params.spec
    support = [t for t in range(spec.vocab_size) if t != NULL]
    total = 0.0

    def rec(prefix, logp):
        nonlocal total
        if len(prefix) == spec.n:
            total -= np.exp(logp) * logp
            return
        d = next_token_dist(params, state, prefix)
        for t in support:
            if d.probs[t] > 0.0:
                rec(prefix + [t], logp + d.logprobs[t])

    rec([], 0.0)
    return float(total)
