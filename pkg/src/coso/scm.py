"""Surrogate probabilistic classifier P(a | y) imitating the parser.

Trained online by cross-entropy against the parser's labels, then queried
under token-nullification interventions by the counterfactual machinery.
The feature map is a (position, token) one-hot that covers NULL, so nullified
sequences are always in-domain.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def update(self, params: np.ndarray, grad: np.ndarray, lr: float,
               beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.step += 1
        self.m = beta1 * self.m + (1 - beta1) * grad
        self.v = beta2 * self.v + (1 - beta2) * grad * grad
        mhat = self.m / (1 - beta1 ** self.step)
        vhat = self.v / (1 - beta2 ** self.step)
        return params - lr * mhat / (np.sqrt(vhat) + eps)


@dataclass
class ScmParams:
    n: int
    vocab_size: int
    num_actions: int
    weights: np.ndarray  # (n * vocab, actions)
    bias: np.ndarray  # (actions,)
    opt: AdamState = field(default_factory=AdamState)

    @classmethod
    def zeros(cls, n: int, vocab_size: int, num_actions: int) -> "ScmParams":
        return cls(n=n, vocab_size=vocab_size, num_actions=num_actions,
                   weights=np.zeros((n * vocab_size, num_actions)),
                   bias=np.zeros(num_actions))

    def copy(self) -> "ScmParams":
        return ScmParams(n=self.n, vocab_size=self.vocab_size,
                         num_actions=self.num_actions,
                         weights=self.weights.copy(), bias=self.bias.copy(),
                         opt=AdamState(step=self.opt.step,
                                       m=None if self.opt.m is None else self.opt.m.copy(),
                                       v=None if self.opt.v is None else self.opt.v.copy()))


# Module-level counter auditing how many sequences the SCM has scored;
# the counterfactual tests use it to pin the interventions-per-utterance cost.
_EVAL_COUNT = 0


def eval_count() -> int:
    return _EVAL_COUNT


def _feature_indices(phi: ScmParams, ys: np.ndarray) -> np.ndarray:
    # active one-hot index for slot i is i * V + token
    return ys + np.arange(phi.n)[None, :] * phi.vocab_size


def _logits(phi: ScmParams, ys: np.ndarray) -> np.ndarray:
    global _EVAL_COUNT
    ys = np.asarray(ys, dtype=np.intp)
    if ys.ndim == 1:
        ys = ys[None, :]
    if ys.shape[1] != phi.n:
        raise ValueError(f"sequence length {ys.shape[1]} != {phi.n}")
    if np.any(ys < 0) or np.any(ys >= phi.vocab_size):
        raise ValueError("token id outside vocab")
    _EVAL_COUNT += ys.shape[0]
    idx = _feature_indices(phi, ys)
    return np.sum(phi.weights[idx], axis=1) + phi.bias


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / np.sum(ez, axis=-1, keepdims=True)


def scm_likelihood_batch(phi: ScmParams, ys) -> np.ndarray:
    """(batch, actions) softmax likelihoods; NULL tokens are allowed."""
    return _softmax(_logits(phi, np.asarray(ys)))


def scm_likelihood(phi: ScmParams, y) -> np.ndarray:
    return scm_likelihood_batch(phi, [list(y)])[0]


def scm_predict(phi: ScmParams, y) -> int:
    """Argmax action class; ties break to the lowest class index."""
    return int(np.argmax(scm_likelihood(phi, y)))


def scm_update(phi: ScmParams, ys, labels, lr: float = 1e-3) -> tuple["ScmParams", float]:
    """One Adam step of cross-entropy on a batch of (sequence, action) pairs.

    Returns the updated params and the mean loss at the pre-update params.
    """
    ys = np.asarray(ys, dtype=np.intp)
    labels = np.asarray(labels, dtype=np.intp)
    if ys.size == 0:
        raise ValueError("empty batch")
    m = ys.shape[0]
    logits = _logits(phi, ys)
    zmax = np.max(logits, axis=1, keepdims=True)
    logz = zmax[:, 0] + np.log(np.sum(np.exp(logits - zmax), axis=1))
    loss = float(np.mean(logz - logits[np.arange(m), labels]))

    probs = _softmax(logits)
    dz = probs.copy()
    dz[np.arange(m), labels] -= 1.0
    dz /= m

    grad_w = np.zeros_like(phi.weights)
    idx = _feature_indices(phi, ys)  # (m, n)
    for i in range(phi.n):
        np.add.at(grad_w, idx[:, i], dz)
    grad_b = np.sum(dz, axis=0)

    out = phi.copy()
    flat = np.concatenate([grad_w.ravel(), grad_b])
    packed = np.concatenate([phi.weights.ravel(), phi.bias])
    new_packed = out.opt.update(packed, flat, lr)
    out.weights = new_packed[:grad_w.size].reshape(grad_w.shape)
    out.bias = new_packed[grad_w.size:]
    return out, loss


def train_scm(phi: ScmParams, ys, labels, lr: float, steps: int,
              batch_size: int, rng: np.random.Generator) -> tuple["ScmParams", float]:
    """Minibatch cross-entropy training loop; returns final params and loss."""
    ys = np.asarray(ys, dtype=np.intp)
    labels = np.asarray(labels, dtype=np.intp)
    loss = float("nan")
    for _ in range(steps):
        pick = rng.integers(0, ys.shape[0], size=min(batch_size, ys.shape[0]))
        phi, loss = scm_update(phi, ys[pick], labels[pick], lr=lr)
    return phi, loss


def accuracy(phi: ScmParams, ys, labels) -> float:
    probs = scm_likelihood_batch(phi, ys)
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(labels)))
