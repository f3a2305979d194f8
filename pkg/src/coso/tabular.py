"""Exact finite-MDP verifier for the weighted-entropy soft RL theory.

Everything here is enumerable: tiny state space, tiny effective vocabulary,
short sequences.  Policies are full autoregressive conditional tables, the
parse map is a total lookup table, and all expectations are computed exactly,
so the contraction / improvement / iteration claims can be checked against
independent oracles (linear solves, brute-force enumeration).

Token ids in this module index the effective alphabet (NULL excluded); the
weight profile B is exogenous and state-independent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np


@dataclass(frozen=True)
class TabularMdp:
    num_states: int
    num_actions: int
    vocab_eff: int  # effective alphabet size (NULL excluded)
    n: int  # utterance length
    parse_table: np.ndarray  # (vocab_eff ** n,) action index per sequence
    P: np.ndarray  # (S, A, S) transition simplex rows
    r: np.ndarray  # (S, A)
    gamma: float

    def __post_init__(self):
        if self.parse_table.shape != (self.vocab_eff ** self.n,):
            raise ValueError("parse table must cover every sequence")
        rows = np.sum(self.P, axis=2)
        if not np.allclose(rows, 1.0, atol=1e-9):
            raise ValueError("transition rows must be simplices")

    @property
    def num_sequences(self) -> int:
        return self.vocab_eff ** self.n

    def seq_tokens(self) -> np.ndarray:
        """(num_sequences, n) token matrix in lexicographic order."""
        return np.array(list(product(range(self.vocab_eff), repeat=self.n)),
                        dtype=np.intp)


@dataclass
class TabularPolicy:
    """Full conditional tables per state: tables[s][i] is ((Ve**i), Ve)."""

    vocab_eff: int
    n: int
    tables: list  # list over states of lists over positions

    @classmethod
    def uniform(cls, num_states: int, vocab_eff: int, n: int) -> "TabularPolicy":
        tables = [[np.full((vocab_eff ** i, vocab_eff), 1.0 / vocab_eff)
                   for i in range(n)] for _ in range(num_states)]
        return cls(vocab_eff=vocab_eff, n=n, tables=tables)

    @classmethod
    def random(cls, num_states: int, vocab_eff: int, n: int,
               rng: np.random.Generator) -> "TabularPolicy":
        tables = []
        for _ in range(num_states):
            rows = []
            for i in range(n):
                t = rng.dirichlet(np.ones(vocab_eff), size=vocab_eff ** i)
                rows.append(t)
            tables.append(rows)
        return cls(vocab_eff=vocab_eff, n=n, tables=tables)

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(vocab_eff=self.vocab_eff, n=self.n,
                             tables=[[t.copy() for t in rows]
                                     for rows in self.tables])

    def seq_probs(self, s: int) -> np.ndarray:
        """Joint probability of every sequence (lexicographic order)."""
        p = np.ones(1)
        for i in range(self.n):
            cond = self.tables[s][i]  # (Ve**i, Ve)
            p = (p[:, None] * cond).ravel()
        return p

    def prefix_probs(self, s: int, i: int) -> np.ndarray:
        """(Ve**i,) probability of each length-i prefix."""
        p = np.ones(1)
        for j in range(i):
            p = (p[:, None] * self.tables[s][j]).ravel()
        return p


def _cond_entropies(q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0.0, q * np.log(q), 0.0)
    return -np.sum(terms, axis=-1)


def weighted_entropy_exact(policy: TabularPolicy, s: int, B) -> float:
    """sum_i B_i * sum_prefix p(prefix) H(y_i | prefix), exactly."""
    B = np.asarray(B, dtype=np.float64)
    total = 0.0
    for i in range(policy.n):
        pre = policy.prefix_probs(s, i)
        h = _cond_entropies(policy.tables[s][i])
        total += B[i] * float(pre @ h)
    return total


def entropy_decomposition_check(policy: TabularPolicy,
                                s: int) -> tuple[float, float, float]:
    """(joint entropy, sum of conditionals, |difference|)."""
    p = policy.seq_probs(s)
    with np.errstate(divide="ignore", invalid="ignore"):
        joint = -float(np.sum(np.where(p > 0.0, p * np.log(p), 0.0)))
    cond_sum = weighted_entropy_exact(policy, s, np.ones(policy.n))
    return joint, cond_sum, abs(joint - cond_sum)


def action_dist(mdp: TabularMdp, policy: TabularPolicy, s: int) -> np.ndarray:
    """Policy pushed through the parse table: p(a | s)."""
    p = policy.seq_probs(s)
    out = np.zeros(mdp.num_actions)
    np.add.at(out, mdp.parse_table, p)
    return out


def _state_entropies(mdp: TabularMdp, policy: TabularPolicy, B) -> np.ndarray:
    return np.array([weighted_entropy_exact(policy, s, B)
                     for s in range(mdp.num_states)])


def bellman_backup(mdp: TabularMdp, Q: np.ndarray, policy: TabularPolicy,
                   B, alpha: float, gamma: float | None = None) -> np.ndarray:
    """One exact application of the weighted-entropy backup operator."""
    g = mdp.gamma if gamma is None else gamma
    h = _state_entropies(mdp, policy, B)  # (S,)
    d = np.array([action_dist(mdp, policy, s) for s in range(mdp.num_states)])
    ev = np.sum(d * Q, axis=1)  # (S,) expected next Q under the policy
    return mdp.r + g * mdp.P @ (alpha * h + ev)


def policy_evaluation(mdp: TabularMdp, policy: TabularPolicy, B,
                      alpha: float, tol: float = 1e-10,
                      max_iters: int = 100_000) -> tuple[np.ndarray, list]:
    """Iterate the backup to its fixed point; returns (Q, residual trace)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    Q = np.zeros((mdp.num_states, mdp.num_actions))
    trace = []
    for _ in range(max_iters):
        nxt = bellman_backup(mdp, Q, policy, B, alpha)
        res = float(np.max(np.abs(nxt - Q)))
        trace.append(res)
        Q = nxt
        if res < tol:
            return Q, trace
    raise RuntimeError(f"policy evaluation did not converge in {max_iters}")


def policy_evaluation_direct(mdp: TabularMdp, policy: TabularPolicy, B,
                             alpha: float) -> np.ndarray:
    """Closed-form fixed point via a linear solve (independent oracle)."""
    S, A = mdp.num_states, mdp.num_actions
    h = _state_entropies(mdp, policy, B)
    d = np.array([action_dist(mdp, policy, s) for s in range(S)])  # (S, A)
    # Q = r + gamma * P (alpha h + D Q) with D: (S, S*A) selecting E_a'[Q]
    D = np.zeros((S, S * A))
    for s in range(S):
        D[s, s * A:(s + 1) * A] = d[s]
    P_flat = mdp.P.reshape(S * A, S)
    M = np.eye(S * A) - mdp.gamma * P_flat @ D
    rhs = mdp.r.ravel() + mdp.gamma * P_flat @ (alpha * h)
    return np.linalg.solve(M, rhs).reshape(S, A)


def _state_objective(mdp: TabularMdp, policy: TabularPolicy, Q: np.ndarray,
                     s: int, B, alpha: float) -> float:
    d = action_dist(mdp, policy, s)
    return float(d @ Q[s]) + alpha * weighted_entropy_exact(policy, s, B)


def soft_improve(mdp: TabularMdp, Q: np.ndarray, policy: TabularPolicy, B,
                 alpha: float, sweeps: int = 50,
                 tol: float = 1e-12) -> TabularPolicy:
    """Per-state coordinate ascent over the autoregressive conditionals.

    Each coordinate (position, prefix) has a closed-form maximizer: the
    objective is linear in that conditional plus alpha*B_i*p(prefix) times its
    entropy, so the optimum is a softmax of the linear coefficients (greedy
    argmax when the entropy coefficient vanishes).  Steps are accepted only if
    the per-state objective does not decrease, which is what the improvement
    lemma requires.
    """
    B = np.asarray(B, dtype=np.float64)
    out = policy.copy()
    Ve = out.vocab_eff
    for s in range(mdp.num_states):
        obj = _state_objective(mdp, out, Q, s, B, alpha)
        for _ in range(sweeps):
            improved = 0.0
            for i in range(out.n):
                for pre_idx in range(Ve ** i):
                    saved = out.tables[s][i][pre_idx].copy()
                    ppre = float(out.prefix_probs(s, i)[pre_idx])
                    c = alpha * B[i] * ppre
                    # linear coefficients: objective with this conditional
                    # collapsed onto each single token
                    g = np.empty(Ve)
                    for v in range(Ve):
                        onehot = np.zeros(Ve)
                        onehot[v] = 1.0
                        out.tables[s][i][pre_idx] = onehot
                        g[v] = _state_objective(mdp, out, Q, s, B, alpha)
                    if c > 1e-13:
                        z = (g - np.max(g)) / c
                        cand = np.exp(z)
                        cand /= np.sum(cand)
                    else:
                        # entropy term off: greedy, ties to the lowest index
                        cand = np.zeros(Ve)
                        cand[int(np.argmax(g >= np.max(g) - 1e-12))] = 1.0
                    out.tables[s][i][pre_idx] = cand
                    new_obj = _state_objective(mdp, out, Q, s, B, alpha)
                    if new_obj >= obj - 1e-15:
                        improved += new_obj - obj
                        obj = new_obj
                    else:
                        out.tables[s][i][pre_idx] = saved
            if improved < tol:
                break
    return out


def policy_iteration(mdp: TabularMdp, B, alpha: float, tol: float = 1e-9,
                     max_iters: int = 1000):
    """Alternate exact evaluation and soft improvement.

    Returns (final policy, Q*, monotonicity log) where each log entry is the
    min over (s, a) of Q_{k+1} - Q_k.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    policy = TabularPolicy.uniform(mdp.num_states, mdp.vocab_eff, mdp.n)
    Q, _ = policy_evaluation(mdp, policy, B, alpha, tol=min(tol, 1e-10))
    mono_log = []
    for _ in range(max_iters):
        policy = soft_improve(mdp, Q, policy, B, alpha)
        Q_new, _ = policy_evaluation(mdp, policy, B, alpha, tol=min(tol, 1e-10))
        mono_log.append(float(np.min(Q_new - Q)))
        if mono_log[-1] < -1e-7:
            raise RuntimeError(
                f"non-monotone improvement step: {mono_log[-1]:.3e}")
        delta = float(np.max(np.abs(Q_new - Q)))
        Q = Q_new
        if delta < tol:
            break
    return policy, Q, mono_log


# ---------------------------------------------------------------------------
# Random instances and brute-force oracles


def random_mdp(rng: np.random.Generator, num_states: int = 4,
               num_actions: int = 3, vocab_eff: int = 3, n: int = 2,
               gamma: float | None = None,
               surjective_parse: bool = True) -> TabularMdp:
    g = float(rng.uniform(0.5, 0.95)) if gamma is None else gamma
    num_seqs = vocab_eff ** n
    if surjective_parse and num_seqs < num_actions:
        raise ValueError("not enough sequences to cover the action set")
    parse = rng.integers(0, num_actions, size=num_seqs)
    if surjective_parse:
        slots = rng.permutation(num_seqs)[:num_actions]
        parse[slots] = np.arange(num_actions)
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    r = rng.uniform(-1.0, 1.0, size=(num_states, num_actions))
    return TabularMdp(num_states=num_states, num_actions=num_actions,
                      vocab_eff=vocab_eff, n=n,
                      parse_table=np.asarray(parse, dtype=np.intp),
                      P=P, r=r, gamma=g)


def brute_force_optimal_q(mdp: TabularMdp) -> np.ndarray:
    """Optimal Q (alpha = 0) by enumerating deterministic action policies."""
    S, A = mdp.num_states, mdp.num_actions
    best_v = np.full(S, -np.inf)
    for assignment in product(range(A), repeat=S):
        P_pi = mdp.P[np.arange(S), assignment]  # (S, S)
        r_pi = mdp.r[np.arange(S), assignment]
        v = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi, r_pi)
        best_v = np.maximum(best_v, v)
    return mdp.r + mdp.gamma * mdp.P @ best_v
