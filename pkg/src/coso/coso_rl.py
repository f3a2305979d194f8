"""Causal-weighted entropy RL: objective, optimizers, training iteration.

The objective augments the usual entropy-regularized return with per-token
causal weights: the regularizer is sum_i B_i * H(y_i | y_<i) instead of the
plain conditional-entropy sum.  Two optimizer instantiations are provided
(clipped-surrogate PPO and advantage-weighted regression), plus the online
loop: rollout, counterfactual weighting, classifier update, policy update.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import counterfactual as cf
from . import policy as pol
from . import scm as scm_mod
from .policy import FeatureSpec, PolicyParams
from .scm import AdamState, ScmParams
from .textmdp import NULL, EnvState, TextEnv


@dataclass
class Hyperparams:
    alpha: float = 1.0
    gamma: float = 0.99
    clip_eps: float = 0.2
    awr_beta: float = 1.0
    awr_weight_clamp: float = 20.0
    awr_mode: str = "exp"  # 'exp' or 'filter'
    adv_filter_threshold: float = 0.0
    policy_lr: float = 0.05
    scm_lr: float = 1e-3
    rollout_steps: int = 256
    num_envs: int = 16
    minibatch_size: int = 256
    ppo_epochs: int = 1
    scm_steps: int = 8
    scm_batch_size: int = 256
    gae_lambda: float = 0.95
    value_ridge: float = 1e-2
    weight_mode: str = "maxnorm"  # 'raw' or 'maxnorm'
    entropy_placement: str = "loss_bonus"  # or 'reward_bonus'
    context: int = 3
    normalize_advantages: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not (0 < self.gamma < 1):
            raise ValueError("gamma must be in (0, 1)")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be > 0")


@dataclass
class UpdateReport:
    mean_return: float
    mean_weighted_entropy: float | None
    mean_entropy: float
    policy_loss: float
    scm_loss: float
    invalid_rate: float
    grad_norm: float
    buffer_size: int = 0
    env_steps: int = 0
    success_rate: float = 0.0
    skipped: bool = False
    events: tuple[str, ...] = ()


@dataclass
class RolloutBatch:
    states: list
    next_states: list
    utterances: np.ndarray  # (m, n) token ids
    action_idx: np.ndarray  # (m,) env action-class labels from the parser
    rewards: np.ndarray
    dones: np.ndarray
    parse_ok: np.ndarray
    old_logprob: np.ndarray  # (m, n)
    entropy: np.ndarray  # (m, n) exact conditional entropies at sampling
    num_streams: int  # stream s occupies indices t * num_streams + s
    snapshot_id: int
    weights: np.ndarray | None = None  # (m, n) B consumed by the objective
    hb: np.ndarray | None = None  # (m,) weighted entropies

    @property
    def size(self) -> int:
        return len(self.states)


def weighted_entropy(entropies, weights) -> float:
    """Dot product of per-token entropies with causal weights."""
    h = np.asarray(entropies, dtype=np.float64)
    b = np.asarray(weights, dtype=np.float64)
    if h.shape != b.shape:
        raise ValueError(f"length mismatch: {h.shape} vs {b.shape}")
    return float(np.dot(h, b))


def augmented_reward(r: float, next_weighted_entropy: float, alpha: float,
                     gamma: float) -> float:
    """Reward absorbed with the discounted successor entropy bonus."""
    if alpha == 0.0:
        return r
    return r + gamma * alpha * next_weighted_entropy


# ---------------------------------------------------------------------------
# Value baseline and advantages


def state_features_matrix(spec: FeatureSpec, states) -> np.ndarray:
    """State-only one-hot block (batch, sum of cards + 1 bias)."""
    m = len(states)
    dim = sum(spec.state_cards) + 1
    F = np.zeros((m, dim))
    off = 0
    for j, card in enumerate(spec.state_cards):
        vals = np.fromiter((s.features[j] for s in states), dtype=np.intp,
                           count=m)
        F[np.arange(m), off + vals] = 1.0
        off += card
    F[:, -1] = 1.0
    return F


def fit_value(spec: FeatureSpec, batch: RolloutBatch, gamma: float,
              ridge: float, prev_beta: np.ndarray | None) -> np.ndarray:
    """Ridge fit of a linear state value on bootstrapped returns-to-go."""
    m = batch.size
    ns = batch.num_streams
    F = state_features_matrix(spec, batch.states)
    boot = np.zeros(m)
    if prev_beta is not None:
        boot = state_features_matrix(spec, batch.next_states) @ prev_beta
    returns = np.zeros(m)
    ticks = m // ns
    for s in range(ns):
        idx = np.arange(ticks) * ns + s
        g = 0.0
        last = True
        for j in idx[::-1]:
            if batch.dones[j]:
                g = batch.rewards[j]
            elif last:
                g = batch.rewards[j] + gamma * boot[j]
            else:
                g = batch.rewards[j] + gamma * g
            returns[j] = g
            last = False
    A = F.T @ F + ridge * np.eye(F.shape[1])
    return np.linalg.solve(A, F.T @ returns)


def gae_advantages(spec: FeatureSpec, batch: RolloutBatch, gamma: float,
                   lam: float, beta: np.ndarray) -> np.ndarray:
    """Generalized advantage estimates per step, stream by stream."""
    m = batch.size
    ns = batch.num_streams
    v = state_features_matrix(spec, batch.states) @ beta
    v_next = state_features_matrix(spec, batch.next_states) @ beta
    adv = np.zeros(m)
    ticks = m // ns
    for s in range(ns):
        idx = np.arange(ticks) * ns + s
        acc = 0.0
        for j in idx[::-1]:
            nonterm = 0.0 if batch.dones[j] else 1.0
            delta = batch.rewards[j] + gamma * nonterm * v_next[j] - v[j]
            acc = delta + gamma * lam * nonterm * acc
            adv[j] = acc
    return adv


# ---------------------------------------------------------------------------
# Policy updates


def _policy_gradient_step(params: PolicyParams, batch: RolloutBatch,
                          coef: np.ndarray, hyper: Hyperparams,
                          opt: AdamState, idx: np.ndarray) -> tuple[PolicyParams, float]:
    """Adam step on loss = -(1/m) sum coef * logp(y) - alpha * mean(H^B).

    coef is treated as constant (ratio/advantage weighting evaluated by the
    caller); the entropy term is differentiated analytically.
    """
    spec = params.spec
    states = [batch.states[j] for j in idx]
    utterances = [tuple(batch.utterances[j]) for j in idx]
    m = len(idx)
    probs, logprobs, _, tok_ent = pol.teacher_forced_batch(params, states,
                                                           utterances)
    use_entropy = (hyper.alpha > 0.0
                   and hyper.entropy_placement == "loss_bonus")
    grad = np.zeros_like(params.weights)
    for i in range(spec.n):
        prefixes = [u[:i] for u in utterances]
        F = pol.features_batch(spec, states, prefixes, i)
        dz = -probs[:, i].copy()
        dz[:, NULL] = 0.0
        toks = np.fromiter((u[i] for u in utterances), dtype=np.intp, count=m)
        dz[np.arange(m), toks] += 1.0
        dz *= coef[idx][:, None]
        if use_entropy:
            dent = pol._entropy_dlogits(probs[:, i], logprobs[:, i],
                                        tok_ent[:, i])
            dz += hyper.alpha * batch.weights[idx, i][:, None] * dent
        grad += F.T @ dz
    grad = -grad / m  # gradient of the loss (objective negated)
    new_w = opt.update(params.weights, grad, hyper.policy_lr)
    gnorm = float(np.sqrt(np.sum(grad * grad)))
    out = PolicyParams(spec=params.spec, weights=new_w)
    return out, gnorm


def _loss_value(coef_term: np.ndarray, hyper: Hyperparams,
                batch: RolloutBatch) -> float:
    loss = -float(np.mean(coef_term))
    if hyper.alpha > 0.0 and hyper.entropy_placement == "loss_bonus":
        loss -= hyper.alpha * float(np.mean(batch.hb))
    return loss


def ppo_update(params: PolicyParams, batch: RolloutBatch, hyper: Hyperparams,
               advantages: np.ndarray, opt: AdamState,
               rng: np.random.Generator,
               snapshot_id: int) -> tuple[PolicyParams, float, float, float]:
    """One epoch of clipped-surrogate updates over shuffled minibatches.

    Returns (params, loss at call start, mean ratio, grad norm).  Raises if
    the rollout snapshot does not match the current parameters.
    """
    if batch.snapshot_id != snapshot_id:
        raise ValueError("stale trajectories: snapshot id mismatch")
    m = batch.size
    states = batch.states
    utterances = [tuple(u) for u in batch.utterances]
    _, _, tok_lp, _ = pol.teacher_forced_batch(params, states, utterances)
    old = np.sum(batch.old_logprob, axis=1)
    ratio = np.exp(np.sum(tok_lp, axis=1) - old)
    clipped = np.clip(ratio, 1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps)
    surr = np.minimum(ratio * advantages, clipped * advantages)
    loss = _loss_value(surr, hyper, batch)
    # gradient coefficient of d(sum logp): A * ratio where the unclipped
    # branch is active, zero where the clip binds
    active = ratio * advantages <= clipped * advantages
    coef = np.where(active, advantages * ratio, 0.0)
    order = rng.permutation(m)
    gnorm = 0.0
    for lo in range(0, m, hyper.minibatch_size):
        idx = order[lo:lo + hyper.minibatch_size]
        params, gnorm = _policy_gradient_step(params, batch, coef, hyper,
                                              opt, idx)
    return params, loss, float(np.mean(ratio)), gnorm


def awr_update(params: PolicyParams, batch: RolloutBatch, hyper: Hyperparams,
               advantages: np.ndarray, opt: AdamState,
               rng: np.random.Generator) -> tuple[PolicyParams, float, float, bool]:
    """Advantage-weighted regression step (off-policy tolerated).

    Returns (params, loss, grad norm, skipped).  With the hard filter and no
    positive advantages the step is skipped and reported.
    """
    m = batch.size
    if hyper.awr_mode == "filter":
        w = (advantages > hyper.adv_filter_threshold).astype(np.float64)
    elif hyper.awr_mode == "exp":
        w = np.clip(np.exp(advantages / hyper.awr_beta), 0.0,
                    hyper.awr_weight_clamp)
    else:
        raise ValueError(f"unknown awr mode {hyper.awr_mode!r}")
    if not np.any(w > 0.0):
        return params, 0.0, 0.0, True
    states = batch.states
    utterances = [tuple(u) for u in batch.utterances]
    _, _, tok_lp, _ = pol.teacher_forced_batch(params, states, utterances)
    loss = _loss_value(w * np.sum(tok_lp, axis=1), hyper, batch)
    order = rng.permutation(m)
    gnorm = 0.0
    for lo in range(0, m, hyper.minibatch_size):
        idx = order[lo:lo + hyper.minibatch_size]
        params, gnorm = _policy_gradient_step(params, batch, w, hyper, opt,
                                              idx)
    return params, loss, gnorm, False


# ---------------------------------------------------------------------------
# The online training loop


class Trainer:
    """Owns the mutable training state for one run.

    arm: 'rl' (alpha forced to 0), 'rl_h' (uniform weights), or 'coso'
    (classifier-derived weights).  All arms consume identical randomness; the
    only difference is the weight vector fed to the entropy term.
    """

    def __init__(self, env: TextEnv, hyper: Hyperparams, seed: int,
                 arm: str = "coso", optimizer: str = "ppo",
                 force_uniform_weights: bool = False):
        if arm not in ("rl", "rl_h", "coso"):
            raise ValueError(f"unknown arm {arm!r}")
        if optimizer not in ("ppo", "awr"):
            raise ValueError(f"unknown optimizer {optimizer!r}")
        self.env = env
        self.hyper = hyper if arm != "rl" else replace(hyper, alpha=0.0)
        self.arm = arm
        self.optimizer = optimizer
        self.force_uniform_weights = force_uniform_weights
        self.seed = seed
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        spec = FeatureSpec.for_env(env, context=hyper.context)
        self.policy = PolicyParams.zeros(spec)
        self.scm = ScmParams.zeros(env.grammar.n, env.vocab.size,
                                   env.num_actions)
        self.policy_opt = AdamState()
        self.value_beta: np.ndarray | None = None
        self.snapshot_id = 0
        self.total_env_steps = 0
        self._episode_counter = 0
        self._streams = [self._fresh_state() for _ in range(hyper.num_envs)]

    def _fresh_state(self) -> EnvState:
        s = np.random.SeedSequence([self.seed, self._episode_counter])
        self._episode_counter += 1
        return self.env.reset(int(s.generate_state(1)[0]))

    # -- phases ------------------------------------------------------------

    def collect_rollouts(self) -> RolloutBatch:
        env, hyper = self.env, self.hyper
        ns = hyper.num_envs
        ticks = max(1, hyper.rollout_steps // ns)
        states, next_states, utts, acts = [], [], [], []
        rewards, dones, oks = [], [], []
        lps, ents = [], []
        for _ in range(ticks):
            cur = list(self._streams)
            samples = pol.sample_utterances_batch(self.policy, cur, self.rng)
            for s_i, (st, samp) in enumerate(zip(cur, samples)):
                action, ok = env.parse_or_noop(samp.utterance)
                nxt, r, done = env.step(st, action)
                states.append(st)
                next_states.append(nxt)
                utts.append(samp.utterance)
                acts.append(env.action_index(action))
                rewards.append(r)
                dones.append(done)
                oks.append(ok)
                lps.append(samp.per_token_logprob)
                ents.append(samp.per_token_entropy)
                self._streams[s_i] = self._fresh_state() if done else nxt
            self.total_env_steps += ns
        return RolloutBatch(
            states=states, next_states=next_states,
            utterances=np.asarray(utts, dtype=np.intp),
            action_idx=np.asarray(acts, dtype=np.intp),
            rewards=np.asarray(rewards), dones=np.asarray(dones, dtype=bool),
            parse_ok=np.asarray(oks, dtype=bool),
            old_logprob=np.vstack(lps), entropy=np.vstack(ents),
            num_streams=ns, snapshot_id=self.snapshot_id)

    def compute_weights(self, batch: RolloutBatch) -> None:
        """Fill batch.weights/hb according to the arm (B for every (y, a))."""
        hyper = self.hyper
        raw = cf.causal_weights_batch(self.scm, batch.utterances,
                                      batch.action_idx)
        if self.arm == "rl_h" or self.force_uniform_weights:
            used = np.ones_like(raw)
        else:
            used = cf.normalize_weights_batch(raw, mode=hyper.weight_mode)
        batch.weights = used
        batch.hb = np.sum(used * batch.entropy, axis=1)

    def update_scm(self, batch: RolloutBatch) -> float:
        self.scm, loss = scm_mod.train_scm(
            self.scm, batch.utterances, batch.action_idx,
            lr=self.hyper.scm_lr, steps=self.hyper.scm_steps,
            batch_size=self.hyper.scm_batch_size, rng=self.rng)
        return loss

    def update_policy(self, batch: RolloutBatch) -> tuple[float, float, bool]:
        hyper = self.hyper
        spec = self.policy.spec
        rewards = batch.rewards
        if hyper.alpha > 0.0 and hyper.entropy_placement == "reward_bonus":
            rewards = self._augment_rewards(batch)
            batch = replace(batch, rewards=rewards)
        self.value_beta = fit_value(spec, batch, hyper.gamma,
                                    hyper.value_ridge, self.value_beta)
        adv = gae_advantages(spec, batch, hyper.gamma, hyper.gae_lambda,
                             self.value_beta)
        if hyper.normalize_advantages:
            adv = (adv - np.mean(adv)) / (np.std(adv) + 1e-8)
        skipped = False
        if self.optimizer == "ppo":
            loss = 0.0
            gnorm = 0.0
            for _ in range(hyper.ppo_epochs):
                self.policy, loss, _, gnorm = ppo_update(
                    self.policy, batch, hyper, adv, self.policy_opt,
                    self.rng, self.snapshot_id)
        else:
            self.policy, loss, gnorm, skipped = awr_update(
                self.policy, batch, hyper, adv, self.policy_opt, self.rng)
        if not skipped:
            self.snapshot_id += 1
        return loss, gnorm, skipped

    def _augment_rewards(self, batch: RolloutBatch) -> np.ndarray:
        """Fold the successor weighted-entropy bonus into rewards."""
        hyper = self.hyper
        m = batch.size
        ns = batch.num_streams
        out = batch.rewards.copy()
        for j in range(m):
            nxt = j + ns  # same stream, next tick
            if not batch.dones[j] and nxt < m:
                out[j] = augmented_reward(batch.rewards[j], batch.hb[nxt],
                                          hyper.alpha, hyper.gamma)
        return out

    def train_iteration(self) -> UpdateReport:
        """One pass: rollout, counterfactual weights, SCM then policy update."""
        events = ["rollout"]
        batch = self.collect_rollouts()
        events.append("weights")
        self.compute_weights(batch)
        events.append("scm_update")
        scm_loss = self.update_scm(batch)
        if not np.isfinite(scm_loss):
            raise RuntimeError("SCM update diverged; policy update aborted")
        events.append("policy_update")
        policy_loss, gnorm, skipped = self.update_policy(batch)
        succ = float(np.mean(batch.rewards >= self.env.r_max)) if batch.size else 0.0
        return UpdateReport(
            mean_return=float(np.mean(batch.rewards)),
            mean_weighted_entropy=(None if self.arm == "rl"
                                   else float(np.mean(batch.hb))),
            mean_entropy=float(np.mean(np.sum(batch.entropy, axis=1))),
            policy_loss=policy_loss, scm_loss=scm_loss,
            invalid_rate=float(np.mean(~batch.parse_ok)),
            grad_norm=gnorm, buffer_size=batch.size,
            env_steps=self.total_env_steps, success_rate=succ,
            skipped=skipped, events=tuple(events))
