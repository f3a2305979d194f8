"""Experiment orchestration: configs, runs, ablations, reports, theory checks.

Every run is fully described by a RunConfig and replays byte-identically from
its seed.  Artifacts per run directory: a copy of the config, JSONL step
metrics, a final policy+SCM checkpoint, and a summary CSV across seeds.  No
artifact embeds wall-clock time, so reruns are diffable.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_mod
from . import counterfactual as cf
from . import policy as pol
from . import tabular
from .coso_rl import Hyperparams, Trainer
from .textmdp import TextEnv, make_env

EVAL_SEED_BASE = 990_000  # fixed eval episode seeds, shared by every run

ARMS = ("rl", "rl_h", "coso")


@dataclass
class RunConfig:
    env_id: str = "numberline"
    arm: str = "coso"
    optimizer: str = "ppo"
    hyper: Hyperparams = field(default_factory=Hyperparams)
    seeds: tuple[int, ...] = (0, 1, 2)
    total_env_steps: int = 50_000
    eval_every_iters: int = 5
    eval_episodes: int = 32
    success_threshold: float = 0.9
    out_dir: str = "runs"
    force_uniform_weights: bool = False  # test hook (arm-consistency checks)

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.arm not in ARMS:
            raise ValueError(f"unknown arm {self.arm!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "hyper" in d:
            d["hyper"] = Hyperparams(**d["hyper"])
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def run_name(self, seed: int) -> str:
        return f"{self.env_id}_{self.arm}_{self.optimizer}_seed{seed}"


def resolve_out_dir(config: RunConfig) -> Path:
    return Path(os.environ.get("COSO_OUTPUT_DIR", config.out_dir))


def parallelism() -> int:
    return max(1, int(os.environ.get("COSO_PARALLEL", "1")))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass
class SeedResult:
    seed: int
    env_steps: list
    success: list
    mean_return: list
    invalid_rate: list
    mean_entropy: list
    mean_weighted_entropy: list  # None entries for the rl arm
    steps_to_threshold: float  # inf when never reached
    final_success: float
    run_dir: str = ""


@dataclass
class RunSummary:
    config: RunConfig
    per_seed: list

    def median_steps_to_threshold(self) -> float:
        return float(np.median([r.steps_to_threshold for r in self.per_seed]))

    def median_final_success(self) -> float:
        return float(np.median([r.final_success for r in self.per_seed]))


def evaluate_greedy(env: TextEnv, policy_params, episodes: int) -> float:
    """Greedy-decoding success rate over a fixed eval seed set."""
    wins = 0
    for e in range(episodes):
        state = env.reset(EVAL_SEED_BASE + e)
        done = False
        while not done:
            y = pol.greedy_utterance(policy_params, state)
            action, _ = env.parse_or_noop(y)
            state, reward, done = env.step(state, action)
        wins += int(reward >= env.r_max)
    return wins / episodes


def run_single_seed(config: RunConfig, seed: int,
                    write_artifacts: bool = True) -> SeedResult:
    env = make_env(config.env_id)
    trainer = Trainer(env, config.hyper, seed, arm=config.arm,
                      optimizer=config.optimizer,
                      force_uniform_weights=config.force_uniform_weights)
    rows = []
    env_steps, success, mean_ret, invalid = [], [], [], []
    ent, went = [], []
    it = 0
    while trainer.total_env_steps < config.total_env_steps:
        report = trainer.train_iteration()
        it += 1
        if it % config.eval_every_iters == 0 or \
                trainer.total_env_steps >= config.total_env_steps:
            sr = evaluate_greedy(env, trainer.policy, config.eval_episodes)
            env_steps.append(report.env_steps)
            success.append(sr)
            mean_ret.append(report.mean_return)
            invalid.append(report.invalid_rate)
            ent.append(report.mean_entropy)
            went.append(report.mean_weighted_entropy)
            rows.append({
                "schema_version": 1,
                "iteration": it,
                "env_steps": report.env_steps,
                "eval_success": sr,
                "mean_return": report.mean_return,
                "invalid_rate": report.invalid_rate,
                "mean_entropy": report.mean_entropy,
                "mean_weighted_entropy": report.mean_weighted_entropy,
                "policy_loss": report.policy_loss,
                "scm_loss": report.scm_loss,
                "grad_norm": report.grad_norm,
            })
    reached = [s for s, ok in zip(env_steps, np.array(success) >=
                                  config.success_threshold) if ok]
    stt = float(reached[0]) if reached else float("inf")
    run_dir = ""
    if write_artifacts:
        out = resolve_out_dir(config) / config.run_name(seed)
        out.mkdir(parents=True, exist_ok=True)
        _atomic_write(out / "config.json",
                      json.dumps(config.to_dict(), sort_keys=True, indent=1))
        _atomic_write(out / "metrics.jsonl",
                      "".join(json.dumps(r, sort_keys=True) + "\n"
                              for r in rows))
        ckpt_mod.save_bundle(out / "checkpoint.json", trainer.policy,
                             trainer.scm, config.env_id,
                             meta={"seed": seed, "arm": config.arm,
                                   "env_steps": trainer.total_env_steps})
        run_dir = str(out)
    return SeedResult(seed=seed, env_steps=env_steps, success=success,
                      mean_return=mean_ret, invalid_rate=invalid,
                      mean_entropy=ent, mean_weighted_entropy=went,
                      steps_to_threshold=stt,
                      final_success=success[-1] if success else 0.0,
                      run_dir=run_dir)


def _run_seed_job(args) -> SeedResult:
    config_dict, seed, write = args
    return run_single_seed(RunConfig.from_dict(config_dict), seed, write)


def run_experiment(config: RunConfig,
                   write_artifacts: bool = True) -> RunSummary:
    """Train every seed of one config; emit per-run artifacts + summary CSV."""
    jobs = [(config.to_dict(), s, write_artifacts) for s in config.seeds]
    if parallelism() > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=parallelism()) as ex:
            per_seed = list(ex.map(_run_seed_job, jobs))
    else:
        per_seed = [_run_seed_job(j) for j in jobs]
    summary = RunSummary(config=config, per_seed=per_seed)
    if write_artifacts:
        out = resolve_out_dir(config)
        out.mkdir(parents=True, exist_ok=True)
        name = f"{config.env_id}_{config.arm}_{config.optimizer}_summary.csv"
        _atomic_write(out / name, summary_csv(summary))
    return summary


def summary_csv(summary: RunSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "steps_to_threshold", "final_success"])
    for r in summary.per_seed:
        w.writerow([r.seed, r.steps_to_threshold, r.final_success])
    w.writerow(["median", summary.median_steps_to_threshold(),
                summary.median_final_success()])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Ablation matrix


@dataclass
class AblationResult:
    rows: list  # one dict per arm
    series_csv: str  # plot-ready: env_steps, one success column per arm

    def by_arm(self) -> dict:
        return {r["arm"]: r for r in self.rows}


def ablation_matrix(configs: list,
                    write_artifacts: bool = True) -> AblationResult:
    """Run >= 2 arms and tabulate medians with seed spread."""
    if len(configs) < 2:
        raise ValueError("ablation needs at least two arms")
    for c in configs:
        if len(c.seeds) < 3:
            raise ValueError("ablation needs >= 3 seeds per arm")
    summaries = [run_experiment(c, write_artifacts) for c in configs]
    rows = []
    for s in summaries:
        stt = [r.steps_to_threshold for r in s.per_seed]
        fin = [r.final_success for r in s.per_seed]
        rows.append({
            "arm": s.config.arm,
            "optimizer": s.config.optimizer,
            "env_id": s.config.env_id,
            "median_steps_to_threshold": float(np.median(stt)),
            "steps_to_threshold_spread": [float(min(stt)), float(max(stt))],
            "median_final_success": float(np.median(fin)),
            "final_success_spread": [float(min(fin)), float(max(fin))],
            "seeds": list(s.config.seeds),
        })

    # plot-ready CSV: x = env steps, y = median success, one series per arm
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["env_steps"] + [f"success_{s.config.arm}" for s in summaries])
    steps_axis = summaries[0].per_seed[0].env_steps
    for i, x in enumerate(steps_axis):
        row = [x]
        for s in summaries:
            vals = [r.success[i] for r in s.per_seed if i < len(r.success)]
            row.append(float(np.median(vals)))
        w.writerow(row)
    result = AblationResult(rows=rows, series_csv=buf.getvalue())
    if write_artifacts:
        out = resolve_out_dir(configs[0])
        out.mkdir(parents=True, exist_ok=True)
        _atomic_write(out / "ablation_table.json",
                      json.dumps(rows, sort_keys=True, indent=1))
        _atomic_write(out / "ablation_series.csv", result.series_csv)
    return result


# ---------------------------------------------------------------------------
# Counterfactual report and sampling probe


def cf_report(ckpt_path, env_id: str, num_episodes: int,
              sample_seed: int = 1234) -> dict:
    """Per-step token/weight records plus an aggregate weight histogram."""
    policy_params, scm_params, ckpt_env, _ = ckpt_mod.load_bundle(ckpt_path)
    if ckpt_env != env_id:
        raise ValueError(f"checkpoint is for env {ckpt_env!r}, not {env_id!r}")
    env = make_env(env_id)
    rng = np.random.default_rng(sample_seed)
    records = []
    all_norm = []
    for ep in range(num_episodes):
        state = env.reset(EVAL_SEED_BASE + ep)
        done = False
        t = 0
        while not done:
            samp = pol.sample_utterance(policy_params, state, rng)
            action, ok = env.parse_or_noop(samp.utterance)
            a_idx = env.action_index(action)
            raw = cf.causal_weights(scm_params, samp.utterance, a_idx)
            norm = cf.normalize_weights(raw, mode="maxnorm")
            all_norm.append(norm.values)
            records.append({
                "episode": ep,
                "step": t,
                "tokens": list(samp.utterance),
                "token_names": [env.vocab.name(x) for x in samp.utterance],
                "slot_roles": list(env.grammar.roles),
                "raw_weights": [float(v) for v in raw.values],
                "normalized_weights": [float(v) for v in norm.values],
                "action": str(action),
                "parse_ok": ok,
            })
            state, _, done = env.step(state, action)
            t += 1
    hist = cf.weight_stats(np.vstack(all_norm))
    return {
        "env_id": env_id,
        "num_episodes": num_episodes,
        "records": records,
        "histogram": {
            "edges": list(hist.edges),
            "counts": [int(c) for c in hist.counts],
            "fractions": [float(f) for f in hist.fractions],
        },
    }


def repeated_sampling_probe(ckpt_path, state_spec: str, k: int,
                            sample_seed: int = 1234) -> dict:
    """Sample k utterances at one state; tabulate actions + format errors."""
    if k < 1:
        raise ValueError("k must be >= 1")
    policy_params, _, env_id, _ = ckpt_mod.load_bundle(ckpt_path)
    env = make_env(env_id)
    state = env.state_from_spec(state_spec)
    rng = np.random.default_rng(sample_seed)
    counts: Counter = Counter()
    invalid = 0
    for _ in range(k):
        samp = pol.sample_utterance(policy_params, state, rng)
        action, ok = env.parse_or_noop(samp.utterance)
        counts[str(action)] += 1
        invalid += int(not ok)
    return {
        "env_id": env_id,
        "state": state_spec,
        "k": k,
        "actions": dict(sorted(counts.items())),
        "distinct_actions": len(counts),
        "invalid_count": invalid,
    }


# ---------------------------------------------------------------------------
# Theory checks


@dataclass
class TheoryCheckSpec:
    instances: int = 50
    q_pairs: int = 100
    seed: int = 0
    contraction_tol: float = 1e-9
    fixed_point_tol: float = 1e-8
    improvement_tol: float = 1e-8
    monotonicity_tol: float = 1e-7
    decomposition_tol: float = 1e-10
    corrupt_gamma: float | None = None  # negative-control hook


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float
    failing_seeds: list


def _instance_rng(spec: TheoryCheckSpec, suite: str, idx: int):
    suite_key = int.from_bytes(suite.encode()[:4].ljust(4, b"\0"), "big")
    ss = np.random.SeedSequence([spec.seed, suite_key, idx])
    return np.random.default_rng(ss), int(ss.generate_state(1)[0])


def check_decomposition(spec: TheoryCheckSpec) -> SuiteResult:
    worst = 0.0
    failing = []
    for i in range(spec.instances):
        rng, inst_seed = _instance_rng(spec, "decomposition", i)
        ve = int(rng.integers(2, 5))
        n = int(rng.integers(2, 5))
        policy = tabular.TabularPolicy.random(1, ve, n, rng)
        _, _, diff = tabular.entropy_decomposition_check(policy, 0)
        worst = max(worst, diff)
        if diff > spec.decomposition_tol:
            failing.append(inst_seed)
    return SuiteResult("entropy_decomposition", not failing, worst, failing)


def check_contraction(spec: TheoryCheckSpec) -> SuiteResult:
    worst = 0.0
    failing = []
    for i in range(spec.instances):
        rng, inst_seed = _instance_rng(spec, "contraction", i)
        mdp = tabular.random_mdp(rng)
        policy = tabular.TabularPolicy.random(mdp.num_states, mdp.vocab_eff,
                                              mdp.n, rng)
        B = rng.uniform(0.0, 1.0, size=mdp.n)
        alpha = float(rng.uniform(0.0, 2.0))
        gamma = spec.corrupt_gamma if spec.corrupt_gamma is not None else None
        bad = False
        for _ in range(spec.q_pairs):
            shape = (mdp.num_states, mdp.num_actions)
            q1 = rng.uniform(-5, 5, size=shape)
            q2 = rng.uniform(-5, 5, size=shape)
            t1 = tabular.bellman_backup(mdp, q1, policy, B, alpha, gamma=gamma)
            t2 = tabular.bellman_backup(mdp, q2, policy, B, alpha, gamma=gamma)
            denom = float(np.max(np.abs(q1 - q2)))
            lip = float(np.max(np.abs(t1 - t2))) / denom
            excess = lip - mdp.gamma
            worst = max(worst, excess)
            if excess > spec.contraction_tol:
                bad = True
        # fixed point must match the direct linear solve
        if spec.corrupt_gamma is None:
            q_iter, _ = tabular.policy_evaluation(mdp, policy, B, alpha,
                                                  tol=1e-12)
            q_direct = tabular.policy_evaluation_direct(mdp, policy, B, alpha)
            gap = float(np.max(np.abs(q_iter - q_direct)))
            if gap > spec.fixed_point_tol:
                bad = True
        if bad:
            failing.append(inst_seed)
    return SuiteResult("contraction", not failing, worst, failing)


def check_improvement(spec: TheoryCheckSpec) -> SuiteResult:
    worst = 0.0
    failing = []
    for i in range(spec.instances):
        rng, inst_seed = _instance_rng(spec, "improvement", i)
        mdp = tabular.random_mdp(rng)
        policy = tabular.TabularPolicy.random(mdp.num_states, mdp.vocab_eff,
                                              mdp.n, rng)
        B = rng.uniform(0.0, 1.0, size=mdp.n)
        alpha = float(rng.uniform(0.0, 2.0))
        q_pi, _ = tabular.policy_evaluation(mdp, policy, B, alpha, tol=1e-12)
        improved = tabular.soft_improve(mdp, q_pi, policy, B, alpha)
        q_new, _ = tabular.policy_evaluation(mdp, improved, B, alpha,
                                             tol=1e-12)
        drop = float(np.max(q_pi - q_new))
        worst = max(worst, drop)
        if drop > spec.improvement_tol:
            failing.append(inst_seed)
    return SuiteResult("improvement", not failing, worst, failing)


def check_iteration(spec: TheoryCheckSpec) -> SuiteResult:
    worst = 0.0
    failing = []
    for i in range(spec.instances):
        rng, inst_seed = _instance_rng(spec, "iteration", i)
        alpha0 = i % 2 == 0  # alternate alpha = 0 (classical) instances
        mdp = tabular.random_mdp(rng, num_states=3, num_actions=2,
                                 vocab_eff=2, n=2)
        B = rng.uniform(0.0, 1.0, size=mdp.n)
        alpha = 0.0 if alpha0 else float(rng.uniform(0.1, 1.0))
        try:
            _, q_star, mono = tabular.policy_iteration(mdp, B, alpha,
                                                       tol=1e-9,
                                                       max_iters=1000)
        except RuntimeError:
            failing.append(inst_seed)
            continue
        worst = max(worst, -min(mono) if mono else 0.0)
        if mono and min(mono) < -spec.monotonicity_tol:
            failing.append(inst_seed)
            continue
        if alpha0:
            q_bf = tabular.brute_force_optimal_q(mdp)
            if float(np.max(np.abs(q_star - q_bf))) > 1e-6:
                failing.append(inst_seed)
    return SuiteResult("iteration", not failing, worst, failing)


def theory_check(spec: TheoryCheckSpec | None = None) -> list:
    """Run all four verifier suites; returns a list of SuiteResults."""
    spec = spec or TheoryCheckSpec()
    return [check_decomposition(spec), check_contraction(spec),
            check_improvement(spec), check_iteration(spec)]


def theory_report(results) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{status}  {r.name:24s} worst residual {r.worst:.3e}"
        if r.failing_seeds:
            line += f"  failing seeds: {r.failing_seeds}"
        lines.append(line)
    return "\n".join(lines)
