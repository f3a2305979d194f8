"""Tour of the text-action environments.

The agent never emits abstract actions directly: it emits a fixed-length
token utterance, and a deterministic parser turns the utterance into an
environment action (or a penalized no-op when the format is wrong). Most
slots are inert filler; only a minority of positions actually decide what
happens.
"""
import numpy as np

from coso.textmdp import env_ids, grammar_report, make_env

for env_id in env_ids():
    print(f"=== {env_id} ===")
    print(grammar_report(env_id))
    print()

env = make_env("numberline")
state = env.reset(0)
print(f"numberline start: cursor/target = {state.features}")

# a well-formed utterance: two fillers and a PLUS in the action-kind slot
utterance = (12, 9, 2)
action, ok = env.parse_or_noop(utterance)
print(f"utterance {utterance} parses to {action} (ok={ok})")
state, reward, done = env.step(state, action)
print(f"-> state {state.features}, reward {reward}, done {done}")

# a malformed one: filler token where the action kind belongs
bad = (12, 9, 11)
action, ok = env.parse_or_noop(bad)
print(f"utterance {bad} parses to {action} (ok={ok}, penalized no-op)")

# random play respects reward bounds and the horizon
rng = np.random.default_rng(1)
state, done, steps, total = env.reset(5), False, 0, 0.0
while not done:
    y = tuple(int(t) for t in rng.integers(1, env.vocab.size, size=3))
    a, _ = env.parse_or_noop(y)
    state, r, done = env.step(state, a)
    steps += 1
    total += r
print(f"random episode: {steps} steps, return {total:.2f}")
