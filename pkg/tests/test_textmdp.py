import numpy as np
import pytest

from coso.textmdp import (ACTION_KIND, FILLER, FORMAT, NULL, Action, EnvState,
                          ParseError, env_ids, grammar_report, grammar_spec,
                          make_env)


def random_utterance(env, rng):
    g = env.grammar
    return tuple(int(rng.integers(1, env.vocab.size)) for _ in range(g.n))


def test_registry():
    assert env_ids() == ("menunav", "numberline")
    with pytest.raises(KeyError):
        make_env("nope")


def test_numberline_grammar_roles():
    g = grammar_spec("numberline")
    assert g.roles == (FILLER, FILLER, ACTION_KIND)
    assert g.kind_slot == 2


def test_menunav_single_kind_slot():
    g = grammar_spec("menunav")
    assert sum(r == ACTION_KIND for r in g.roles) == 1
    assert g.n == 6


@pytest.mark.parametrize("env_id", env_ids())
def test_majority_of_slots_are_inert(env_id):
    g = grammar_spec(env_id)
    inert = sum(r in (FILLER, FORMAT) for r in g.roles)
    assert inert / g.n >= 0.5


def test_parse_reads_only_kind_slot():
    env = make_env("numberline")
    assert env.parse((7, 3, 2)) == Action("PLUS")
    assert env.parse((5, 9, 2)) == Action("PLUS")


def test_parse_error_on_filler_token_in_kind_slot():
    env = make_env("numberline")
    with pytest.raises(ParseError):
        env.parse((7, 3, 9))


def test_menunav_click_with_arg():
    env = make_env("menunav")
    # filler, filler, filler, sep, CLICK, arg-slot-1
    assert env.parse((13, 14, 15, 7, 2, 9)) == Action("CLICK", 1)
    # non-click kinds ignore the arg slot
    assert env.parse((13, 14, 15, 7, 3, 9)) == Action("BACK")
    with pytest.raises(ParseError):
        env.parse((13, 14, 15, 7, 2, 15))  # illegal arg for CLICK


def test_parse_determinism_fuzz():
    rng = np.random.default_rng(7)
    for env_id in env_ids():
        env = make_env(env_id)
        for _ in range(2000):
            y = random_utterance(env, rng)
            try:
                a1 = env.parse(y)
                a2 = env.parse(y)
                assert a1 == a2
            except ParseError:
                with pytest.raises(ParseError):
                    env.parse(y)


def test_filler_and_format_mutation_invariance():
    rng = np.random.default_rng(11)
    for env_id in env_ids():
        env = make_env(env_id)
        g = env.grammar
        inert = [i for i, r in enumerate(g.roles) if r in (FILLER, FORMAT)]
        for _ in range(200):
            y = list(random_utterance(env, rng))
            base = env.parse_or_noop(tuple(y))
            for i in inert:
                for t in range(1, env.vocab.size):
                    y2 = list(y)
                    y2[i] = t
                    assert env.parse_or_noop(tuple(y2)) == base


def test_reset_determinism_and_distinct_target():
    env = make_env("numberline")
    assert env.reset(42) == env.reset(42)
    for seed in range(200):
        c, t = env.reset(seed).features
        assert c != t
        assert env.reset(seed).step_count == 0


def test_menunav_reset_is_home_untyped():
    env = make_env("menunav")
    for seed in (0, 1, 99):
        s = env.reset(seed)
        assert s.features == (env.HOME, 0)


def test_numberline_success_step():
    env = make_env("numberline")
    s = EnvState(features=(3, 4), step_count=0)
    nxt, r, done = env.step(s, Action("PLUS"))
    assert nxt.features == (4, 4) and r == 1.0 and done


def test_numberline_boundary_clip():
    env = make_env("numberline")
    s = EnvState(features=(0, 5), step_count=0)
    nxt, r, done = env.step(s, Action("MINUS"))
    assert nxt.features == (0, 5) and r == -0.01 and not done


def test_menunav_trap_ignores_clicks():
    env = make_env("menunav")
    trap = env.trap_state()
    for k in range(4):
        nxt, r, done = env.step(trap, Action("CLICK", k))
        assert nxt.features[0] == env.SHARE and r == -0.01 and not done
    nxt, _, _ = env.step(trap, Action("BACK"))
    assert nxt.features[0] == env.HOME


def test_menunav_goal_requires_typed_query():
    env = make_env("menunav")
    search = EnvState(features=(env.SEARCH, 0), step_count=0)
    nxt, r, done = env.step(search, Action("CLICK", 0))
    assert not done and r == -0.01
    typed, _, _ = env.step(search, Action("TYPE"))
    assert typed.features == (env.SEARCH, 1)
    nxt, r, done = env.step(typed, Action("CLICK", 0))
    assert done and r == 1.0 and nxt.features[0] == env.RESULTS


def test_reward_bounds_and_termination_random_play():
    rng = np.random.default_rng(3)
    for env_id in env_ids():
        env = make_env(env_id)
        for ep in range(50):
            s = env.reset(ep)
            done = False
            steps = 0
            while not done:
                y = random_utterance(env, rng)
                a, _ = env.parse_or_noop(y)
                s, r, done = env.step(s, a)
                steps += 1
                assert env.r_min <= r <= env.r_max
            assert steps <= env.horizon


def test_step_after_done_raises():
    env = make_env("numberline")
    s = EnvState(features=(0, 5), step_count=env.horizon)
    with pytest.raises(ValueError):
        env.step(s, Action("PLUS"))


def test_state_from_spec():
    nl = make_env("numberline")
    assert nl.state_from_spec("c=3,tau=7").features == (3, 7)
    mn = make_env("menunav")
    assert mn.state_from_spec("trap").features == (mn.SHARE, 0)
    assert mn.state_from_spec("screen=1,typed=1").features == (1, 1)


def test_grammar_report_mentions_all_slots():
    for env_id in env_ids():
        rep = grammar_report(env_id)
        g = grammar_spec(env_id)
        for i in range(g.n):
            assert f"[{i}]" in rep
