import numpy as np
import pytest

from coso.scm import (ScmParams, accuracy, scm_likelihood, scm_predict,
                      scm_update, train_scm)
from coso.textmdp import NULL, make_env


def rollout_pairs(env, rng, count):
    """Random utterances labeled by the parser (ParseError -> NOOP class)."""
    ys, labels = [], []
    for _ in range(count):
        y = tuple(int(rng.integers(1, env.vocab.size))
                  for _ in range(env.grammar.n))
        action, _ = env.parse_or_noop(y)
        ys.append(y)
        labels.append(env.action_index(action))
    return np.array(ys), np.array(labels)


def test_zero_params_uniform_likelihood():
    phi = ScmParams.zeros(n=3, vocab_size=16, num_actions=3)
    probs = scm_likelihood(phi, (5, 6, 2))
    np.testing.assert_allclose(probs, 1.0 / 3, atol=1e-15)
    assert abs(probs.sum() - 1.0) <= 1e-12


def test_uniform_tie_breaks_to_class_zero():
    phi = ScmParams.zeros(n=3, vocab_size=16, num_actions=3)
    assert scm_predict(phi, (5, 6, 2)) == 0


def test_predict_shift_invariant():
    rng = np.random.default_rng(0)
    phi = ScmParams.zeros(n=3, vocab_size=16, num_actions=3)
    phi.weights = rng.normal(size=phi.weights.shape)
    y = (5, 6, 2)
    base = scm_predict(phi, y)
    phi.bias += 17.3
    assert scm_predict(phi, y) == base


def test_null_tokens_are_in_domain():
    rng = np.random.default_rng(1)
    phi = ScmParams.zeros(n=3, vocab_size=16, num_actions=3)
    phi.weights = rng.normal(size=phi.weights.shape)
    for y in [(NULL, 6, 2), (5, NULL, 2), (NULL, NULL, NULL)]:
        probs = scm_likelihood(phi, y)
        assert np.all(np.isfinite(probs))
        assert abs(probs.sum() - 1.0) <= 1e-12


def test_bad_inputs_raise():
    phi = ScmParams.zeros(n=3, vocab_size=16, num_actions=3)
    with pytest.raises(ValueError):
        scm_likelihood(phi, (5, 6))
    with pytest.raises(ValueError):
        scm_likelihood(phi, (5, 6, 99))
    with pytest.raises(ValueError):
        scm_update(phi, np.empty((0, 3), dtype=int), np.empty(0, dtype=int))


def test_first_step_loss_is_log_num_actions():
    phi = ScmParams.zeros(n=3, vocab_size=16, num_actions=3)
    _, loss = scm_update(phi, [(5, 6, 2), (7, 8, 3)], [0, 1])
    np.testing.assert_allclose(loss, np.log(3), atol=1e-12)


def test_overfit_single_example():
    phi = ScmParams.zeros(n=3, vocab_size=16, num_actions=3)
    loss = None
    for _ in range(1000):
        phi, loss = scm_update(phi, [(5, 6, 2)], [1], lr=1e-2)
    assert loss <= 0.01


def test_monotone_overfit_on_fixed_batch():
    env = make_env("numberline")
    rng = np.random.default_rng(2)
    ys, labels = rollout_pairs(env, rng, 64)
    phi = ScmParams.zeros(env.grammar.n, env.vocab.size, env.num_actions)
    checkpoints = []
    for step in range(1, 1001):
        phi, loss = scm_update(phi, ys, labels, lr=1e-2)
        if step % 100 == 0:
            checkpoints.append(loss)
    for prev, cur in zip(checkpoints, checkpoints[1:]):
        assert cur - prev <= 1e-3


def test_loss_finite_on_random_batches():
    env = make_env("menunav")
    rng = np.random.default_rng(3)
    phi = ScmParams.zeros(env.grammar.n, env.vocab.size, env.num_actions)
    for _ in range(300):
        ys, labels = rollout_pairs(env, rng, 16)
        phi, loss = scm_update(phi, ys, labels, lr=1e-2)
        assert np.isfinite(loss) and loss >= 0.0


def test_numberline_convergence_matches_parser():
    env = make_env("numberline")
    rng = np.random.default_rng(4)
    ys, labels = rollout_pairs(env, rng, 4000)
    phi = ScmParams.zeros(env.grammar.n, env.vocab.size, env.num_actions)
    phi, _ = train_scm(phi, ys[:3000], labels[:3000], lr=1e-2, steps=1500,
                       batch_size=256, rng=rng)
    assert accuracy(phi, ys[3000:], labels[3000:]) >= 0.99
