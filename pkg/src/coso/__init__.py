"""Desk-scale lab for counterfactual causal-weighted entropy RL.

Token-sequence policies emit fixed-length utterances, a deterministic parser
turns them into environment actions, and a surrogate classifier answers
"what changes if this token were nullified?" to weight the entropy bonus per
token.  A tabular verifier checks the convergence and improvement theory
exactly.
"""

from .coso_rl import Hyperparams, Trainer, augmented_reward, weighted_entropy
from .counterfactual import causal_weights, normalize_weights, nullify, weight_stats
from .policy import FeatureSpec, PolicyParams, next_token_dist, sample_utterance
from .scm import ScmParams, scm_likelihood, scm_predict, scm_update
from .textmdp import Action, EnvState, ParseError, grammar_spec, make_env

__all__ = [
    "Action",
    "EnvState",
    "FeatureSpec",
    "Hyperparams",
    "ParseError",
    "PolicyParams",
    "ScmParams",
    "Trainer",
    "augmented_reward",
    "causal_weights",
    "grammar_spec",
    "make_env",
    "next_token_dist",
    "normalize_weights",
    "nullify",
    "sample_utterance",
    "scm_likelihood",
    "scm_predict",
    "scm_update",
    "weight_stats",
    "weighted_entropy",
]

__version__ = "0.1.0"
