"""scikit-learn style front end for the hierarchical agent.

``fit`` trains on a maze, ``transform`` maps observations to the subgoals
the high level would emit, ``predict`` maps them to primitive actions (with
a freshly emitted subgoal) and ``score`` is the evaluation success rate.
"""

from __future__ import annotations

import tempfile

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import envs
from .config import Config, config_from_dict
from .harness import evaluate, read_metrics, run_training
from .nn_core import mlp_predict


class HierarchicalAgent(BaseEstimator):
    """Two-level TD3 agent with optional adversarial subgoal guidance.

    Constructor arguments mirror the most commonly tuned :class:`Config`
    fields; anything else goes through ``config_overrides``.
    """

    def __init__(self, env="u_maze", algorithm="AGILE", k=10, alpha_adv=1e-3, total_steps=100_000,
                 warmup_steps=2_500, hidden_sizes=(300, 300), eval_every=5_000, eval_episodes=10,
                 random_state=0, out_dir=None, config_overrides=None):
        self.env = env
        self.algorithm = algorithm
        self.k = k
        self.alpha_adv = alpha_adv
        self.total_steps = total_steps
        self.warmup_steps = warmup_steps
        self.hidden_sizes = hidden_sizes
        self.eval_every = eval_every
        self.eval_episodes = eval_episodes
        self.random_state = random_state
        self.out_dir = out_dir
        self.config_overrides = config_overrides

    def to_config(self) -> Config:
        data = dict(self.config_overrides or {})
        data.update(
            env=self.env, algorithm=self.algorithm, k=self.k, alpha_adv=float(self.alpha_adv),
            total_steps=self.total_steps, warmup_steps=self.warmup_steps,
            hidden_sizes=[int(h) for h in self.hidden_sizes], eval_every=self.eval_every,
            eval_episodes=self.eval_episodes, seed=int(self.random_state or 0),
            out_dir=self.out_dir or tempfile.mkdtemp(prefix="agile_hrl_"),
        )
        return config_from_dict(data)

    def fit(self, X=None, y=None):
        """Train. ``X`` may name a maze to use instead of ``self.env``; ``y`` is ignored."""
        cfg = self.to_config()
        if X is not None:
            cfg = cfg.replace(env=str(X))
        out = run_training(cfg)
        self.config_ = cfg
        self.learner_ = out.learner
        self.metrics_ = read_metrics(out.metrics)
        self.output_paths_ = out
        self.n_features_in_ = envs.OBS_DIM
        return self

    def _obs(self, X):
        check_is_fitted(self, "learner_")
        return check_array(X, dtype=np.float64, ensure_min_features=envs.OBS_DIM)

    def transform(self, X):
        X = self._obs(X)
        if self.learner_.high is None:
            raise AttributeError("a flat agent has no subgoals to transform into")
        return mlp_predict(self.learner_.high.actor, X)

    def predict(self, X):
        X = self._obs(X)
        if self.learner_.high is None:
            return mlp_predict(self.learner_.low.actor, X)
        return mlp_predict(self.learner_.low.actor, np.hstack([X, self.transform(X)]))

    def score(self, X=None, y=None, episodes=None):
        """Evaluation success rate on the fitted maze (or on the maze named by ``X``)."""
        check_is_fitted(self, "learner_")
        spec = self.learner_.spec if X is None else envs.make_maze(str(X))
        res = evaluate(self.learner_.policy(), spec, episodes or self.eval_episodes, self.config_.seed)
        return res.success_rate
