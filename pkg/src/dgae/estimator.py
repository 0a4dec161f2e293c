"""scikit-learn style wrapper around single-seed agent training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from dgae import approx
from dgae.advantage import GaeParams
from dgae.agents import ALGORITHMS, AgentConfig, evaluate_policy, train_seed
from dgae.config import ExperimentConfig
from dgae.envs import make_env


class PolicyGradientAgent(BaseEstimator):
    """Actor-critic agent trained on a named environment.

    ``fit`` ignores ``X`` and ``y``: the data come from interacting with the
    environment. After fitting, ``predict`` maps states to deterministic
    (mean) actions and ``predict_distribution`` returns the critic's sorted
    quantiles (one column for the scalar-critic algorithms).

    >>> agent = PolicyGradientAgent(algorithm="dppo", total_timesteps=4096,
    ...                             rollout_length=512, n_quantiles=8, hidden=16)
    >>> agent.fit().predict(np.zeros((3, 2))).shape
    (3, 1)
    """

    def __init__(self, algorithm="dppo", env="pointmass", env_params=None, gamma=0.99, lam=0.95,
                 n_quantiles=64, hidden=64, total_timesteps=200_000, rollout_length=2048,
                 ppo_epochs=10, minibatch_size=64, policy_lr=3e-4, value_lr=3e-4, kappa=1.0,
                 entropy_coef=0.0, eval_interval=10_000, eval_episodes=10, random_state=0):
        self.algorithm = algorithm
        self.env = env
        self.env_params = env_params
        self.gamma = gamma
        self.lam = lam
        self.n_quantiles = n_quantiles
        self.hidden = hidden
        self.total_timesteps = total_timesteps
        self.rollout_length = rollout_length
        self.ppo_epochs = ppo_epochs
        self.minibatch_size = minibatch_size
        self.policy_lr = policy_lr
        self.value_lr = value_lr
        self.kappa = kappa
        self.entropy_coef = entropy_coef
        self.eval_interval = eval_interval
        self.eval_episodes = eval_episodes
        self.random_state = random_state

    def _experiment(self) -> ExperimentConfig:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        agent = AgentConfig(
            algorithm=self.algorithm,
            gae=GaeParams(self.gamma, self.lam),
            rollout_length=self.rollout_length,
            ppo_epochs=self.ppo_epochs,
            minibatch_size=self.minibatch_size,
            policy_lr=self.policy_lr,
            value_lr=self.value_lr,
            kappa=self.kappa,
            entropy_coef=self.entropy_coef,
        )
        cfg = ExperimentConfig(
            env_name=self.env, env_params=dict(self.env_params or {}), agent=agent,
            n_quantiles=self.n_quantiles, hidden=self.hidden,
            total_timesteps=self.total_timesteps, eval_interval=self.eval_interval,
            eval_episodes=self.eval_episodes, seeds=[int(self.random_state)],
        )
        cfg.validate_budget()
        return cfg

    def fit(self, X=None, y=None):
        cfg = self._experiment()
        run = train_seed(cfg, int(self.random_state))
        self.policy_ = run.learner.policy
        self.value_ = run.learner.value
        self.learning_curve_ = np.array(run.curve, dtype=float).reshape(-1, 3)
        self.diagnostics_ = run.diagnostics
        self.n_features_in_ = self.policy_.mlp.sizes[0]
        return self

    def _states(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} state features, got {X.shape[1]}")
        return X

    def predict(self, X) -> np.ndarray:
        X = self._states(X)
        return approx.action_mean(self.policy_, X)

    def predict_distribution(self, X) -> np.ndarray:
        X = self._states(X)
        return approx.value_forward(self.value_, X)

    def score(self, X=None, y=None, episodes=None) -> float:
        """Mean undiscounted return of the deterministic policy on fresh episodes."""
        check_is_fitted(self)
        env = make_env(self.env, **dict(self.env_params or {}))
        mean, _ = evaluate_policy(env, lambda obs: approx.action_mean(self.policy_, obs),
                                  episodes=episodes or self.eval_episodes,
                                  seed=int(self.random_state) + 7)
        return mean
