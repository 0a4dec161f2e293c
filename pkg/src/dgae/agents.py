"""On-policy actor-critic agents with distributional or scalar critics.

``da2c`` and ``dppo`` use a quantile critic and DGAE advantages; ``a2c`` and
``ppo`` are the scalar-critic baselines using classic GAE. Apart from the
critic and the advantage estimator the four share every line of code, so
comparisons isolate the distributional change.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from dgae import advantage, approx
from dgae.advantage import GaeParams, RolloutBuffer
from dgae.distvalue import QuantileHuberParams, bellman_targets, quantile_huber_loss

logger = logging.getLogger(__name__)

ALGORITHMS = ("da2c", "dppo", "a2c", "ppo")


@dataclass
class AgentConfig:
    algorithm: str = "dppo"
    gae: GaeParams = field(default_factory=GaeParams)
    rollout_length: int = 2048
    ppo_clip: float = 0.2
    ppo_epochs: int = 10
    minibatch_size: int = 64
    entropy_coef: float = 0.0
    value_lr: float = 3e-4
    policy_lr: float = 3e-4
    normalize_advantages: Optional[bool] = None
    kappa: float = 1.0
    max_grad_norm: Optional[float] = 0.5
    log_std_init: float = 0.0
    state_dependent_std: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.rollout_length < 2:
            raise ValueError(f"rollout_length must be at least 2, got {self.rollout_length}")
        if not 0.0 < self.ppo_clip < 1.0:
            raise ValueError(f"ppo_clip must lie in (0, 1), got {self.ppo_clip}")
        if self.ppo_epochs < 1 or self.minibatch_size < 1:
            raise ValueError("ppo_epochs and minibatch_size must be positive")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be nonnegative")
        if not (self.value_lr > 0 and self.policy_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.normalize_advantages is None:
            self.normalize_advantages = self.is_ppo
        QuantileHuberParams(self.kappa)

    @property
    def distributional(self) -> bool:
        return self.algorithm in ("da2c", "dppo")

    @property
    def is_ppo(self) -> bool:
        return self.algorithm in ("dppo", "ppo")


class ActorCritic:
    """Policy, critic and their optimizers for one training run."""

    def __init__(self, config: AgentConfig, state_dim, action_dim, hidden=64,
                 n_quantiles=64, rng=None):
        rng = np.random.default_rng(rng)
        self.config = config
        self.n_quantiles = n_quantiles if config.distributional else 1
        self.policy = approx.init_policy(
            state_dim, action_dim, hidden, rng,
            log_std_init=config.log_std_init,
            state_dependent_std=config.state_dependent_std,
        )
        self.value = approx.init_mlp([state_dim, hidden, hidden, self.n_quantiles], rng)
        self.policy_opt = approx.Adam(self.policy.arrays(), lr=config.policy_lr)
        self.value_opt = approx.Adam(self.value.arrays(), lr=config.value_lr)

    def predict_values(self, states) -> np.ndarray:
        """Sorted critic output, shape ``(batch, n_quantiles)``."""
        return approx.value_forward(self.value, np.atleast_2d(states))

    def act(self, obs, rng) -> np.ndarray:
        return approx.sample_action(self.policy, obs, rng)

    def act_deterministic(self, obs) -> np.ndarray:
        return approx.action_mean(self.policy, obs)


def collect_rollout(env, learner: ActorCritic, length, rng, obs=None) -> RolloutBuffer:
    """Run the current policy for ``length`` steps.

    Episodes that end inside the rollout are reset in place. Value
    predictions and behaviour log-probabilities are computed in one batch
    after collection, with the same parameters that chose the actions.
    """
    if obs is None:
        obs = env.reset()
    states, actions, rewards, dones, truncs, next_states = [], [], [], [], [], []
    for _ in range(length):
        a = learner.act(obs, rng)
        res = env.step(a)
        states.append(obs)
        actions.append(a)
        rewards.append(res.reward)
        dones.append(res.done)
        truncs.append(res.truncated)
        next_states.append(res.next_state)
        obs = env.reset() if (res.done or res.truncated) else res.next_state

    states = np.array(states)
    actions = np.array(actions)
    truncs = np.array(truncs, dtype=bool)
    next_states = np.array(next_states)
    trunc_idx = np.flatnonzero(truncs)
    preds = learner.predict_values(np.vstack([states, obs[None, :], next_states[trunc_idx]]))
    T = len(states)
    value_q = preds[: T + 1]
    final_q = {int(t): preds[T + 1 + k] for k, t in enumerate(trunc_idx)}
    buf = RolloutBuffer(
        states=states,
        actions=actions,
        rewards=np.array(rewards),
        dones=np.array(dones, dtype=bool),
        truncated=truncs,
        value_quantiles=value_q,
        final_quantiles=final_q,
        log_probs=approx.log_probs(learner.policy, states, actions),
        next_states=next_states,
    )
    if not learner.config.distributional:
        buf.scalar_values = value_q[:, 0].copy()
        buf.final_scalar_values = {t: float(q[0]) for t, q in final_q.items()}
    buf.bootstrap_state = obs
    return buf


def compute_advantages(buffer: RolloutBuffer, config: AgentConfig):
    """DGAE for the distributional agents, scalar GAE for the baselines."""
    if config.distributional:
        return advantage.dgae(buffer, config.gae)
    return advantage.scalar_gae(buffer, config.gae)


def value_targets(buffer: RolloutBuffer, config: AgentConfig) -> np.ndarray:
    """Fixed one-step Bellman targets, shape ``(T, n_quantiles)``."""
    return bellman_targets(buffer.rewards, buffer.next_quantiles(), config.gae.gamma, buffer.dones)


def value_loss_and_grad(learner: ActorCritic, states, targets):
    pred, cache = approx.value_forward(learner.value, states, return_cache=True)
    if learner.config.distributional:
        loss, dpred = quantile_huber_loss(pred, targets, params=QuantileHuberParams(learner.config.kappa))
    else:
        u = targets - pred
        loss = float(0.5 * np.mean(u * u))
        dpred = -u / u.shape[0]
    grads = approx.value_backward(learner.value, states, dpred, cache)
    return loss, grads.arrays()


def clipped_surrogate(logp_new, logp_old, adv, clip):
    """Clipped surrogate objective and its derivative with respect to ``logp_new``.

    Returns ``(objective, dobj_dlogp, clip_fraction)``. A sample whose ratio
    left the band in the direction its advantage pushes contributes nothing.
    """
    ratio = np.exp(logp_new - logp_old)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    obj = np.minimum(ratio * adv, clipped * adv)
    saturated = ((adv > 0) & (ratio > 1.0 + clip)) | ((adv < 0) & (ratio < 1.0 - clip))
    B = adv.shape[0]
    d_logp = np.where(saturated, 0.0, adv * ratio) / B
    return float(obj.mean()), d_logp, float(np.mean(np.abs(ratio - 1.0) > clip))


def _check_finite(name, value, diag):
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite {name} ({value}); diagnostics so far: {diag}")


def _policy_step(learner: ActorCritic, states, actions, dlogp):
    cfg = learner.config
    logp, grads = approx.policy_grad(learner.policy, states, actions, dlogp, cfg.entropy_coef)
    grads, norm = approx.clip_by_global_norm(grads, cfg.max_grad_norm)
    learner.policy_opt.step([-g for g in grads])
    return logp, norm


def _value_step(learner: ActorCritic, states, targets):
    loss, grads = value_loss_and_grad(learner, states, targets)
    grads, norm = approx.clip_by_global_norm(grads, learner.config.max_grad_norm)
    learner.value_opt.step(grads)
    return loss, norm


def a2c_update(buffer: RolloutBuffer, learner: ActorCritic) -> dict:
    """One policy-gradient step and one critic step on the whole rollout."""
    cfg = learner.config
    adv = compute_advantages(buffer, cfg)
    diag = {"mean_advantage": float(np.mean(adv))}
    if cfg.normalize_advantages:
        adv = advantage.normalize_advantages(adv)
    T = len(buffer)
    ent = float(np.mean(approx.entropy(learner.policy, buffer.states)))
    policy_obj = float(np.mean(adv * buffer.log_probs)) + cfg.entropy_coef * ent
    _check_finite("policy objective", policy_obj, diag)
    _, diag["policy_grad_norm"] = _policy_step(learner, buffer.states, buffer.actions, adv / T)
    diag["policy_loss"] = -policy_obj

    targets = value_targets(buffer, cfg)
    loss, diag["value_grad_norm"] = _value_step(learner, buffer.states, targets)
    _check_finite("value loss", loss, diag)
    diag["value_loss"] = loss
    return diag


def ppo_update(buffer: RolloutBuffer, learner: ActorCritic, rng) -> dict:
    """``ppo_epochs`` passes of minibatched clipped-surrogate and critic updates."""
    cfg = learner.config
    adv_raw = compute_advantages(buffer, cfg)
    adv = advantage.normalize_advantages(adv_raw) if cfg.normalize_advantages else adv_raw
    targets = value_targets(buffer, cfg)
    old_logp = buffer.log_probs
    T = len(buffer)
    mb = min(cfg.minibatch_size, T)
    p_losses, v_losses, p_norms, v_norms, clip_fracs = [], [], [], [], []
    diag = {"mean_advantage": float(np.mean(adv_raw))}
    for _ in range(cfg.ppo_epochs):
        perm = rng.permutation(T)
        for start in range(0, T, mb):
            idx = perm[start:start + mb]
            stats = {}

            def surrogate_weights(logp_new, idx=idx, stats=stats):
                obj, d_logp, frac = clipped_surrogate(logp_new, old_logp[idx], adv[idx], cfg.ppo_clip)
                stats["obj"], stats["clip"] = obj, frac
                return d_logp

            _, p_norm = _policy_step(learner, buffer.states[idx], buffer.actions[idx], surrogate_weights)
            _check_finite("surrogate objective", stats["obj"], diag)
            v_loss, v_norm = _value_step(learner, buffer.states[idx], targets[idx])
            _check_finite("value loss", v_loss, diag)
            p_losses.append(-stats["obj"])
            clip_fracs.append(stats["clip"])
            v_losses.append(v_loss)
            p_norms.append(p_norm)
            v_norms.append(v_norm)
    diag.update(
        policy_loss=float(np.mean(p_losses)),
        value_loss=float(np.mean(v_losses)),
        policy_grad_norm=float(np.mean(p_norms)),
        value_grad_norm=float(np.mean(v_norms)),
        clip_fraction=float(np.mean(clip_fracs)),
    )
    return diag


def evaluate_policy(env, act, episodes=10, seed=0):
    """Undiscounted return of ``act(obs)`` over ``episodes`` episodes: ``(mean, std)``."""
    env.reset(seed=seed)
    returns = []
    for _ in range(episodes):
        obs = env.reset()
        total = 0.0
        while True:
            res = env.step(act(obs))
            total += res.reward
            obs = res.next_state
            if res.done or res.truncated:
                break
        returns.append(total)
    returns = np.array(returns)
    return float(returns.mean()), float(returns.std())


def random_baseline(env, episodes=10, seed=0, action_seed=0):
    """Uniform random forces over the action box, evaluated like a learner."""
    rng = np.random.default_rng(action_seed)
    high = getattr(env, "max_force", 1.0)
    return evaluate_policy(env, lambda obs: rng.uniform(-high, high, env.spec.action_dim),
                           episodes=episodes, seed=seed)


def lqr_baseline(env, episodes=10, seed=0):
    """Saturated LQR feedback ``a = -K s`` on a point-mass environment."""
    gain = env.lqr_gain()
    return evaluate_policy(env, lambda obs: np.array([-gain @ obs]), episodes=episodes, seed=seed)


@dataclass
class SeedRun:
    seed: int
    curve: list = field(default_factory=list)  # (timesteps, mean_return, std_return)
    diagnostics: list = field(default_factory=list)
    learner: Optional[ActorCritic] = None


EVAL_SEED_OFFSET = 1_000_003


def train_seed(config, seed: int, on_update=None) -> SeedRun:
    """Train one seed of ``config`` (an :class:`~dgae.config.ExperimentConfig`).

    ``on_update(row, run)`` is called after every update with the diagnostics
    row, which lets callers stream artifacts to disk as they arrive.
    """
    from dgae.envs import make_env

    cfg = config.agent
    init_seq, env_seq, act_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(4)
    env = make_env(config.env_name, seed=env_seq, **config.env_params)
    learner = ActorCritic(cfg, env.spec.state_dim, env.spec.action_dim,
                          hidden=config.hidden, n_quantiles=config.n_quantiles,
                          rng=np.random.default_rng(init_seq))
    act_rng = np.random.default_rng(act_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    run = SeedRun(seed=seed, learner=learner)

    def evaluate():
        eval_env = make_env(config.env_name, **config.env_params)
        return evaluate_policy(eval_env, learner.act_deterministic,
                               episodes=config.eval_episodes, seed=seed + EVAL_SEED_OFFSET)

    timesteps, it = 0, 0
    next_eval = config.eval_interval
    obs = None
    n_updates = config.total_timesteps // cfg.rollout_length
    while it < n_updates:
        buf = collect_rollout(env, learner, cfg.rollout_length, act_rng, obs=obs)
        obs = buf.bootstrap_state
        if cfg.is_ppo:
            diag = ppo_update(buf, learner, shuffle_rng)
        else:
            diag = a2c_update(buf, learner)
        del buf  # on-policy: the rollout is never reused
        it += 1
        timesteps += cfg.rollout_length
        eval_mean = float("nan")
        if timesteps >= next_eval or it == n_updates:
            eval_mean, eval_std = evaluate()
            run.curve.append((timesteps, eval_mean, eval_std))
            while next_eval <= timesteps:
                next_eval += config.eval_interval
        row = {
            "iter": it,
            "timesteps": timesteps,
            "policy_loss": diag["policy_loss"],
            "value_loss": diag["value_loss"],
            "mean_advantage": diag["mean_advantage"],
            "mean_return_eval": eval_mean,
        }
        run.diagnostics.append(row)
        if on_update is not None:
            on_update(row, run)
        logger.debug("seed %d iter %d: %s", seed, it, row)
    return run


@dataclass
class LearningCurves:
    runs: dict  # seed -> SeedRun

    @property
    def per_seed(self) -> dict:
        return {s: r.curve for s, r in self.runs.items()}


def train(config) -> LearningCurves:
    """Run every seed of ``config`` sequentially."""
    return LearningCurves({s: train_seed(config, s) for s in config.seeds})


def with_algorithm(config, algorithm: str):
    """Copy of an experiment config with a different agent algorithm."""
    agent = replace(config.agent, algorithm=algorithm, normalize_advantages=None)
    return replace(config, agent=agent)
