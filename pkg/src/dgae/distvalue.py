"""Distributional Bellman targets and the quantile-Huber regression loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dgae import quantdist
from dgae.quantdist import DimensionError, DomainError, QuantileDistribution, midpoint_fractions


@dataclass(frozen=True)
class QuantileHuberParams:
    kappa: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise DomainError(f"kappa must be positive, got {self.kappa}")


def bellman_target(reward, g_next, gamma, done=False) -> QuantileDistribution:
    """``r + gamma * G(s')`` quantile-wise, or the constant ``r`` at a terminal."""
    g_next = g_next if isinstance(g_next, QuantileDistribution) else QuantileDistribution(g_next)
    if done:
        return QuantileDistribution.point_mass(reward, g_next.n)
    return quantdist.shift(quantdist.scale(g_next, gamma), float(reward))


def bellman_targets(rewards, next_quantiles, gamma, dones) -> np.ndarray:
    """Batched :func:`bellman_target` over rows of ``next_quantiles``."""
    rewards = np.asarray(rewards, dtype=float)
    nxt = np.asarray(next_quantiles, dtype=float)
    live = ~np.asarray(dones, dtype=bool)
    return rewards[:, None] + (gamma * nxt) * live[:, None]


_CHUNK_ELEMS = 32768


def huber(u, kappa):
    a = np.abs(u)
    return np.where(a <= kappa, 0.5 * u * u, kappa * (a - 0.5 * kappa))


def quantile_huber_loss(predicted, target, fractions=None, params=QuantileHuberParams()):
    """Quantile-Huber loss and its gradient with respect to ``predicted``.

    ``loss = 1/N**2 * sum_ij |q_i - 1{u_ij < 0}| * huber_kappa(u_ij)`` with
    ``u_ij = target[j] - predicted[i]``. Two-dimensional inputs are treated
    as a batch: the loss is averaged over rows and the gradient has the
    input's shape.

    ``params.kappa = inf`` selects the pure squared branch.
    """
    pred = np.asarray(getattr(predicted, "values", predicted), dtype=float)
    targ = np.asarray(getattr(target, "values", target), dtype=float)
    single = pred.ndim == 1
    pred, targ = np.atleast_2d(pred), np.atleast_2d(targ)
    if pred.shape != targ.shape:
        raise DimensionError(f"predicted {pred.shape} and target {targ.shape} differ")
    B, N = pred.shape
    q = midpoint_fractions(N) if fractions is None else np.asarray(fractions, dtype=float)
    if q.shape != (N,):
        raise DimensionError(f"need {N} fractions, got {q.shape}")
    kappa = params.kappa

    scale = 1.0 / (N * N * B)
    per_row = np.empty(B)
    grad = np.empty_like(pred)
    # row chunks keep the (rows, N, N) temporaries cache-sized
    step = max(1, _CHUNK_ELEMS // (N * N))
    for s in range(0, B, step):
        u = targ[s:s + step, None, :] - pred[s:s + step, :, None]  # (rows, i, j)
        weight = np.where(u < 0, 1.0 - q[None, :, None], q[None, :, None])
        slope = u if np.isinf(kappa) else np.clip(u, -kappa, kappa)
        # slope * (u - slope / 2) equals huber_kappa(u) on both branches
        per_row[s:s + step] = np.einsum("bij,bij,bij->b", weight, slope, u - 0.5 * slope)
        grad[s:s + step] = -np.einsum("bij,bij->bi", weight, slope)
    loss = float(per_row.sum() * scale)
    grad *= scale
    return (loss, grad[0]) if single else (loss, grad)


def evaluate_policy_distribution(env, policy, state, gamma, horizon, samples,
                                 n_quantiles=None, seed=0) -> QuantileDistribution:
    """Monte Carlo estimate of the return distribution from ``state``.

    ``policy(obs, rng)`` returns an action. Each of ``samples`` rollouts runs
    until termination, truncation or ``horizon`` steps; the discounted
    returns are turned into an order-statistic quantile representation.
    """
    env_seq, pol_seq = np.random.SeedSequence(seed).spawn(2)
    pol_rng = np.random.default_rng(pol_seq)
    returns = np.empty(samples)
    env.reset(seed=env_seq, state=state)
    for k in range(samples):
        obs = env.reset(state=state)
        total, disc = 0.0, 1.0
        for _ in range(horizon):
            res = env.step(policy(obs, pol_rng))
            total += disc * res.reward
            disc *= gamma
            obs = res.next_state
            if res.done or res.truncated:
                break
        returns[k] = total
    return QuantileDistribution.from_samples(returns, n_quantiles)
