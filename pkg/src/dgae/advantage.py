"""Distributional TD errors and the exponentially weighted DGAE estimator.

Episode boundaries are handled the way standard GAE handles them: a true
termination bootstraps from the zero distribution, a time-limit truncation
bootstraps from the stored prediction for the final observation, and both
reset the backward recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from dgae import quantdist
from dgae._io import write_csv
from dgae.quantdist import DimensionError, DomainError, QuantileDistribution


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    truncated: bool = False


@dataclass(frozen=True)
class GaeParams:
    """Discount ``gamma`` and trace parameter ``lam``.

    The closed limits ``gamma = 1`` and ``lam in {0, 1}`` are accepted so the
    degenerate cases (pure TD errors, undiscounted sums) can be expressed.
    """

    gamma: float = 0.99
    lam: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise DomainError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError(f"lambda must lie in [0, 1], got {self.lam}")


class BufferStateError(RuntimeError):
    """The buffer lacks data the requested estimator needs."""


@dataclass
class RolloutBuffer:
    """T transitions plus value predictions for states ``s_0 .. s_T``.

    ``value_quantiles[T]`` is the bootstrap prediction for the state following
    the last transition. For a step that ended by truncation, the prediction
    for its real final observation lives in ``final_quantiles[t]`` because
    ``value_quantiles[t + 1]`` already belongs to the next episode.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    value_quantiles: np.ndarray
    truncated: Optional[np.ndarray] = None
    final_quantiles: dict = field(default_factory=dict)
    scalar_values: Optional[np.ndarray] = None
    final_scalar_values: dict = field(default_factory=dict)
    log_probs: Optional[np.ndarray] = None
    next_states: Optional[np.ndarray] = None
    bootstrap_state: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float).reshape(-1)
        T = self.rewards.size
        self.states = np.asarray(self.states, dtype=float).reshape(T, -1)
        self.actions = np.asarray(self.actions, dtype=float).reshape(T, -1)
        self.dones = np.asarray(self.dones, dtype=bool).reshape(-1)
        if self.truncated is None:
            self.truncated = np.zeros(T, dtype=bool)
        self.truncated = np.asarray(self.truncated, dtype=bool).reshape(-1)
        vq = np.asarray(self.value_quantiles, dtype=float)
        self.value_quantiles = vq.reshape(vq.shape[0], -1)
        if self.value_quantiles.shape[0] != T + 1:
            raise ValueError(
                f"need T+1={T + 1} value distributions, got {self.value_quantiles.shape[0]}"
            )
        if self.dones.size != T or self.truncated.size != T:
            raise ValueError("done/truncated flags must have one entry per transition")
        if self.scalar_values is not None:
            self.scalar_values = np.asarray(self.scalar_values, dtype=float).reshape(-1)
            if self.scalar_values.size != T + 1:
                raise ValueError("scalar_values must have T+1 entries")
        n = self.value_quantiles.shape[1]
        for t, fq in self.final_quantiles.items():
            if np.asarray(fq).shape[-1] != n:
                raise DimensionError(f"final_quantiles[{t}] has wrong quantile count")

    @classmethod
    def from_transitions(
        cls,
        transitions: Sequence[Transition],
        value_dists: Sequence[QuantileDistribution],
        scalar_values=None,
        final_dists: Optional[dict] = None,
    ) -> "RolloutBuffer":
        if len(value_dists) != len(transitions) + 1:
            raise ValueError("value_dists length must be transitions length + 1")
        ns = {d.n for d in value_dists}
        if len(ns) != 1:
            raise DimensionError(f"mixed quantile counts in value_dists: {sorted(ns)}")
        return cls(
            states=np.array([tr.state for tr in transitions], dtype=float),
            actions=np.array([tr.action for tr in transitions], dtype=float),
            rewards=np.array([tr.reward for tr in transitions], dtype=float),
            dones=np.array([tr.done for tr in transitions], dtype=bool),
            truncated=np.array([tr.truncated for tr in transitions], dtype=bool),
            value_quantiles=np.stack([d.values for d in value_dists]),
            final_quantiles={t: d.values for t, d in (final_dists or {}).items()},
            scalar_values=scalar_values,
            next_states=np.array([tr.next_state for tr in transitions], dtype=float),
        )

    def __len__(self) -> int:
        return self.rewards.size

    @property
    def n_quantiles(self) -> int:
        return self.value_quantiles.shape[1]

    @property
    def transitions(self) -> list:
        nxt = self.next_states if self.next_states is not None else np.roll(self.states, -1, 0)
        return [
            Transition(self.states[t], self.actions[t], float(self.rewards[t]),
                       nxt[t], bool(self.dones[t]), bool(self.truncated[t]))
            for t in range(len(self))
        ]

    @property
    def value_dists(self) -> list:
        return [QuantileDistribution(v) for v in self.value_quantiles]

    @property
    def boundaries(self) -> np.ndarray:
        """Steps after which the recursion restarts (termination or truncation)."""
        return self.dones | self.truncated

    def next_quantiles(self) -> np.ndarray:
        """Bootstrap quantiles for each step, zeroed at true terminations."""
        nxt = self.value_quantiles[1:].copy()
        for t, fq in self.final_quantiles.items():
            if self.truncated[t]:
                nxt[t] = fq
        nxt[self.dones] = 0.0
        return nxt

    def next_scalar_values(self) -> np.ndarray:
        if self.scalar_values is None:
            raise BufferStateError("buffer carries no scalar value predictions")
        nxt = self.scalar_values[1:].copy()
        for t, v in self.final_scalar_values.items():
            if self.truncated[t]:
                nxt[t] = v
        nxt[self.dones] = 0.0
        return nxt


def distributional_td_error(reward, g_next, g_cur, gamma, done=False) -> float:
    """One-step distributional TD error ``r + d(gamma * G(s'), G(s))``."""
    if not 0.0 < gamma <= 1.0:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    g_next = np.asarray(getattr(g_next, "values", g_next), dtype=float)
    g_cur = np.asarray(getattr(g_cur, "values", g_cur), dtype=float)
    if g_next.shape[-1] != g_cur.shape[-1]:
        raise DimensionError(f"quantile counts differ: {g_next.shape[-1]} vs {g_cur.shape[-1]}")
    bootstrap = np.zeros_like(g_cur) if done else quantdist.scale(g_next, gamma)
    return float(reward) + quantdist.directional_metric(bootstrap, g_cur)


def td_errors(buffer: RolloutBuffer, gamma: float) -> np.ndarray:
    """Distributional TD error for every step of the buffer."""
    bootstrap = quantdist.scale(buffer.next_quantiles(), gamma)
    return buffer.rewards + quantdist.directional_metric(bootstrap, buffer.value_quantiles[:-1])


def scalar_td_errors(buffer: RolloutBuffer, gamma: float) -> np.ndarray:
    return buffer.rewards + gamma * buffer.next_scalar_values() - buffer.scalar_values[:-1]


def n_step_advantage(buffer: RolloutBuffer, start: int, n: int, gamma: float) -> float:
    """n-step advantage from ``start``: discounted rewards plus a directional
    comparison of the ``gamma**n``-scaled bootstrap against ``G(s_start)``."""
    T = len(buffer)
    if n < 1 or start < 0 or start + n > T:
        raise IndexError(f"window [{start}, {start + n}) outside buffer of length {T}")
    window = buffer.boundaries[start:start + n - 1]
    if window.any():
        raise ValueError("episode boundary inside the n-step window")
    last = start + n - 1
    discounts = gamma ** np.arange(n)
    reward_sum = float(np.dot(discounts, buffer.rewards[start:start + n]))
    if buffer.dones[last]:
        bootstrap = np.zeros(buffer.n_quantiles)
    elif buffer.truncated[last] and last in buffer.final_quantiles:
        bootstrap = np.asarray(buffer.final_quantiles[last], dtype=float)
    else:
        bootstrap = buffer.value_quantiles[start + n]
    return reward_sum + quantdist.directional_metric(
        quantdist.scale(bootstrap, gamma**n), buffer.value_quantiles[start]
    )


def _discounted_backward(deltas: np.ndarray, boundaries: np.ndarray, decay: float) -> np.ndarray:
    adv = np.empty_like(deltas)
    running = 0.0
    for t in range(deltas.size - 1, -1, -1):
        if boundaries[t]:
            running = 0.0
        running = deltas[t] + decay * running
        adv[t] = running
    return adv


def dgae(buffer: RolloutBuffer, params: GaeParams, return_deltas: bool = False):
    """Distributional GAE: ``A_t = sum_k (gamma * lam)**k * delta_{t+k}``.

    Computed by the backward recursion ``A_t = delta_t + gamma*lam*A_{t+1}``,
    restarted at every episode boundary.
    """
    deltas = td_errors(buffer, params.gamma)
    adv = _discounted_backward(deltas, buffer.boundaries, params.gamma * params.lam)
    return (adv, deltas) if return_deltas else adv


def scalar_gae(buffer: RolloutBuffer, params: GaeParams, return_deltas: bool = False):
    """Classic GAE over ``buffer.scalar_values`` with the same truncation rules."""
    if buffer.scalar_values is None:
        raise BufferStateError("scalar_gae needs scalar_values on the buffer")
    deltas = scalar_td_errors(buffer, params.gamma)
    adv = _discounted_backward(deltas, buffer.boundaries, params.gamma * params.lam)
    return (adv, deltas) if return_deltas else adv


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    return (adv - adv.mean()) / (adv.std() + eps)


def write_advantage_csv(path, buffer: RolloutBuffer, deltas, advantages):
    rows = [
        (t, float(buffer.rewards[t]), float(deltas[t]), float(advantages[t]))
        for t in range(len(buffer))
    ]
    write_csv(path, ["step", "reward", "delta", "advantage"], rows)
