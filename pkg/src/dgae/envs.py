"""Seedable desk-scale environments and exact return-distribution oracles.

Two environments:

* :class:`ChainMDP` - a K-state corridor whose transition and reward laws are
  exposed so return distributions can be enumerated exactly.
* :class:`PointMassEnv` - a 1-D double integrator with a quadratic cost, used
  as a small continuous-control task. Episodes end by truncation only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.stats

from dgae.quantdist import QuantileDistribution


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    r_min: float
    r_max: float
    max_episode_steps: Optional[int]


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool
    truncated: bool


@dataclass(frozen=True)
class DiscreteLaw:
    atoms: tuple
    probs: tuple

    def __post_init__(self):
        atoms = tuple(float(a) for a in self.atoms)
        probs = tuple(float(p) for p in self.probs)
        if len(atoms) != len(probs) or not atoms:
            raise ValueError("atoms and probs must be nonempty and of equal length")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"probabilities must be nonnegative and sum to 1, got {probs}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    enumerable = True

    @property
    def low(self) -> float:
        return min(self.atoms)

    @property
    def high(self) -> float:
        return max(self.atoms)

    @property
    def mean(self) -> float:
        return float(np.dot(self.atoms, self.probs))

    def sample(self, rng) -> float:
        if len(self.atoms) == 1:
            return self.atoms[0]
        return self.atoms[rng.choice(len(self.atoms), p=self.probs)]


@dataclass(frozen=True)
class TruncatedGaussianLaw:
    loc: float
    std: float
    low: float
    high: float

    enumerable = False

    @property
    def mean(self) -> float:
        a, b = (self.low - self.loc) / self.std, (self.high - self.loc) / self.std
        return float(scipy.stats.truncnorm.mean(a, b, loc=self.loc, scale=self.std))

    def sample(self, rng) -> float:
        a, b = (self.low - self.loc) / self.std, (self.high - self.loc) / self.std
        return float(scipy.stats.truncnorm.rvs(a, b, loc=self.loc, scale=self.std, random_state=rng))


def constant(value) -> DiscreteLaw:
    return DiscreteLaw((value,), (1.0,))


def coin_flip(low, high, p_high=0.5) -> DiscreteLaw:
    return DiscreteLaw((low, high), (1.0 - p_high, p_high))


class ChainMDP:
    """Corridor of ``n_states`` cells; the rightmost cell is terminal.

    The sign of ``action[0]`` picks a direction (``>= 0`` is right); with
    probability ``slip`` the agent moves the opposite way. Moving left from
    cell 0 stays put. Entering the terminal cell pays a draw from
    ``terminal_law``; every other step pays a draw from ``step_law``.
    Observations are one-hot cell indicators.
    """

    def __init__(self, n_states=5, slip=0.0, step_law=None, terminal_law=None,
                 start_state=0, max_episode_steps=None, seed=None):
        if int(n_states) < 2:
            raise ValueError(f"a chain needs at least 2 states, got {n_states}")
        if not 0.0 <= slip <= 1.0:
            raise ValueError(f"slip must be a probability, got {slip}")
        self.n_states = int(n_states)
        self.slip = float(slip)
        self.step_law = step_law if step_law is not None else constant(0.0)
        self.terminal_law = terminal_law if terminal_law is not None else constant(1.0)
        self.start_state = int(start_state)
        self.terminal_state = self.n_states - 1
        self.spec = EnvSpec(
            state_dim=self.n_states,
            action_dim=1,
            r_min=min(self.step_law.low, self.terminal_law.low),
            r_max=max(self.step_law.high, self.terminal_law.high),
            max_episode_steps=max_episode_steps,
        )
        self.rng = np.random.default_rng(seed)
        self.position = self.start_state
        self.t = 0

    def observe(self, cell=None) -> np.ndarray:
        obs = np.zeros(self.n_states)
        obs[self.position if cell is None else cell] = 1.0
        return obs

    def reset(self, seed=None, state=None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if state is None:
            cell = self.start_state
        elif np.ndim(state) == 0:
            cell = int(state)
        else:
            cell = int(np.argmax(state))
        if not 0 <= cell < self.terminal_state:
            raise ValueError(f"start cell {cell} is not a non-terminal cell")
        self.position = cell
        self.t = 0
        return self.observe()

    def p_move_right(self, p_right_intended: float) -> float:
        return p_right_intended * (1.0 - self.slip) + (1.0 - p_right_intended) * self.slip

    def step(self, action) -> StepResult:
        right = float(np.asarray(action, dtype=float).reshape(-1)[0]) >= 0.0
        if self.slip > 0.0 and self.rng.random() < self.slip:
            right = not right
        self.position = min(self.position + 1, self.terminal_state) if right else max(self.position - 1, 0)
        self.t += 1
        done = self.position == self.terminal_state
        reward = (self.terminal_law if done else self.step_law).sample(self.rng)
        limit = self.spec.max_episode_steps
        truncated = (not done) and limit is not None and self.t >= limit
        return StepResult(self.observe(), float(reward), done, truncated)


class TabularChainPolicy:
    """Fixed stochastic chain policy: intend 'right' with probability ``p_right[cell]``."""

    def __init__(self, p_right):
        self.p_right = np.asarray(p_right, dtype=float)

    def __call__(self, obs, rng) -> np.ndarray:
        cell = int(np.argmax(obs))
        return np.array([1.0 if rng.random() < self.p_right[cell] else -1.0])


def _p_right_table(env: ChainMDP, policy_table) -> np.ndarray:
    p = np.broadcast_to(np.asarray(policy_table, dtype=float), (env.n_states,))
    return np.array([env.p_move_right(pi) for pi in p])


def default_horizon(env: ChainMDP, gamma: float, tol: float = 1e-9) -> int:
    """Steps after which the discounted tail is below ``tol``."""
    if gamma >= 1.0:
        raise ValueError("gamma = 1 needs an explicit horizon")
    bound = max(abs(env.spec.r_min), abs(env.spec.r_max), 1e-12)
    return int(np.ceil(np.log(tol * (1.0 - gamma) / bound) / np.log(gamma))) + 1


def exact_return_atoms(env: ChainMDP, policy_table, gamma, start, horizon=None,
                       max_outcomes=200_000):
    """Enumerate the discounted-return law from cell ``start``.

    Outcomes with equal (cell, partial return) are merged. Paths still alive
    after ``horizon`` steps contribute their truncated partial return.
    Returns ``(atoms, probs)`` sorted by atom.
    """
    for law in (env.step_law, env.terminal_law):
        if not law.enumerable:
            raise ValueError("exact enumeration needs discrete reward laws")
    if horizon is None:
        horizon = default_horizon(env, gamma)
    p_right = _p_right_table(env, policy_table)
    finished: dict = {}
    frontier = {(int(start), 0.0): 1.0}
    discount = 1.0
    for _ in range(horizon):
        nxt: dict = {}
        for (cell, ret), p in frontier.items():
            for dest, pm in ((min(cell + 1, env.terminal_state), p_right[cell]),
                             (max(cell - 1, 0), 1.0 - p_right[cell])):
                if pm == 0.0:
                    continue
                terminal = dest == env.terminal_state
                law = env.terminal_law if terminal else env.step_law
                for r, pr in zip(law.atoms, law.probs):
                    if pr == 0.0:
                        continue
                    value = ret + discount * r
                    key = round(value, 12)
                    mass = p * pm * pr
                    if terminal:
                        finished[key] = finished.get(key, 0.0) + mass
                    else:
                        k2 = (dest, key)
                        nxt[k2] = nxt.get(k2, 0.0) + mass
        if len(nxt) + len(finished) > max_outcomes:
            raise RuntimeError(
                f"outcome count exceeded {max_outcomes}; shrink the horizon or the reward laws"
            )
        frontier = nxt
        discount *= gamma
        if not frontier:
            break
    for (_, ret), p in frontier.items():
        finished[ret] = finished.get(ret, 0.0) + p
    atoms = np.array(sorted(finished))
    probs = np.array([finished[a] for a in atoms])
    return atoms, probs


def exact_return_distribution(env: ChainMDP, policy_table, gamma, horizon=None,
                              n_quantiles=64, max_outcomes=200_000) -> list:
    """Midpoint-quantile return distribution for every cell.

    The terminal cell gets the zero distribution.
    """
    dists = []
    for cell in range(env.n_states):
        if cell == env.terminal_state:
            dists.append(QuantileDistribution.zeros(n_quantiles))
            continue
        atoms, probs = exact_return_atoms(env, policy_table, gamma, cell, horizon, max_outcomes)
        dists.append(QuantileDistribution.from_atoms(atoms, probs, n_quantiles))
    return dists


def tabular_policy_evaluation(env: ChainMDP, policy_table, gamma) -> np.ndarray:
    """Solve ``V = r_bar + gamma * P V`` over the non-terminal cells."""
    K = env.n_states
    p_right = _p_right_table(env, policy_table)
    n = K - 1
    P = np.zeros((n, n))
    r_bar = np.zeros(n)
    for s in range(n):
        for dest, pm in ((min(s + 1, K - 1), p_right[s]), (max(s - 1, 0), 1.0 - p_right[s])):
            if dest == K - 1:
                r_bar[s] += pm * env.terminal_law.mean
            else:
                r_bar[s] += pm * env.step_law.mean
                P[s, dest] += pm
    V = np.linalg.solve(np.eye(n) - gamma * P, r_bar)
    return np.append(V, 0.0)


class PointMassEnv:
    """Unit mass on a line pushed by a bounded force.

    State ``(x, v)``; action is a force clipped to ``[-max_force, max_force]``.
    Semi-implicit Euler with step ``dt``: ``v += (a + noise) * dt``,
    ``x += v * dt``. Walls at ``+-x_limit`` stop the mass. The reward for a
    step is ``-(x**2 + 0.1 * a**2)`` at the pre-step position, clipped to
    ``[r_min, 0]``. Episodes are truncated after ``max_episode_steps``.
    """

    control_cost = 0.1

    def __init__(self, noise_std=0.05, dt=0.1, max_force=1.0, x_limit=4.0,
                 init_position=1.0, init_velocity=0.5, max_episode_steps=200, seed=None):
        if noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        self.noise_std = float(noise_std)
        self.dt = float(dt)
        self.max_force = float(max_force)
        self.x_limit = float(x_limit)
        self.init_position = float(init_position)
        self.init_velocity = float(init_velocity)
        self.spec = EnvSpec(
            state_dim=2,
            action_dim=1,
            r_min=-(self.x_limit**2 + self.control_cost * self.max_force**2),
            r_max=0.0,
            max_episode_steps=int(max_episode_steps),
        )
        self.rng = np.random.default_rng(seed)
        self.state = np.zeros(2)
        self.t = 0

    def reset(self, seed=None, state=None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if state is None:
            x = self.rng.uniform(-self.init_position, self.init_position)
            v = self.rng.uniform(-self.init_velocity, self.init_velocity)
            self.state = np.array([x, v])
        else:
            self.state = np.array(state, dtype=float).reshape(2)
        self.t = 0
        return self.state.copy()

    def step(self, action) -> StepResult:
        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -self.max_force, self.max_force))
        x, v = self.state
        reward = float(np.clip(-(x * x + self.control_cost * a * a), self.spec.r_min, 0.0))
        noise = self.noise_std * self.rng.standard_normal() if self.noise_std > 0 else 0.0
        v = v + (a + noise) * self.dt
        x = x + v * self.dt
        if abs(x) > self.x_limit:
            x = float(np.clip(x, -self.x_limit, self.x_limit))
            v = 0.0
        self.state = np.array([x, v])
        self.t += 1
        truncated = self.t >= self.spec.max_episode_steps
        return StepResult(self.state.copy(), reward, False, truncated)

    def lqr_gain(self) -> np.ndarray:
        """Infinite-horizon LQR feedback gain for the unconstrained dynamics."""
        dt = self.dt
        A = np.array([[1.0, dt], [0.0, 1.0]])
        B = np.array([[dt * dt], [dt]])
        Q = np.diag([1.0, 0.0])
        R = np.array([[self.control_cost]])
        P = scipy.linalg.solve_discrete_are(A, B, Q, R)
        return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A).reshape(-1)


def make_env(name: str, seed=None, **params):
    name = name.lower()
    if name == "pointmass":
        return PointMassEnv(seed=seed, **params)
    if name == "chain":
        params = dict(params)
        if "step_reward" in params:
            params["step_law"] = _parse_law(params.pop("step_reward"))
        if "terminal_reward" in params:
            params["terminal_law"] = _parse_law(params.pop("terminal_reward"))
        return ChainMDP(seed=seed, **params)
    raise ValueError(f"unknown environment {name!r}")


def _parse_law(value):
    """``[a]`` -> constant, ``[a, b]`` -> fair coin, ``[a, b, p]`` -> P(b)=p."""
    if isinstance(value, (DiscreteLaw, TruncatedGaussianLaw)):
        return value
    vals = [float(v) for v in np.atleast_1d(value)]
    if len(vals) == 1:
        return constant(vals[0])
    if len(vals) == 2:
        return coin_flip(vals[0], vals[1])
    if len(vals) == 3:
        return coin_flip(vals[0], vals[1], vals[2])
    raise ValueError(f"cannot interpret reward law {value!r}")
