"""Oracle and property checks behind ``dgae verify`` and the acceptance tests.

Every check compares a library code path against an oracle written here
directly on raw quantile arrays, so a defect in the library path cannot
cancel out on both sides.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from dgae import advantage, approx, quantdist
from dgae.advantage import GaeParams, RolloutBuffer
from dgae.distvalue import QuantileHuberParams, bellman_target, bellman_targets, quantile_huber_loss
from dgae.envs import ChainMDP, TabularChainPolicy, coin_flip, constant, exact_return_distribution


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def random_buffer(rng, max_T=64, max_N=16, p_done=0.08, p_trunc=0.04, internal_boundaries=True):
    """Random rollout buffer with sorted quantile tables and random boundaries."""
    T = int(rng.integers(1, max_T + 1))
    N = int(rng.integers(1, max_N + 1))
    q = np.sort(rng.normal(0.0, 3.0, size=(T + 1, N)) + rng.normal(0.0, 5.0, size=(T + 1, 1)), axis=1)
    if internal_boundaries:
        dones = rng.random(T) < p_done
        truncs = (rng.random(T) < p_trunc) & ~dones
    else:
        dones = np.zeros(T, dtype=bool)
        truncs = np.zeros(T, dtype=bool)
        if rng.random() < 0.3:
            dones[-1] = True
    finals = {int(t): np.sort(rng.normal(0.0, 3.0, size=N)) for t in np.flatnonzero(truncs)}
    return RolloutBuffer(
        states=np.zeros((T, 1)),
        actions=np.zeros((T, 1)),
        rewards=rng.normal(0.0, 1.0, size=T),
        dones=dones,
        truncated=truncs,
        value_quantiles=q,
        final_quantiles=finals,
    )


def _oracle_bootstrap(buf: RolloutBuffer, t: int) -> np.ndarray:
    if buf.dones[t]:
        return np.zeros(buf.value_quantiles.shape[1])
    if buf.truncated[t] and t in buf.final_quantiles:
        return np.asarray(buf.final_quantiles[t])
    return buf.value_quantiles[t + 1]


def _oracle_deltas(buf: RolloutBuffer, gamma: float) -> np.ndarray:
    Q = buf.value_quantiles
    return np.array([
        buf.rewards[t] + np.mean(gamma * _oracle_bootstrap(buf, t) - Q[t])
        for t in range(len(buf))
    ])


def _segment_end(buf: RolloutBuffer, t: int) -> int:
    """Index one past the last step of the episode segment containing ``t``."""
    b = np.flatnonzero(buf.boundaries[t:])
    return t + int(b[0]) + 1 if b.size else len(buf)


def oracle_truncated_sum(buf: RolloutBuffer, params: GaeParams) -> np.ndarray:
    deltas = _oracle_deltas(buf, params.gamma)
    out = np.empty(len(buf))
    for t in range(len(buf)):
        end = _segment_end(buf, t)
        k = np.arange(end - t)
        out[t] = np.sum((params.gamma * params.lam) ** k * deltas[t:end])
    return out


def oracle_n_step(buf: RolloutBuffer, t: int, gamma: float) -> np.ndarray:
    """All n-step estimators from ``t`` up to the segment end, by definition."""
    end = _segment_end(buf, t)
    M = end - t
    n = np.arange(1, M + 1)
    reward_sums = np.cumsum(gamma ** np.arange(M) * buf.rewards[t:end])
    boot = buf.value_quantiles[t + 1:end + 1].copy()
    boot[-1] = _oracle_bootstrap(buf, end - 1)
    integrand = (gamma**n)[:, None] * boot - buf.value_quantiles[t][None, :]
    return reward_sums + integrand.mean(axis=1)


def oracle_weighted_average(buf: RolloutBuffer, params: GaeParams) -> np.ndarray:
    lam = params.lam
    out = np.empty(len(buf))
    for t in range(len(buf)):
        est = oracle_n_step(buf, t, params.gamma)
        M = est.size
        w = (1.0 - lam) * lam ** np.arange(M)
        w[-1] = lam ** (M - 1)  # the last window absorbs the remaining weight
        out[t] = np.dot(w, est)
    return out


def _random_params(rng) -> GaeParams:
    return GaeParams(float(rng.uniform(0.01, 0.999)), float(rng.uniform(0.01, 0.999)))


def check_dgae_equivalence(n_buffers=1000, seed=0, tol=1e-10) -> CheckResult:
    """Backward-recursion DGAE vs direct truncated sum and n-step weighted average."""
    rng = np.random.default_rng(seed)
    worst_sum = worst_avg = 0.0
    for _ in range(n_buffers):
        buf = random_buffer(rng)
        params = _random_params(rng)
        got = advantage.dgae(buf, params)
        scale_ = 1.0 + np.abs(got).max()
        worst_sum = max(worst_sum, np.abs(got - oracle_truncated_sum(buf, params)).max() / scale_)
        worst_avg = max(worst_avg, np.abs(got - oracle_weighted_average(buf, params)).max() / scale_)
    ok = worst_sum <= tol and worst_avg <= tol
    return CheckResult("dgae_equivalence", ok,
                       f"max err vs sum {worst_sum:.2e}, vs n-step average {worst_avg:.2e} (tol {tol:g})")


def check_scalar_reduction(n_buffers=1000, seed=1, tol=1e-12) -> CheckResult:
    """DGAE equals scalar GAE on the quantile means."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_buffers):
        buf = random_buffer(rng)
        params = _random_params(rng)
        buf.scalar_values = buf.value_quantiles.mean(axis=1)
        buf.final_scalar_values = {t: float(np.mean(v)) for t, v in buf.final_quantiles.items()}
        worst = max(worst, np.abs(advantage.dgae(buf, params) - advantage.scalar_gae(buf, params)).max())
    return CheckResult("scalar_gae_reduction", worst <= tol, f"max |dgae - gae| {worst:.2e} (tol {tol:g})")


def _random_dist(rng, n=None) -> quantdist.QuantileDistribution:
    n = n or int(rng.integers(1, 17))
    return quantdist.QuantileDistribution(np.sort(rng.normal(rng.normal(0, 5), rng.uniform(0.01, 4), n)))


def check_metric_algebra(n_cases=10_000, seed=2, tol=1e-12) -> CheckResult:
    """Scaling/shift identities, antisymmetry, mean collapse and the W1 bound."""
    rng = np.random.default_rng(seed)
    failures = []
    for k in range(n_cases):
        F = _random_dist(rng)
        G = _random_dist(rng, F.n)
        eta = float(rng.uniform(1e-6, 1.0))
        c = float(rng.normal(0, 10))
        sF, hF = quantdist.scale(F, eta), quantdist.shift(F, c)
        d_fg = quantdist.directional_metric(F, G)
        mag = 1.0 + np.abs(F.values).max() + np.abs(G.values).max()
        checks = {
            "scale": np.array_equal(sF.values, eta * F.values),
            "shift": np.array_equal(hF.values, F.values + c),
            "monotone": bool(np.all(np.diff(sF.values) >= 0) and np.all(np.diff(hF.values) >= 0)),
            "antisymmetry": d_fg == -quantdist.directional_metric(G, F),
            "mean_collapse": abs(d_fg - (np.mean(F.values) - np.mean(G.values))) <= tol * mag,
            "w1_bound": abs(d_fg) <= quantdist.wasserstein_p(F, G, 1) + tol * mag,
            "identity": quantdist.directional_metric(F, F) == 0.0,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            failures.append((k, bad))
    detail = f"{n_cases} cases, {len(failures)} failing" + (f"; first {failures[0]}" if failures else "")
    return CheckResult("metric_algebra", not failures, detail)


def check_contraction(n_pairs=1000, seed=3, tol=1e-12) -> CheckResult:
    """``W_p`` of Bellman-mapped pairs equals ``gamma`` times the original distance."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        G1 = _random_dist(rng)
        G2 = _random_dist(rng, G1.n)
        r = float(rng.normal(0, 5))
        gamma = float(rng.uniform(0.01, 0.999))
        p = float(rng.choice([1.0, 2.0, rng.uniform(1.0, 4.0)]))
        lhs = quantdist.wasserstein_p(bellman_target(r, G1, gamma), bellman_target(r, G2, gamma), p)
        rhs = gamma * quantdist.wasserstein_p(G1, G2, p)
        mag = 1.0 + abs(r) + np.abs(G1.values).max() + np.abs(G2.values).max()
        worst = max(worst, abs(lhs - rhs) / mag)
    return CheckResult("gamma_contraction", worst <= tol, f"max scaled err {worst:.2e} (tol {tol:g})")


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def central_diff(f: Callable[[], float], arrays, h=1e-5) -> list:
    """Central finite differences of ``f`` w.r.t. every entry of ``arrays`` (in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f()
            a[i] = old - h
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def _kink_free(pred, targ, kappa, margin):
    u = targ[None, :] - pred[:, None]
    return np.abs(np.abs(u) - kappa).min() > margin and np.abs(u).min() > margin


def check_huber_gradient(n=100, seed=4, tol=1e-5, h=1e-5) -> tuple:
    rng = np.random.default_rng(seed)
    worst, done = 0.0, 0
    while done < n:
        N = int(rng.integers(1, 9))
        kappa = float(rng.choice([0.5, 1.0, 2.0]))
        pred = rng.normal(0, 2, N)
        targ = np.sort(rng.normal(0, 2, N))
        if not _kink_free(pred, targ, kappa, 2 * h):
            continue
        params = QuantileHuberParams(kappa)
        _, g = quantile_huber_loss(pred, targ, params=params)
        (fd,) = central_diff(lambda: quantile_huber_loss(pred, targ, params=params)[0], [pred], h)
        worst = max(worst, rel_err(g, fd))
        done += 1
    return worst <= tol, worst


def _random_mlp(rng, max_dim=8, max_hidden=16):
    sizes = [int(rng.integers(1, max_dim + 1))]
    sizes += [int(rng.integers(2, max_hidden + 1)) for _ in range(int(rng.integers(1, 3)))]
    sizes.append(int(rng.integers(1, max_dim + 1)))
    params = approx.init_mlp(sizes, rng, hidden_gain=1.0, out_gain=1.0)
    for b in params.biases:
        b[:] = rng.normal(0, 0.3, b.shape)
    return params


def check_mlp_gradient(n=100, seed=5, tol=1e-5, h=1e-5) -> tuple:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        params = _random_mlp(rng)
        x = rng.normal(size=(int(rng.integers(1, 4)), params.sizes[0]))
        gout = rng.normal(size=(x.shape[0], params.sizes[-1]))
        grads = approx.backward(params, x, gout).arrays()
        fd = central_diff(lambda: float(np.sum(gout * approx.forward(params, x))), params.arrays(), h)
        worst = max(worst, rel_err(np.concatenate([g.ravel() for g in grads]),
                                   np.concatenate([g.ravel() for g in fd])))
    return worst <= tol, worst


def check_log_prob_gradient(n=100, seed=6, tol=1e-5, h=1e-5) -> tuple:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n):
        sd = int(rng.integers(1, 9))
        ad = int(rng.integers(1, 5))
        policy = approx.init_policy(sd, ad, int(rng.integers(2, 17)), rng,
                                    log_std_init=float(rng.uniform(-1, 0.5)),
                                    state_dependent_std=bool(k % 2))
        for b in policy.mlp.biases:
            b[:] += rng.normal(0, 0.3, b.shape)
        policy.mlp.weights[-1][:] = rng.normal(0, 0.5, policy.mlp.weights[-1].shape)
        s = rng.normal(size=sd)
        a = rng.normal(size=ad)
        _, grads = approx.log_prob(policy, s, a)
        fd = central_diff(lambda: approx.log_prob(policy, s, a)[0], policy.arrays(), h)
        worst = max(worst, rel_err(np.concatenate([g.ravel() for g in grads]),
                                   np.concatenate([g.ravel() for g in fd])))
    return worst <= tol, worst


def check_value_path_gradient(n=100, seed=7, tol=1e-5, h=1e-5) -> tuple:
    """Quantile-Huber loss back through the sorted value head into the weights."""
    rng = np.random.default_rng(seed)
    worst, done = 0.0, 0
    while done < n:
        sd, N = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        params = approx.init_mlp([sd, int(rng.integers(2, 17)), N], rng, out_gain=2.0)
        x = rng.normal(size=(2, sd))
        targ = np.sort(rng.normal(0, 2, size=(2, N)), axis=1)
        pred = approx.value_forward(params, x)
        raw = approx.forward(params, x)
        gaps = np.diff(np.sort(raw, axis=1), axis=1)
        if (gaps.size and gaps.min() < 1e-3) or not all(
                _kink_free(pred[r], targ[r], 1.0, 1e-3) for r in range(2)):
            continue

        def loss():
            return quantile_huber_loss(approx.value_forward(params, x), targ)[0]

        _, dpred = quantile_huber_loss(pred, targ)
        grads = approx.value_backward(params, x, dpred).arrays()
        fd = central_diff(loss, params.arrays(), h)
        worst = max(worst, rel_err(np.concatenate([g.ravel() for g in grads]),
                                   np.concatenate([g.ravel() for g in fd])))
        done += 1
    return worst <= tol, worst


def check_gradients(n=100, tol=1e-5) -> CheckResult:
    parts = {
        "quantile_huber": check_huber_gradient(n, tol=tol),
        "mlp_backward": check_mlp_gradient(n, tol=tol),
        "gaussian_log_prob": check_log_prob_gradient(n, tol=tol),
        "value_loss_path": check_value_path_gradient(n, tol=tol),
    }
    ok = all(p[0] for p in parts.values())
    detail = ", ".join(f"{k} {v[1]:.1e}" for k, v in parts.items()) + f" (tol {tol:g})"
    return CheckResult("gradient_checks", ok, detail)


def acceptance_chain():
    """K=5 chain with unit step cost and a +-10 coin flip on reaching the end."""
    env = ChainMDP(n_states=5, slip=0.1, step_law=constant(-1.0),
                   terminal_law=coin_flip(-10.0, 10.0), seed=0)
    policy = np.array([0.7, 0.6, 0.8, 0.75, 0.5])
    return env, policy


def fit_chain_distribution(env, policy_table, gamma, n_quantiles=64, hidden=64,
                           updates=20_000, batch=64, lr=1e-3, kappa=1.0,
                           n_transitions=40_000, seed=0):
    """Fit a quantile critic to the chain's return law by distributional TD.

    Transitions come from the environment under the fixed tabular policy,
    started uniformly over non-terminal cells; each update draws a minibatch
    and regresses the sorted critic output onto detached Bellman targets
    built from the critic's own next-state prediction.
    Returns the predicted quantiles for every cell (terminal cell last).
    """
    rng = np.random.default_rng(seed)
    policy = TabularChainPolicy(policy_table)
    K = env.n_states
    S, R, D, S2 = [], [], [], []
    env.reset(seed=rng.integers(2**32))
    for _ in range(n_transitions):
        cell = int(rng.integers(0, K - 1))
        obs = env.reset(state=cell)
        res = env.step(policy(obs, rng))
        S.append(obs)
        R.append(res.reward)
        D.append(res.done)
        S2.append(res.next_state)
    S, R, D, S2 = np.array(S), np.array(R), np.array(D), np.array(S2)

    params = approx.init_mlp([K, hidden, hidden, n_quantiles], rng)
    opt = approx.Adam(params.arrays(), lr=lr)
    huber = QuantileHuberParams(kappa)
    for _ in range(updates):
        idx = rng.integers(0, n_transitions, batch)
        targets = bellman_targets(R[idx], approx.value_forward(params, S2[idx]), gamma, D[idx])
        pred, cache = approx.value_forward(params, S[idx], return_cache=True)
        _, dpred = quantile_huber_loss(pred, targets, params=huber)
        opt.step(approx.value_backward(params, S[idx], dpred, cache).arrays())
    return approx.value_forward(params, np.eye(K))


def check_chain_evaluation(updates=20_000, gamma=0.9, seed=0, rel_tol=0.05, kappa=0.1) -> CheckResult:
    # returns here sit on a lattice about one unit apart; a kappa of that
    # size smooths neighbouring atoms together, so a small kappa is used
    env, policy_table = acceptance_chain()
    n = 64
    oracle = exact_return_distribution(env, policy_table, gamma, n_quantiles=n)
    pred = fit_chain_distribution(env, policy_table, gamma, n_quantiles=n, updates=updates,
                                  kappa=kappa, seed=seed)
    bound = rel_tol * (env.spec.r_max - env.spec.r_min)
    w1 = [quantdist.wasserstein_p(pred[c], oracle[c], 1) for c in range(env.n_states - 1)]
    ok = max(w1) < bound
    return CheckResult("chain_policy_evaluation", ok,
                       "W1 per cell " + ", ".join(f"{w:.3f}" for w in w1) + f" (bound {bound:.3f})")


def run_checks(quick=False) -> list:
    """Run the verification suite; ``quick`` shrinks sample counts for smoke runs."""
    scale_ = 10 if quick else 1
    suite = [
        lambda: check_dgae_equivalence(1000 // scale_),
        lambda: check_scalar_reduction(1000 // scale_),
        lambda: check_metric_algebra(10_000 // scale_),
        lambda: check_contraction(1000 // scale_),
        lambda: check_gradients(100 // scale_),
        lambda: check_chain_evaluation(2_000 if quick else 20_000),
    ]
    results = []
    for fn in suite:
        t0 = time.perf_counter()
        res = fn()
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  status  seconds  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:7.2f}  {r.detail}")
    return "\n".join(lines)
