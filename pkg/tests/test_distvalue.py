import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dgae import checks
from dgae.distvalue import (
    QuantileHuberParams,
    bellman_target,
    bellman_targets,
    evaluate_policy_distribution,
    huber,
    quantile_huber_loss,
)
from dgae.envs import ChainMDP, TabularChainPolicy, coin_flip, constant
from dgae.quantdist import DimensionError, DomainError, QuantileDistribution, midpoint_fractions


def naive_loss(pred, targ, kappa):
    q = midpoint_fractions(len(pred))
    u = targ[None, :] - pred[:, None]
    w = np.abs(q[:, None] - (u < 0))
    return float(np.sum(w * huber(u, kappa)) / len(pred) ** 2)


class TestBellmanTarget:
    def test_scaled_and_shifted(self):
        out = bellman_target(1.0, QuantileDistribution(np.array([2.0, 4.0])), 0.5)
        np.testing.assert_array_equal(out.values, [2.0, 3.0])

    def test_terminal_point_mass(self):
        out = bellman_target(3.0, QuantileDistribution(np.array([-9.0, 9.0])), 0.9, done=True)
        np.testing.assert_array_equal(out.values, [3.0, 3.0])

    def test_heavy_discounting_collapses(self):
        out = bellman_target(2.0, np.array([-1e3, 1e3]), 1e-300)
        np.testing.assert_allclose(out.values, [2.0, 2.0])

    def test_batched_matches_single(self):
        rng = np.random.default_rng(0)
        nxt = np.sort(rng.normal(size=(5, 4)), axis=1)
        r = rng.normal(size=5)
        d = np.array([False, True, False, False, True])
        batch = bellman_targets(r, nxt, 0.9, d)
        for k in range(5):
            np.testing.assert_allclose(batch[k], bellman_target(r[k], nxt[k], 0.9, d[k]).values)


class TestQuantileHuberLoss:
    def test_hand_value(self):
        loss, _ = quantile_huber_loss(np.array([0.0]), np.array([0.5]))
        assert loss == 0.0625

    def test_zero_at_equal_point_masses(self):
        x = np.full(5, 1.7)
        loss, grad = quantile_huber_loss(x, x)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_equal_spread_vectors_still_pay_cross_terms(self):
        # u_ij is nonzero off the diagonal, so equality alone is not a zero of the loss
        x = np.array([-1.0, 0.3, 2.0])
        loss, _ = quantile_huber_loss(x, x)
        assert loss == pytest.approx(naive_loss(x, x, 1.0)) and loss > 0

    def test_kappa_must_be_positive(self):
        with pytest.raises(DomainError):
            QuantileHuberParams(0.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            quantile_huber_loss(np.zeros(2), np.zeros(3))

    def test_infinite_kappa_is_squared(self):
        pred, targ = np.array([0.0, 1.0]), np.array([3.0, -2.0])
        loss, _ = quantile_huber_loss(pred, targ, params=QuantileHuberParams(np.inf))
        q = midpoint_fractions(2)
        u = targ[None, :] - pred[:, None]
        assert loss == pytest.approx(np.sum(np.abs(q[:, None] - (u < 0)) * 0.5 * u * u) / 4)

    @settings(max_examples=100)
    @given(st.integers(1, 8).flatmap(lambda n: st.tuples(
        arrays(float, n, elements=st.floats(-10, 10)), arrays(float, n, elements=st.floats(-10, 10)))),
        st.sampled_from([0.1, 1.0, 3.0]))
    def test_matches_naive_reference(self, pair, kappa):
        pred, targ = pair
        loss, _ = quantile_huber_loss(pred, targ, params=QuantileHuberParams(kappa))
        assert loss == pytest.approx(naive_loss(pred, targ, kappa), rel=1e-12, abs=1e-15)

    def test_batch_is_row_average(self):
        rng = np.random.default_rng(4)
        pred, targ = rng.normal(size=(300, 7)), rng.normal(size=(300, 7))
        loss, grad = quantile_huber_loss(pred, targ)
        rows = [quantile_huber_loss(p, t) for p, t in zip(pred, targ)]
        assert loss == pytest.approx(np.mean([r[0] for r in rows]), rel=1e-12)
        np.testing.assert_allclose(grad, np.stack([r[1] for r in rows]) / 300, rtol=1e-12)

    def test_gradient_finite_differences(self):
        ok, worst = checks.check_huber_gradient(30)
        assert ok, worst

    def test_gradient_is_clipped_residual(self):
        # a single quantile far below a single target: slope saturates at kappa
        _, g = quantile_huber_loss(np.array([0.0]), np.array([10.0]), params=QuantileHuberParams(2.0))
        assert g[0] == -0.5 * 2.0

    def test_minimiser_tracks_quantiles(self):
        # two well-separated atoms: gradient descent settles on the midpoint quantiles
        target = QuantileDistribution.from_atoms([-5.0, 5.0], [0.25, 0.75], 4).values
        pred = np.zeros(4)
        for _ in range(4000):
            _, g = quantile_huber_loss(pred, target, params=QuantileHuberParams(0.01))
            pred -= 40.0 * g
        np.testing.assert_allclose(np.sort(pred), [-5.0, 5.0, 5.0, 5.0], atol=0.05)


class TestPolicyDistribution:
    def test_deterministic_chain_is_point_mass(self):
        env = ChainMDP(n_states=4, step_law=constant(-1.0), terminal_law=constant(5.0))
        dist = evaluate_policy_distribution(env, TabularChainPolicy([1.0] * 4), 0, 0.9, 50, 20, 8)
        np.testing.assert_allclose(dist.values, -1.0 - 0.9 + 0.81 * 5.0)

    def test_coin_flip_two_atoms(self):
        env = ChainMDP(n_states=2, terminal_law=coin_flip(-1.0, 1.0))
        dist = evaluate_policy_distribution(env, TabularChainPolicy([1.0, 1.0]), 0, 1.0, 5, 4000, 4, seed=3)
        np.testing.assert_array_equal(dist.values, [-1.0, -1.0, 1.0, 1.0])
