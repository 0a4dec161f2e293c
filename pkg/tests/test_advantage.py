import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgae import checks
from dgae._io import read_csv
from dgae.advantage import (
    BufferStateError,
    GaeParams,
    RolloutBuffer,
    Transition,
    dgae,
    distributional_td_error,
    n_step_advantage,
    normalize_advantages,
    scalar_gae,
    td_errors,
    write_advantage_csv,
)
from dgae.quantdist import DimensionError, DomainError, QuantileDistribution


def point_buffer(rewards, values, dones=None, n=1):
    T = len(rewards)
    q = np.repeat(np.asarray(values, dtype=float)[:, None], n, axis=1)
    return RolloutBuffer(states=np.zeros((T, 1)), actions=np.zeros((T, 1)), rewards=rewards,
                         dones=dones if dones is not None else np.zeros(T, bool),
                         value_quantiles=q, scalar_values=np.asarray(values, dtype=float))


class TestTdError:
    def test_point_masses(self):
        assert distributional_td_error(1.0, [2.0], [3.0], 0.5) == -1.0

    def test_terminal_ignores_bootstrap(self):
        assert distributional_td_error(2.0, [123.0], [1.0], 0.9, done=True) == 1.0

    def test_undiscounted_two_quantiles(self):
        assert distributional_td_error(0.0, [0.0, 2.0], [1.0, 1.0], 1.0) == 0.0

    def test_mismatched_n(self):
        with pytest.raises(DimensionError):
            distributional_td_error(0.0, [0.0, 1.0], [0.0], 0.9)

    def test_gamma_domain(self):
        with pytest.raises(DomainError):
            distributional_td_error(0.0, [0.0], [0.0], 1.5)


class TestGaeParams:
    @pytest.mark.parametrize("gamma, lam", [(0.0, 0.5), (1.1, 0.5), (0.9, -0.1), (0.9, 1.5)])
    def test_rejects_out_of_range(self, gamma, lam):
        with pytest.raises(DomainError):
            GaeParams(gamma, lam)

    def test_defaults(self):
        assert GaeParams() == GaeParams(0.99, 0.95)


class TestNStep:
    def test_one_step_is_td_error(self):
        buf = checks.random_buffer(np.random.default_rng(0), internal_boundaries=False)
        for t in range(len(buf)):
            assert n_step_advantage(buf, t, 1, 0.9) == pytest.approx(td_errors(buf, 0.9)[t], abs=1e-12)

    def test_two_steps_zero_values(self):
        buf = point_buffer([1.0, 2.0], [0.0, 0.0, 0.0])
        assert n_step_advantage(buf, 0, 2, 0.5) == 2.0

    def test_window_out_of_range(self):
        buf = point_buffer([1.0, 2.0], [0.0, 0.0, 0.0])
        with pytest.raises(IndexError):
            n_step_advantage(buf, 1, 2, 0.5)

    def test_window_crossing_episode_end(self):
        buf = point_buffer([1.0, 2.0, 3.0], [0.0] * 4, dones=np.array([True, False, False]))
        with pytest.raises(ValueError):
            n_step_advantage(buf, 0, 2, 0.5)


class TestDgae:
    def test_lambda_zero_gives_td_errors(self):
        buf = checks.random_buffer(np.random.default_rng(1))
        np.testing.assert_array_equal(dgae(buf, GaeParams(0.9, 0.0)), td_errors(buf, 0.9))

    def test_single_step(self):
        buf = point_buffer([1.5], [2.0, 4.0])
        np.testing.assert_allclose(dgae(buf, GaeParams(0.5, 0.7)), [1.5 + 2.0 - 2.0])

    def test_scalar_hand_sum(self):
        buf = point_buffer([1.0, 0.0, 0.0], [0.0] * 4, dones=np.array([False, False, True]))
        np.testing.assert_array_equal(scalar_gae(buf, GaeParams(1.0, 1.0)), [1.0, 0.0, 0.0])

    def test_recursion_restarts_after_termination(self):
        buf = point_buffer([1.0, 10.0], [0.0, 0.0, 0.0], dones=np.array([True, False]))
        np.testing.assert_array_equal(dgae(buf, GaeParams(0.9, 0.9)), [1.0, 10.0])

    def test_truncation_bootstraps_from_final_state(self):
        buf = point_buffer([0.0, 0.0], [0.0, 5.0, 9.0], n=2)
        buf.truncated = np.array([True, False])
        buf.final_quantiles = {0: np.array([2.0, 4.0])}
        adv = dgae(buf, GaeParams(0.5, 0.9))
        # the reset-state value (5) must not leak into the truncated step
        assert adv[0] == 0.5 * 3.0 - 0.0

    def test_scalar_gae_requires_scalar_values(self):
        buf = checks.random_buffer(np.random.default_rng(2))
        with pytest.raises(BufferStateError):
            scalar_gae(buf, GaeParams())

    def test_return_deltas(self):
        buf = checks.random_buffer(np.random.default_rng(3))
        adv, deltas = dgae(buf, GaeParams(0.9, 0.5), return_deltas=True)
        np.testing.assert_array_equal(deltas, td_errors(buf, 0.9))
        assert adv.shape == deltas.shape

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_matches_oracles(self, seed):
        rng = np.random.default_rng(seed)
        buf = checks.random_buffer(rng)
        params = GaeParams(float(rng.uniform(0.01, 1.0)), float(rng.uniform(0.0, 1.0)))
        got = dgae(buf, params)
        np.testing.assert_allclose(got, checks.oracle_truncated_sum(buf, params), atol=1e-10)
        if params.lam > 0:
            np.testing.assert_allclose(got, checks.oracle_weighted_average(buf, params), atol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_collapses_to_scalar_gae(self, seed):
        rng = np.random.default_rng(seed)
        buf = checks.random_buffer(rng)
        buf.scalar_values = buf.value_quantiles.mean(axis=1)
        buf.final_scalar_values = {t: float(v.mean()) for t, v in buf.final_quantiles.items()}
        params = GaeParams(0.97, 0.9)
        np.testing.assert_allclose(dgae(buf, params), scalar_gae(buf, params), atol=1e-12)


class TestBuffer:
    def test_from_transitions(self):
        trs = [Transition(np.zeros(2), np.ones(1), 1.0, np.ones(2), False),
               Transition(np.ones(2), np.ones(1), 2.0, np.zeros(2), True)]
        dists = [QuantileDistribution.point_mass(v, 3) for v in (0.0, 1.0, 2.0)]
        buf = RolloutBuffer.from_transitions(trs, dists)
        assert len(buf) == 2 and buf.n_quantiles == 3
        assert buf.transitions[1].done
        assert buf.value_dists[2] == dists[2]

    def test_from_transitions_mixed_n(self):
        trs = [Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), False)]
        with pytest.raises(DimensionError):
            RolloutBuffer.from_transitions(trs, [QuantileDistribution.zeros(1), QuantileDistribution.zeros(2)])

    def test_needs_bootstrap_row(self):
        with pytest.raises(ValueError):
            RolloutBuffer(states=np.zeros((2, 1)), actions=np.zeros((2, 1)), rewards=[0, 0],
                          dones=[False, False], value_quantiles=np.zeros((2, 3)))

    def test_next_quantiles_zero_at_termination(self):
        buf = point_buffer([0.0, 0.0], [1.0, 2.0, 3.0], dones=np.array([True, False]), n=2)
        np.testing.assert_array_equal(buf.next_quantiles(), [[0.0, 0.0], [3.0, 3.0]])


def test_normalize_advantages():
    adv = normalize_advantages(np.array([1.0, 2.0, 3.0, 4.0]))
    assert adv.mean() == pytest.approx(0.0, abs=1e-12)
    assert adv.std() == pytest.approx(1.0, rel=1e-6)


def test_advantage_csv(tmp_path):
    buf = point_buffer([1.0, 2.0], [0.0, 0.0, 0.0])
    adv, deltas = dgae(buf, GaeParams(0.5, 0.5), return_deltas=True)
    path = tmp_path / "adv.csv"
    write_advantage_csv(path, buf, deltas, adv)
    header, rows = read_csv(path)
    assert header == ["step", "reward", "delta", "advantage"]
    assert [float(r[3]) for r in rows] == list(adv)
