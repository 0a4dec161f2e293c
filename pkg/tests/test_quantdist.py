import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dgae.quantdist import (
    DimensionError,
    DomainError,
    QuantileDistribution,
    directional_metric,
    mean,
    midpoint_fractions,
    scale,
    shift,
    wasserstein_p,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


@st.composite
def dist_pairs(draw, max_n=16):
    n = draw(st.integers(1, max_n))
    f = np.sort(draw(arrays(float, n, elements=finite)))
    g = np.sort(draw(arrays(float, n, elements=finite)))
    return QuantileDistribution(f), QuantileDistribution(g)


def qd(*values):
    return QuantileDistribution(np.array(values, dtype=float))


class TestConstruction:
    def test_midpoint_fractions(self):
        np.testing.assert_allclose(midpoint_fractions(4), [0.125, 0.375, 0.625, 0.875])

    def test_rejects_unsorted(self):
        with pytest.raises(DomainError):
            qd(2.0, 1.0)

    def test_rejects_nan_and_empty(self):
        with pytest.raises(DomainError):
            qd(0.0, np.nan)
        with pytest.raises(DomainError):
            QuantileDistribution(np.array([]))

    def test_values_are_read_only(self):
        F = qd(1.0, 2.0)
        with pytest.raises(ValueError):
            F.values[0] = 5.0

    def test_from_samples_order_statistics(self):
        F = QuantileDistribution.from_samples(np.arange(100.0), n=4)
        # ceil(q * M) - 1 picks the inverse-CDF sample at each midpoint fraction
        np.testing.assert_array_equal(F.values, [12.0, 37.0, 62.0, 87.0])

    def test_from_atoms_two_point(self):
        F = QuantileDistribution.from_atoms([-1.0, 1.0], [0.5, 0.5], n=4)
        np.testing.assert_array_equal(F.values, [-1.0, -1.0, 1.0, 1.0])

    def test_csv_line_round_trip(self):
        F = qd(-0.1, 1 / 3, 2.5e10)
        assert QuantileDistribution.from_csv_line(F.to_csv_line()) == F


class TestDirectionalMetric:
    def test_point_masses(self):
        assert directional_metric(qd(3.0), qd(5.0)) == -2.0

    def test_four_quantiles(self):
        assert directional_metric(qd(1, 2, 3, 4), qd(2, 3, 4, 5)) == -1.0

    def test_identity(self):
        F = qd(-3.0, 0.5, 7.0)
        assert directional_metric(F, F) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            directional_metric(qd(1.0), qd(1.0, 2.0))

    def test_accepts_batched_arrays(self):
        F = np.array([[1.0, 3.0], [0.0, 0.0]])
        G = np.array([[0.0, 0.0], [1.0, 1.0]])
        np.testing.assert_array_equal(directional_metric(F, G), [2.0, -1.0])

    @given(dist_pairs())
    def test_antisymmetric(self, pair):
        F, G = pair
        assert directional_metric(F, G) == -directional_metric(G, F)

    @given(dist_pairs())
    def test_bounded_by_w1(self, pair):
        F, G = pair
        assert abs(directional_metric(F, G)) <= wasserstein_p(F, G, 1) + 1e-9

    @given(dist_pairs())
    def test_equals_difference_of_means(self, pair):
        F, G = pair
        assert directional_metric(F, G) == pytest.approx(mean(F) - mean(G), abs=1e-9)


class TestScaleShift:
    @pytest.mark.parametrize("values, eta, expected", [
        ([1, 2, 3], 0.5, [0.5, 1, 1.5]),
        ([-1, 0, 2], 1.0, [-1, 0, 2]),
        ([10], 0.9, [9]),
    ])
    def test_scale_examples(self, values, eta, expected):
        np.testing.assert_allclose(scale(qd(*values), eta).values, expected, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("eta", [0.0, -0.5])
    def test_scale_rejects_nonpositive(self, eta):
        with pytest.raises(DomainError):
            scale(qd(1.0), eta)

    @pytest.mark.parametrize("values, c, expected", [
        ([1, 2], 3.0, [4, 5]),
        ([0], 0.0, [0]),
        ([-2, 1], -1.0, [-3, 0]),
    ])
    def test_shift_examples(self, values, c, expected):
        np.testing.assert_array_equal(shift(qd(*values), c).values, expected)

    def test_shift_rejects_inf(self):
        with pytest.raises(DomainError):
            shift(qd(1.0), np.inf)

    @given(dist_pairs(), st.floats(1e-6, 10.0), finite)
    def test_results_stay_sorted(self, pair, eta, c):
        F, _ = pair
        assert np.all(np.diff(scale(F, eta).values) >= 0)
        assert np.all(np.diff(shift(F, c).values) >= 0)


class TestMeanAndWasserstein:
    @pytest.mark.parametrize("values, expected", [([2, 4, 6], 4.0), ([5], 5.0), ([0, 0, 0, 12], 3.0)])
    def test_mean(self, values, expected):
        assert mean(qd(*values)) == expected

    def test_w1_shifted_pair(self):
        assert wasserstein_p(qd(1, 2), qd(2, 3), 1) == 1.0

    def test_w2_point_masses(self):
        assert wasserstein_p(qd(0.0), qd(3.0), 2) == 3.0

    def test_rejects_p_below_one(self):
        with pytest.raises(DomainError):
            wasserstein_p(qd(0.0), qd(1.0), 0.5)

    @settings(max_examples=50)
    @given(dist_pairs(), st.floats(1.0, 4.0))
    def test_is_a_metric(self, pair, p):
        F, G = pair
        assert wasserstein_p(F, F, p) == 0.0
        assert wasserstein_p(F, G, p) == pytest.approx(wasserstein_p(G, F, p))
        assert wasserstein_p(F, G, p) >= 0.0

    @settings(max_examples=50)
    @given(dist_pairs())
    def test_monotone_in_p(self, pair):
        F, G = pair
        assert wasserstein_p(F, G, 1) <= wasserstein_p(F, G, 2) * (1 + 1e-12) + 1e-12
