import numpy as np
import pytest

from dgae import approx, checks
from dgae.approx import GaussianPolicy, MlpParams


def zero_mlp(sizes):
    return MlpParams([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                     [np.zeros(b) for b in sizes[1:]])


class TestMlp:
    def test_zero_params_give_zero_output(self):
        out = approx.forward(zero_mlp([3, 5, 5, 2]), np.ones((4, 3)))
        np.testing.assert_array_equal(out, np.zeros((4, 2)))

    def test_init_is_seeded(self):
        a = approx.init_mlp([3, 8, 2], np.random.default_rng(7))
        b = approx.init_mlp([3, 8, 2], np.random.default_rng(7))
        x = np.random.default_rng(0).normal(size=(5, 3))
        assert approx.forward(a, x).tobytes() == approx.forward(b, x).tobytes()

    def test_zero_output_grad(self):
        params = approx.init_mlp([3, 8, 2], np.random.default_rng(0))
        grads = approx.backward(params, np.ones((2, 3)), np.zeros((2, 2)))
        assert all(np.all(g == 0) for g in grads.arrays())

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            MlpParams([np.zeros((3, 4)), np.zeros((5, 2))], [np.zeros(4), np.zeros(2)])

    def test_single_vector_input(self):
        params = approx.init_mlp([3, 4, 2], np.random.default_rng(0))
        x = np.array([0.1, -0.2, 0.3])
        np.testing.assert_array_equal(approx.forward(params, x), approx.forward(params, x[None])[0])

    def test_input_gradient(self):
        rng = np.random.default_rng(2)
        params = approx.init_mlp([3, 6, 2], rng)
        x = rng.normal(size=(1, 3))
        gout = rng.normal(size=(1, 2))
        _, gx = approx.backward(params, x, gout, return_input_grad=True)
        (fd,) = checks.central_diff(lambda: float(np.sum(gout * approx.forward(params, x))), [x])
        assert checks.rel_err(gx, fd) < 1e-6

    def test_backward_finite_differences(self):
        ok, worst = checks.check_mlp_gradient(25)
        assert ok, worst


class TestValueHead:
    def test_outputs_sorted(self):
        params = approx.init_mlp([2, 8, 6], np.random.default_rng(0), out_gain=3.0)
        out = approx.value_forward(params, np.random.default_rng(1).normal(size=(10, 2)))
        assert np.all(np.diff(out, axis=1) >= 0)

    def test_gradient_follows_permutation(self):
        params = MlpParams([np.zeros((1, 3))], [np.array([3.0, 1.0, 2.0])])
        grads = approx.value_backward(params, np.zeros((1, 1)), np.array([[10.0, 20.0, 30.0]]))
        # sorted order is (1, 2, 3) = raw indices (1, 2, 0)
        np.testing.assert_array_equal(grads.biases[0], [30.0, 10.0, 20.0])

    def test_loss_path_finite_differences(self):
        ok, worst = checks.check_value_path_gradient(25)
        assert ok, worst


class TestGaussianPolicy:
    def test_standard_normal_log_density(self):
        policy = GaussianPolicy(zero_mlp([1, 4, 1]), np.zeros(1))
        logp, _ = approx.log_prob(policy, np.zeros(1), np.zeros(1))
        assert logp == pytest.approx(-0.918938533204673, abs=1e-12)

    def test_mean_gradient_zero_at_mean(self):
        rng = np.random.default_rng(0)
        policy = approx.init_policy(3, 2, 8, rng)
        s = rng.normal(size=3)
        mu = approx.action_mean(policy, s)
        _, grads = approx.log_prob(policy, s, mu)
        # every network gradient flows through d logp / d mu, which vanishes at a = mu
        assert all(np.all(g == 0) for g in grads[:-1])

    def test_log_prob_finite_differences(self):
        ok, worst = checks.check_log_prob_gradient(25)
        assert ok, worst

    def test_log_std_clamped(self):
        policy = approx.init_policy(2, 1, 4, np.random.default_rng(0), log_std_init=-9.0)
        s = np.array([0.5, -0.5])
        _, grads = approx.log_prob(policy, s, np.array([0.3]))
        assert grads[-1][0] == 0.0
        rng = np.random.default_rng(3)
        a = approx.sample_action(policy, s, rng)
        z = np.random.default_rng(3).standard_normal(1)
        assert abs(a - approx.action_mean(policy, s))[0] <= 1e-2 * abs(z[0])

    def test_sampling_is_seeded(self):
        policy = approx.init_policy(2, 2, 4, np.random.default_rng(0))
        draw = lambda: [approx.sample_action(policy, np.zeros(2), r) for r in [np.random.default_rng(5)] * 4]
        np.testing.assert_array_equal(draw(), draw())

    def test_state_dependent_std_heads(self):
        policy = approx.init_policy(3, 2, 8, np.random.default_rng(0), state_dependent_std=True)
        assert policy.mlp.sizes[-1] == 4 and policy.action_dim == 2
        assert approx.entropy(policy, np.zeros((5, 3))).shape == (5,)

    def test_entropy_closed_form(self):
        policy = GaussianPolicy(zero_mlp([1, 2, 2]), np.array([0.0, np.log(2.0)]))
        expected = 0.5 * 2 * (1 + np.log(2 * np.pi)) + np.log(2.0)
        assert approx.entropy(policy, np.zeros((1, 1)))[0] == pytest.approx(expected)


class TestOptimizer:
    def test_adam_minimises_quadratic(self):
        x = np.array([3.0, -2.0])
        opt = approx.Adam([x], lr=0.05)
        for _ in range(2000):
            opt.step([2 * x])
        np.testing.assert_allclose(x, 0.0, atol=1e-3)

    def test_clip_by_global_norm(self):
        grads, norm = approx.clip_by_global_norm([np.array([3.0]), np.array([4.0])], 1.0)
        assert norm == 5.0
        assert approx.global_norm(grads) == pytest.approx(1.0)
        kept, _ = approx.clip_by_global_norm([np.array([0.3])], 1.0)
        assert kept[0][0] == 0.3


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    policy = approx.init_policy(2, 1, 8, rng, log_std_init=-0.3)
    value = approx.init_mlp([2, 8, 8, 16], rng)
    path = tmp_path / "ck" / "model.npz"
    approx.save_checkpoint(path, policy, value, extra={"seed": 4})
    p2, v2, meta = approx.load_checkpoint(path)
    assert meta["seed"] == 4
    for a, b in zip(policy.arrays() + value.arrays(), p2.arrays() + v2.arrays()):
        assert a.tobytes() == b.tobytes()
    with np.load(path) as archive:
        assert "policy/0" in archive.files and "value/0" in archive.files and "meta" in archive.files
