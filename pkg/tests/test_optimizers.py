import numpy as np
import pytest

from dpopt import (AdamConfig, InvalidArgumentError, PrivacyConfig, adam_moments,
                   apply_update, compute_phi, init_state, load_state, noise_bias,
                   noise_std, save_state, sgd_step, update_corrected,
                   update_standard)


def _rand(seed):
    return np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))


def _pcfg(sigma, clip=0.1, batch=256):
    return PrivacyConfig(clip_norm=clip, noise_multiplier=sigma, batch_size=batch,
                         dataset_size=10**5)


class TestSgdStep:
    def test_basic_step(self):
        state = init_state(np.array([1.0]))
        out = sgd_step(state, np.array([1.0]), lr=0.5)
        np.testing.assert_array_equal(out.theta, [0.5])
        assert out.t == 1

    def test_zero_gradient_keeps_theta(self):
        state = init_state(np.array([2.0, -1.0]))
        out = sgd_step(state, np.zeros(2), lr=0.3)
        np.testing.assert_array_equal(out.theta, state.theta)

    def test_two_steps_compose(self):
        state = init_state(np.array([0.0]))
        state = sgd_step(state, np.array([1.0]), lr=1.0)
        state = sgd_step(state, np.array([1.0]), lr=1.0)
        np.testing.assert_array_equal(state.theta, [-2.0])
        assert state.t == 2

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            sgd_step(init_state(np.zeros(2)), np.zeros(3), lr=0.1)


class TestAdamMoments:
    def test_first_step_mhat_identity(self):
        cfg = AdamConfig(beta1=0.9, beta2=0.999)
        state, m_hat, v_hat = adam_moments(init_state(np.zeros(1)), np.array([1.0]), cfg)
        assert state.t == 1
        np.testing.assert_allclose(state.m, [0.1])
        np.testing.assert_allclose(m_hat, [1.0])

    def test_first_step_vhat_is_g_squared(self):
        cfg = AdamConfig(beta1=0.9, beta2=0.99)
        state, m_hat, v_hat = adam_moments(init_state(np.zeros(1)), np.array([2.0]), cfg)
        np.testing.assert_allclose(state.v, [0.04])
        np.testing.assert_allclose(v_hat, [4.0])

    def test_constant_stream_limit(self):
        # geometric-series limit: m_hat -> c and v_hat -> c^2
        cfg = AdamConfig(beta1=0.9, beta2=0.999)
        c = 0.37
        state = init_state(np.zeros(1))
        for _ in range(5000):
            state, m_hat, v_hat = adam_moments(state, np.array([c]), cfg)
        assert m_hat[0] == pytest.approx(c, abs=1e-9)
        assert v_hat[0] == pytest.approx(c * c, abs=1e-9)

    def test_moments_start_at_zero(self):
        state = init_state(np.array([5.0, 5.0]))
        assert state.t == 0
        np.testing.assert_array_equal(state.m, [0.0, 0.0])
        np.testing.assert_array_equal(state.v, [0.0, 0.0])


class TestUpdateStandard:
    def test_sign_descent_unit_case(self):
        upd = update_standard(np.array([1.0]), np.array([1.0]), gamma=0.0)
        np.testing.assert_array_equal(upd.delta, [1.0])
        assert upd.floored_count == 0

    def test_zero_numerator(self):
        upd = update_standard(np.array([0.0]), np.array([0.7]), gamma=1e-8)
        np.testing.assert_array_equal(upd.delta, [0.0])

    def test_gamma_dominated_case(self):
        upd = update_standard(np.array([1e-8]), np.array([0.0]), gamma=1e-8)
        np.testing.assert_allclose(upd.delta, [1.0])

    def test_negative_vhat_rejected(self):
        with pytest.raises(InvalidArgumentError):
            update_standard(np.array([1.0]), np.array([-1e-12]), gamma=0.0)


class TestComputePhi:
    def test_paper_snli_constant(self):
        phi = compute_phi(_pcfg(0.4), beta2=0.999, t=20000)
        assert phi == pytest.approx(2.441e-8, rel=1e-3)

    def test_zero_noise(self):
        for t in (1, 10, 10**6):
            assert compute_phi(_pcfg(0.0), beta2=0.999, t=t) == 0.0

    def test_single_step_value(self):
        phi = compute_phi(_pcfg(0.4), beta2=0.999, t=1)
        assert phi == pytest.approx(2.44140625e-11, rel=1e-12)

    def test_companion_form(self):
        cfg = _pcfg(0.4)
        t = 137
        assert compute_phi(cfg, 0.999, t) == pytest.approx(
            noise_std(cfg) ** 2 * (1 - 0.999 ** t), rel=1e-15)
        assert noise_bias(noise_std(cfg), 0.999, t) == compute_phi(cfg, 0.999, t)

    def test_t_below_one_rejected(self):
        with pytest.raises(InvalidArgumentError):
            compute_phi(_pcfg(0.4), beta2=0.999, t=0)


class TestUpdateCorrected:
    def test_hand_arithmetic_oracle(self):
        # v_hat - c = 2.5e-8 - 2.4414e-8 = 5.86e-10 < gamma' -> floored;
        # delta = 1e-5 / sqrt(1e-9) = 0.31623...
        cfg = _pcfg(0.4)  # (sigma C / B)^2 = 2.44140625e-8
        upd = update_corrected(np.array([1e-5]), np.array([2.5e-8]), cfg,
                               gamma_prime=1e-9)
        assert upd.floored_count == 1
        assert upd.delta[0] == pytest.approx(1e-5 / np.sqrt(1e-9), rel=1e-12)
        assert upd.delta[0] == pytest.approx(0.31623, rel=1e-4)

    def test_noiseless_limit_matches_standard(self):
        gen = _rand(1)
        m_hat = gen.standard_normal(50)
        v_hat = np.abs(gen.standard_normal(50)) + 0.1
        corrected = update_corrected(m_hat, v_hat, _pcfg(0.0), gamma_prime=1e-300)
        standard = update_standard(m_hat, v_hat, gamma=0.0)
        np.testing.assert_array_equal(corrected.delta, standard.delta)
        assert corrected.floored_count == 0

    def test_exact_cancellation(self):
        cfg = _pcfg(0.4)
        c = noise_std(cfg) ** 2
        upd = update_corrected(np.array([1.0]), np.array([c + 1.0]), cfg, gamma_prime=1.0)
        np.testing.assert_array_equal(upd.delta, [1.0])

    def test_override_constant(self):
        cfg = _pcfg(0.4)
        upd = update_corrected(np.array([2.0]), np.array([1.0]), cfg,
                               gamma_prime=1e-12, noise_var_override=0.75)
        assert upd.delta[0] == pytest.approx(2.0 / 0.5, rel=1e-12)

    def test_gamma_prime_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            update_corrected(np.ones(1), np.ones(1), _pcfg(0.4), gamma_prime=0.0)


class TestApplyUpdate:
    def test_zero_lr_keeps_theta(self):
        state = init_state(np.array([1.0, 2.0]))
        upd = update_standard(np.ones(2), np.ones(2), gamma=0.0)
        out = apply_update(state, upd, lr=0.0)
        np.testing.assert_array_equal(out.theta, state.theta)

    def test_unit_direction_scaled_by_lr(self):
        state = init_state(np.array([1.0]))
        upd = update_standard(np.array([1.0]), np.array([1.0]), gamma=0.0)
        out = apply_update(state, upd, lr=0.001)
        np.testing.assert_allclose(out.theta, [0.999])

    def test_two_applications_compose_additively(self):
        state = init_state(np.array([0.0]))
        upd = update_standard(np.array([1.0]), np.array([1.0]), gamma=0.0)
        out = apply_update(apply_update(state, upd, lr=0.1), upd, lr=0.1)
        np.testing.assert_allclose(out.theta, [-0.2])


class TestProperties:
    def test_sign_preservation_all_modes(self):
        gen = _rand(2)
        m_hat = gen.standard_normal(200)
        v_hat = np.abs(gen.standard_normal(200))
        std = update_standard(m_hat, v_hat, gamma=1e-8)
        cor = update_corrected(m_hat, v_hat, _pcfg(0.4), gamma_prime=1e-9)
        np.testing.assert_array_equal(np.sign(std.delta), np.sign(m_hat))
        np.testing.assert_array_equal(np.sign(cor.delta), np.sign(m_hat))

    def test_corrected_magnitude_bound(self):
        gen = _rand(3)
        m_hat = gen.standard_normal(200)
        v_hat = np.abs(gen.standard_normal(200)) * 1e-8
        gamma_prime = 1e-9
        upd = update_corrected(m_hat, v_hat, _pcfg(0.4), gamma_prime=gamma_prime)
        assert np.all(np.abs(upd.delta) <= np.abs(m_hat) / np.sqrt(gamma_prime) * (1 + 1e-12))

    def test_corrected_equals_standard_trajectory_when_noiseless(self):
        # sigma=0, gamma=0, gamma' below every v_hat: identical updates for 100 steps
        gen = _rand(4)
        cfg_std = AdamConfig(beta1=0.9, beta2=0.999, gamma=0.0, mode="standard")
        pcfg = _pcfg(0.0)
        grads = gen.standard_normal((100, 10)) + 0.5
        s1 = init_state(np.zeros(10))
        s2 = init_state(np.zeros(10))
        for g in grads:
            s1, mh1, vh1 = adam_moments(s1, g, cfg_std)
            s1 = apply_update(s1, update_standard(mh1, vh1, 0.0), lr=0.01)
            s2, mh2, vh2 = adam_moments(s2, g, cfg_std)
            s2 = apply_update(s2, update_corrected(mh2, vh2, pcfg, 1e-300), lr=0.01)
        np.testing.assert_allclose(s1.theta, s2.theta, atol=1e-12)

    def test_biased_vs_corrected_ordering(self):
        # above the floor, the corrected denominator is strictly smaller
        gen = _rand(5)
        pcfg = _pcfg(0.4)
        c = noise_std(pcfg) ** 2
        gamma_prime = 1e-9
        m_hat = gen.standard_normal(100)
        v_hat = c + gamma_prime + np.abs(gen.standard_normal(100)) * 1e-7
        biased = update_standard(m_hat, v_hat, gamma=0.0)
        corrected = update_corrected(m_hat, v_hat, pcfg, gamma_prime)
        assert np.all(np.abs(corrected.delta) >= np.abs(biased.delta))

    def test_sign_descent_regime_monte_carlo(self):
        # constant gradient |c| = 1e-2 * s buried in DP noise: at stationarity
        # the corrected update's mean magnitude beats the biased one by >= 5x.
        reps = 20000  # independent chains run as vector coordinates
        s = 1e-3
        c = 1e-2 * s
        pcfg = PrivacyConfig(clip_norm=1.0, noise_multiplier=1.0, batch_size=1000,
                             dataset_size=10**6)
        assert noise_std(pcfg) == s
        cfg = AdamConfig(beta1=0.9, beta2=0.99, mode="dp-corrected", gamma_prime=s * s * 1e-2)
        gen = _rand(6)
        state = init_state(np.zeros(reps))
        t_total = 2000
        for _ in range(t_total):
            g = c + s * gen.standard_normal(reps)
            state, m_hat, v_hat = adam_moments(state, g, cfg)
        biased = update_standard(m_hat, v_hat, gamma=1e-8)
        corrected = update_corrected(m_hat, v_hat, pcfg, cfg.gamma_prime)
        ratio = np.mean(np.abs(corrected.delta)) / np.mean(np.abs(biased.delta))
        assert ratio >= 5.0, f"mean |corrected| / mean |biased| = {ratio:.2f}"


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        gen = _rand(7)
        state = init_state(gen.standard_normal(17))
        cfg = AdamConfig()
        for g in gen.standard_normal((5, 17)):
            state, mh, vh = adam_moments(state, g, cfg)
            state = apply_update(state, update_standard(mh, vh, cfg.gamma), 0.01)
        path = tmp_path / "ckpt.json"
        save_state(state, path)
        loaded = load_state(path)
        assert loaded.t == state.t
        np.testing.assert_array_equal(loaded.m, state.m)
        np.testing.assert_array_equal(loaded.v, state.v)
        np.testing.assert_array_equal(loaded.theta, state.theta)

    def test_version_check(self, tmp_path):
        path = tmp_path / "ckpt.json"
        path.write_text('{"version": 99, "t": 0, "m": [], "v": [], "theta": []}')
        with pytest.raises(InvalidArgumentError):
            load_state(path)
