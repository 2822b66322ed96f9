import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtoken import noise as nz
from qtoken.harness import exact_acceptance, run_mc
from qtoken.protocol import ProtocolConfig
from qtoken.qcore import PHI_PLUS, DensityMatrix, StateVector, apply_channel, bell_branches, random_state


def cfg(**kw):
    return ProtocolConfig(nz.NoiseConfig(**kw))


class TestNoiseConfig:
    def test_defaults_are_noiseless(self):
        c = nz.NoiseConfig()
        assert (c.alpha, c.sigma_theta, c.t_s, c.f_bsm, c.p_loss) == (0.5, 0.0, 0.0, 1.0, 0.0)

    @pytest.mark.parametrize(
        "kw",
        [
            {"alpha": 1.5},
            {"sigma_theta": -0.1},
            {"t_m": 0.0},
            {"t_s": -1.0},
            {"f_bsm": 1.01},
            {"p_loss": -0.2},
            {"max_repetitions": 0},
            {"alpha_mode": "gaussian"},
        ],
    )
    def test_invalid_rejected(self, kw):
        with pytest.raises(nz.NoiseConfigError):
            nz.NoiseConfig(**kw)


class TestSamplers:
    def test_fixed_alpha(self):
        assert nz.sample_alpha(0.5, np.random.default_rng(0)) == 0.5

    def test_uniform_alpha_mean(self):
        rng = np.random.default_rng(1)
        draws = np.array([nz.sample_alpha("uniform", rng) for _ in range(200_000)])
        # the full-scale check uses 1e6 draws at +-0.002; 2e5 draws keeps the same 4-sigma margin
        assert abs(draws.mean() - 0.5) < 4 * math.sqrt(1 / 12 / draws.size)

    def test_uniform_alpha_coherence_mean(self):
        rng = np.random.default_rng(2)
        a = rng.random(1_000_000)
        assert abs(np.mean(2 * np.sqrt(a * (1 - a))) - math.pi / 4) < 0.001

    def test_zero_sigma_is_zero_without_draw(self):
        rng = np.random.default_rng(3)
        state = rng.bit_generator.state
        assert nz.sample_phase_noise(0.0, rng) == 0.0
        assert rng.bit_generator.state == state

    def test_phase_noise_characteristic_function(self):
        rng = np.random.default_rng(4)
        draws = rng.normal(0.0, 1.0, 1_000_000)
        assert abs(np.mean(np.cos(draws)) - math.exp(-0.5)) < 0.003
        assert math.exp(-0.3**2 / 2) == pytest.approx(0.9560, abs=5e-5)

    def test_phase_noise_uses_sigma(self):
        rng = np.random.default_rng(5)
        draws = [nz.sample_phase_noise(0.7, rng) for _ in range(20_000)]
        assert np.std(draws) == pytest.approx(0.7, rel=0.03)

    def test_photon_attempts(self):
        rng = np.random.default_rng(6)
        assert all(nz.attempt_photon(0.0, rng) for _ in range(1000))
        assert not any(nz.attempt_photon(1.0, rng) for _ in range(1000))

    def test_loss_tail(self):
        assert 0.5**20 == pytest.approx(9.5e-7, rel=0.01)

    def test_samplers_deterministic(self):
        a = [nz.sample_phase_noise(0.4, np.random.default_rng(9)) for _ in range(3)]
        b = [nz.sample_phase_noise(0.4, np.random.default_rng(9)) for _ in range(3)]
        assert a == b


class TestDephasing:
    def test_zero_time_is_identity(self):
        ch = nz.memory_dephasing_channel(0.0, 1.0)
        assert np.allclose(ch.superoperator(), np.eye(4))

    def test_one_lifetime(self):
        rho = DensityMatrix(np.full((2, 2), 0.5, dtype=complex), ("M",))
        out = apply_channel(rho, nz.memory_dephasing_channel(2.0, 2.0), ("M",))
        assert abs(out.matrix[0, 1] / 0.5 - math.exp(-1)) < 1e-12

    def test_long_storage_decoheres(self):
        rho = DensityMatrix(np.full((2, 2), 0.5, dtype=complex), ("M",))
        out = apply_channel(rho, nz.memory_dephasing_channel(60.0, 1.0), ("M",))
        assert np.allclose(out.matrix, np.eye(2) / 2, atol=1e-12)
        assert exact_acceptance(cfg(t_s=60.0)) == pytest.approx(0.5, abs=1e-12)

    def test_bad_lifetime(self):
        with pytest.raises(nz.NoiseConfigError):
            nz.memory_dephasing_channel(1.0, 0.0)

    @given(st.integers(0, 2**32 - 1), st.floats(0, 10), st.floats(0.1, 10))
    def test_off_diagonals_scaled_exactly(self, seed, t_s, t_m):
        rho = random_state(np.random.default_rng(seed), ("M",)).to_density()
        out = apply_channel(rho, nz.memory_dephasing_channel(t_s, t_m), ("M",)).matrix
        f = math.exp(-t_s / t_m)
        assert abs(out[0, 1] - f * rho.matrix[0, 1]) < 1e-12
        assert abs(out[1, 0] - f * rho.matrix[1, 0]) < 1e-12
        assert np.allclose(np.diag(out), np.diag(rho.matrix), atol=1e-12)

    @given(st.floats(0, 5), st.floats(0, 5))
    def test_semigroup(self, t1, t2):
        a = nz.memory_dephasing_channel(t1, 1.0).then(nz.memory_dephasing_channel(t2, 1.0))
        b = nz.memory_dephasing_channel(t1 + t2, 1.0)
        assert np.max(np.abs(a.superoperator() - b.superoperator())) < 1e-12

    def test_gaussian_phase_noise_is_dephasing(self):
        sigma = 0.8
        rng = np.random.default_rng(10)
        thetas = rng.normal(0, sigma, 200_000)
        mc = np.mean(np.exp(1j * thetas))
        ch = nz.phase_noise_channel(sigma)
        rho = DensityMatrix(np.full((2, 2), 0.5, dtype=complex), ("P",))
        out = apply_channel(rho, ch, ("P",))
        assert out.matrix[1, 0].real / 0.5 == pytest.approx(math.exp(-sigma**2 / 2), abs=1e-12)
        assert abs(mc - math.exp(-sigma**2 / 2)) < 4 / math.sqrt(thetas.size)


class TestNoisyBSM:
    def test_perfect_is_ideal(self):
        state = StateVector(PHI_PLUS, ("A", "M"))
        for seed in range(20):
            r1, r2, _ = nz.noisy_bsm(state, ("A", "M"), 1.0, np.random.default_rng(seed))
            assert (r1, r2) == (0, 0)

    def test_zero_fidelity_reports_uniform_bits(self):
        state = StateVector(PHI_PLUS, ("A", "M"))
        rng = np.random.default_rng(11)
        n = 40_000
        counts = np.zeros(4)
        for _ in range(n):
            r1, r2, _ = nz.noisy_bsm(state, ("A", "M"), 0.0, rng)
            counts[2 * r1 + r2] += 1
        se = math.sqrt(0.25 * 0.75 / n)
        assert np.all(np.abs(counts / n - 0.25) < 4 * se)

    def test_zero_fidelity_acceptance_half(self):
        assert exact_acceptance(cfg(f_bsm=0.0)) == pytest.approx(0.5, abs=1e-12)
        mc = run_mc(cfg(f_bsm=0.0), 4000, 12, keep_transcripts=False)
        assert abs(mc.estimate - 0.5) < 4 * math.sqrt(0.25 / 4000)

    @pytest.mark.parametrize("model", ["readout", "depolarizing"])
    def test_mixture(self, model):
        c = dataclasses.replace(cfg(f_bsm=0.9), bsm_model=model)
        assert exact_acceptance(c) == pytest.approx(0.95, abs=1e-12)

    def test_depolarizing_channel_complete(self):
        for f in (0.0, 0.3, 1.0):
            ch = nz.depolarizing_channel(f, 2)
            total = sum(k.conj().T @ k for k in ch.operators)
            assert np.max(np.abs(total - np.eye(4))) < 1e-12

    def test_depolarizing_bell_fidelity(self):
        rho = StateVector(PHI_PLUS, ("A", "M")).to_density()
        out = apply_channel(rho, nz.depolarizing_channel(0.8, 2), ("A", "M"))
        probs = {b: p for b, p, _ in bell_branches(out, ("A", "M"))}
        assert probs[(0, 0)] == pytest.approx(0.8 + 0.2 / 4, abs=1e-12)

    def test_unknown_model(self):
        with pytest.raises(nz.NoiseConfigError):
            nz.noisy_bsm(StateVector(PHI_PLUS, ("A", "M")), ("A", "M"), 1.0, np.random.default_rng(0), "lossy")
