import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from qtoken import noise as nz
from qtoken.checks import interferometer_deviation, issued_token, teleport_table
from qtoken.harness import exact_acceptance, run_transcripts
from qtoken.protocol import (
    TRANSCRIPT_FIELDS,
    CustodyError,
    ProtocolConfig,
    ProtocolError,
    Role,
    Session,
    TokenRecord,
    Transcript,
    bank_issue,
    bank_issue_branches,
    emit_from_ancilla,
    entangle_photon_timebin,
    exact_distribution,
    interferometer_branches,
    interferometer_issue,
    prepare_am_entanglement,
    reentangle_photon,
    run_honest_protocol,
    store_token,
    swap_memory_to_ancilla,
    teleport_and_verify,
    transcripts_to_csv,
    verify,
)
from qtoken.qcore import CNOT, SWAP, StateVector, apply_operator, fidelity, partial_trace, tensor

S = 1 / math.sqrt(2)


def same_up_to_phase(a: StateVector, b: StateVector) -> bool:
    assert a.labels == b.labels
    return abs(abs(np.vdot(a.amplitudes, b.amplitudes)) - 1) < 1e-12


def sv(amps, labels):
    return StateVector(np.array(amps, dtype=complex), labels)


def cfg(**kw):
    return ProtocolConfig(nz.NoiseConfig(**kw))


class TestPreparation:
    def test_balanced(self):
        out = prepare_am_entanglement(0.5)
        assert np.allclose(out.amplitudes, [S, 0, 0, S])
        assert out.labels == ("A", "M")

    def test_alpha_one_is_product(self):
        assert np.allclose(prepare_am_entanglement(1.0).amplitudes, [1, 0, 0, 0])

    def test_imbalanced(self):
        assert np.allclose(prepare_am_entanglement(0.25).amplitudes, [0.5, 0, 0, 0.866025], atol=1e-6)

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            prepare_am_entanglement(-0.1)


class TestTimeBin:
    def test_perfect(self):
        out = entangle_photon_timebin(prepare_am_entanglement(0.5))
        expect = np.zeros(8)
        expect[0b000] = expect[0b111] = S
        assert np.allclose(out.amplitudes, expect)

    def test_alpha_one_any_theta(self):
        out = entangle_photon_timebin(prepare_am_entanglement(1.0), 1.234)
        assert np.allclose(out.amplitudes, np.eye(8)[0])

    def test_theta_pi(self):
        out = entangle_photon_timebin(prepare_am_entanglement(0.5), math.pi)
        expect = np.zeros(8, dtype=complex)
        expect[0b000], expect[0b111] = S, -S
        assert np.allclose(out.amplitudes, expect)

    def test_used_photon_rejected(self):
        state = entangle_photon_timebin(prepare_am_entanglement(0.5))
        with pytest.raises(ProtocolError):
            entangle_photon_timebin(state)


class TestIssuance:
    def tripartite(self, alpha=0.5, theta=0.0):
        return entangle_photon_timebin(prepare_am_entanglement(alpha), theta)

    def test_outcome_zero(self):
        _, p, am = bank_issue_branches(self.tripartite(), 0.0)[0]
        assert p == pytest.approx(0.5)
        assert same_up_to_phase(am, sv([S, 0, 0, S], ("A", "M")))

    def test_outcome_one(self):
        _, p, am = bank_issue_branches(self.tripartite(), 0.0)[1]
        assert same_up_to_phase(am, sv([S, 0, 0, -S], ("A", "M")))

    @given(st.floats(0, 2 * math.pi), st.floats(0, 1), st.floats(-3, 3))
    def test_outcomes_equiprobable(self, phi, alpha, theta):
        for _, p, _ in bank_issue_branches(self.tripartite(alpha, theta), phi):
            assert p == pytest.approx(0.5, abs=1e-12)

    @given(st.floats(0, 2 * math.pi), st.floats(-3, 3), st.integers(0, 1))
    def test_token_phase(self, phi, theta, m1):
        # sign convention: relative phase theta1 - phi1, negated for m1 = 1
        _, _, am = bank_issue_branches(self.tripartite(0.5, theta), phi)[m1]
        w = (-1) ** m1 * np.exp(1j * (theta - phi))
        assert same_up_to_phase(am, sv([S, 0, 0, S * w], ("A", "M")))

    def test_sampled_matches_branches(self):
        rng = np.random.default_rng(1)
        m1, am = bank_issue(self.tripartite(), 0.9, rng)
        assert same_up_to_phase(am, bank_issue_branches(self.tripartite(), 0.9)[m1][2])


class TestInterferometer:
    def test_d1_and_d2(self):
        (d1, p1, a1), (d2, p2, a2) = interferometer_branches(entangle_photon_timebin(prepare_am_entanglement(0.5)), 0.0)
        assert (d1, d2) == ("D1", "D2")
        assert p1 == pytest.approx(0.5) and p2 == pytest.approx(0.5)
        assert same_up_to_phase(a1, sv([S, 0, 0, S], ("A", "M")))
        assert same_up_to_phase(a2, sv([S, 0, 0, -S], ("A", "M")))

    def test_twenty_random_draws(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            dev = interferometer_deviation(rng.random(), rng.uniform(-math.pi, math.pi), rng.uniform(0, 2 * math.pi))
            assert dev < 1e-12

    def test_sampled_detector(self):
        det, am = interferometer_issue(entangle_photon_timebin(prepare_am_entanglement(0.5)), 0.4, np.random.default_rng(3))
        assert det in ("D1", "D2")
        assert abs(am.norm() - 1) < 1e-12


class TestStorage:
    def test_zero_phase(self):
        _, _, am = bank_issue_branches(entangle_photon_timebin(prepare_am_entanglement(0.5)), 0.0)[0]
        mem = store_token(am)
        assert mem.labels == ("M",)
        assert same_up_to_phase(mem, sv([S, S], ("M",)))

    def test_m1_one_phi_half_pi(self):
        mem = issued_token(1, math.pi / 2)
        assert same_up_to_phase(mem, sv([S, -S * np.exp(-1j * math.pi / 2)], ("M",)))

    def test_ancilla_left_pure(self):
        _, _, am = bank_issue_branches(entangle_photon_timebin(prepare_am_entanglement(0.3), 0.2), 1.0)[1]
        after = apply_operator(am, CNOT, ("M", "A"))
        assert partial_trace(after, ("A",)).purity() == pytest.approx(1, abs=1e-12)

    def test_entangled_ancilla_rejected(self):
        with pytest.raises(ProtocolError):
            # ancilla in superposition with M = up: the flip cannot reset it
            store_token(sv([S, 0, S, 0], ("A", "M")))


class TestVerificationSide:
    def test_reentangle_zero_phase(self):
        out = reentangle_photon(sv([1, 0], ("M",)))
        assert out.labels == ("A", "M", "P")
        # |up>_M (x) (|0E> + |-1L>)/sqrt2 on (A, P)
        amps = np.zeros(8, dtype=complex)
        amps[0b000] = amps[0b101] = S
        assert np.allclose(out.amplitudes, amps)

    def test_reentangle_phase(self):
        out = reentangle_photon(sv([1, 0], ("M",)), math.pi / 2)
        assert out.amplitudes[0b101] == pytest.approx(1j * S)

    def test_memory_untouched(self):
        mem = issued_token(0, 0.77)
        red = partial_trace(reentangle_photon(mem, 0.3), ("M",))
        assert fidelity(red, mem) == pytest.approx(1, abs=1e-12)

    def test_dirty_ancilla_rejected(self):
        with pytest.raises(ProtocolError):
            reentangle_photon(sv([0, 0, 1, 0], ("A", "M")))

    def test_swap(self):
        psi = sv([0.6, 0.8j], ("M",))
        out = swap_memory_to_ancilla(psi)
        assert partial_trace(out, ("A",)).matrix == pytest.approx(psi.to_density().matrix)
        twice = apply_operator(out, SWAP, ("M", "A"))
        assert np.allclose(twice.amplitudes, tensor(sv([1, 0], ("A",)), psi).amplitudes)

    def test_swap_moves_token_phase(self):
        phi = 0.9
        out = swap_memory_to_ancilla(sv([S, S * np.exp(1j * phi)], ("M",)))
        assert fidelity(partial_trace(out, ("A",)), sv([S, S * np.exp(1j * phi)], ("A",))) == pytest.approx(1)

    @pytest.mark.parametrize("bits", [(0, 0), (0, 1), (1, 0), (1, 1)])
    def test_noiseless_outcomes_deterministic(self, bits):
        rows = {(r1, r2): (p, good) for r1, r2, p, good in teleport_table(0, 0.0)}
        p, good = rows[bits]
        assert p == pytest.approx(0.25, abs=1e-12)
        assert good == pytest.approx(1, abs=1e-12)

    def test_expected_m2(self):
        # m1 = 0: outcome (0,0) gives m2 = 0 and (0,1) gives m2 = 1
        mem = issued_token(0, 0.0)
        seen = {}
        for seed in range(60):
            r1, r2, m2 = teleport_and_verify(reentangle_photon(mem), 0.0, np.random.default_rng(seed))
            seen[(r1, r2)] = m2
        assert seen[(0, 0)] == 0 and seen[(0, 1)] == 1

    def test_correction_needed_for_generic_phase(self):
        worst = min(good for *_, good in teleport_table(1, math.pi / 7, active_correction=False))
        assert worst < 0.9


class TestVerify:
    @pytest.mark.parametrize(
        "bits,ok",
        [((0, 0, 0, 0), True), ((0, 1, 1, 0), True), ((1, 1, 1, 1), True), ((1, 0, 1, 0), True), ((0, 1, 0, 0), False)],
    )
    def test_condition(self, bits, ok):
        assert verify(*bits) is ok

    def test_non_bits(self):
        with pytest.raises(ValueError):
            verify(2, 0, 0, 0)


class TestHonestRun:
    def test_noiseless_always_accepts(self):
        c = cfg()
        for i in range(300):
            t = run_honest_protocol(c, np.random.default_rng(i), seed=i)
            assert t.accepted
            assert t.m2 == t.m1 ^ t.r1 ^ t.r2
            assert t.repetitions_used == 1

    def test_long_storage_tends_to_half(self):
        assert exact_acceptance(cfg(t_s=40.0)) == pytest.approx(0.5, abs=1e-12)

    def test_loss_counts_repetitions(self):
        c = cfg(p_loss=0.5, max_repetitions=50)
        ts = [run_honest_protocol(c, np.random.default_rng(i)) for i in range(400)]
        assert all(t.repetitions_used >= 1 for t in ts)
        # two geometric(1/2) stages: mean attempts 2 + 2, minus one
        assert np.mean([t.repetitions_used for t in ts]) == pytest.approx(3.0, abs=0.3)

    def test_total_loss_fails(self):
        t = run_honest_protocol(cfg(p_loss=1.0, max_repetitions=7), np.random.default_rng(0))
        assert t.failed and not t.accepted and t.repetitions_used == 7

    def test_memory_custody(self):
        c = cfg(t_s=0.5, f_bsm=0.9)
        for i in range(50):
            sess = Session()
            run_honest_protocol(c, np.random.default_rng(i), session=sess)
            touched = [e for e in sess.log if "M" in e.qubits]
            assert touched and all(e.role is Role.USER for e in touched)
            assert not any(e.op.startswith("send") and "M" in e.qubits for e in sess.log)

    def test_custody_violations(self):
        sess = Session()
        with pytest.raises(CustodyError):
            sess.transfer(Role.USER, Role.BANK, "M")
        with pytest.raises(CustodyError):
            sess.act(Role.VERIFIER, "peek", ("M",))

    def test_basis_secrecy(self):
        # phi2 independent of phi1: average acceptance over the mismatch is 1/2
        def acc(dphi):
            return exact_acceptance(cfg(delta_phi=dphi))

        val, _ = integrate.quad(acc, 0, 2 * math.pi, epsabs=1e-12, limit=200)
        assert val / (2 * math.pi) == pytest.approx(0.5, abs=1e-9)

    def test_swap_variant_equivalent(self):
        for noise in ({}, {"alpha": 0.3, "t_s": 0.4, "delta_phi": 0.2, "sigma_theta": 0.5}):
            base = cfg(**noise)
            swap = dataclasses.replace(base, swap_variant=True)

            def marginal(d):
                out = {}
                for (m1, r1, r2, m2), p in d.items():
                    key = (m1, m2 == m1 ^ r1 ^ r2)
                    out[key] = out.get(key, 0.0) + p
                return out

            a, b = marginal(exact_distribution(base)), marginal(exact_distribution(swap))
            assert a.keys() == b.keys()
            for k in a:
                assert a[k] == pytest.approx(b[k], abs=1e-12)

    def test_swap_variant_sampled(self):
        c = dataclasses.replace(cfg(), swap_variant=True)
        assert all(run_honest_protocol(c, np.random.default_rng(i)).accepted for i in range(100))

    def test_ancilla_emission_carries_token(self):
        st_ = emit_from_ancilla(swap_memory_to_ancilla(issued_token(0, 0.5)))
        assert st_.labels == ("A", "M", "P")


class TestTranscripts:
    def test_token_record(self):
        r = TokenRecord(7.0, 1)
        assert 0 <= r.phi < 2 * math.pi
        with pytest.raises(ValueError):
            TokenRecord(0.0, 2)

    def test_json_round_trip(self):
        ts = run_transcripts(cfg(alpha_mode="uniform", sigma_theta=0.3), 20, 5)
        for t in ts:
            line = t.to_json_line()
            assert list(json.loads(line)) == list(TRANSCRIPT_FIELDS)
            assert Transcript.from_json_line(line) == t

    def test_csv(self):
        ts = run_transcripts(cfg(), 3, 5)
        lines = transcripts_to_csv(ts).splitlines()
        assert lines[0].split(",") == list(TRANSCRIPT_FIELDS)
        assert len(lines) == 4
        assert "true" in lines[1]

    def test_failed_transcript_serializes(self):
        t = run_honest_protocol(cfg(p_loss=1.0), np.random.default_rng(0), seed=3)
        assert Transcript.from_json_line(t.to_json_line()) == t
        assert t.to_csv_row()[1] == ""

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_accepted_iff_condition(self, seed):
        t = run_honest_protocol(cfg(t_s=1.0, f_bsm=0.8, sigma_theta=0.5), np.random.default_rng(seed))
        assert t.accepted == (t.m2 == t.m1 ^ t.r1 ^ t.r2)
