"""End-to-end acceptance criteria.

Each test prints one ``criterion N PASS|FAIL`` line; the lines are also
collected and echoed in the terminal summary (see conftest.py).
Run on its own with ``pytest tests/test_acceptance.py -v -s``.
"""

import math
import time

import numpy as np
import pytest

from qtoken import adversary as adv
from qtoken import analytics as an
from qtoken import harness as hs
from qtoken.checks import check_dephasing, interferometer_deviation, teleport_table
from qtoken.noise import NoiseConfig
from qtoken.protocol import ProtocolConfig

pytestmark = pytest.mark.slow

RESULTS: list[str] = []
NOISELESS = ProtocolConfig(NoiseConfig())


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


def formula(x: float, sigma: float = 0.0, dphi: float = 0.0) -> float:
    return 0.5 * (1 + math.pi / 4 * math.exp(-x) * math.exp(-(sigma**2) / 2) * math.cos(dphi))


def test_1_noiseless_completeness():
    start = time.perf_counter()
    exact = hs.exact_acceptance(NOISELESS)
    mc = hs.run_mc(NOISELESS, 10_000, 42)
    violations = sum(t.m2 != t.m1 ^ t.r1 ^ t.r2 for t in mc.transcripts)
    elapsed = time.perf_counter() - start
    ok = abs(exact - 1.0) < 1e-12 and mc.estimate >= 0.999 and violations == 0 and elapsed < 10
    report(
        1,
        "noiseless completeness",
        ok,
        f"exact={exact:.15f}, mc={mc.estimate:.4f} over {mc.n_trials}, violations={violations}, {elapsed:.1f}s",
    )


def test_2_teleportation_brute_force():
    worst_p = worst_det = 0.0
    for m1 in (0, 1):
        for phi in (0.0, math.pi / 7, math.pi / 2, 1.3):
            rows = teleport_table(m1, phi, active_correction=True)
            assert sorted((r1, r2) for r1, r2, _, _ in rows) == [(0, 0), (0, 1), (1, 0), (1, 1)]
            for _, _, p, good in rows:
                worst_p = max(worst_p, abs(p - 0.25))
                worst_det = max(worst_det, abs(1 - good))
    without = max(abs(1 - good) for m1 in (0, 1) for *_, good in teleport_table(m1, math.pi / 7, False))
    ok = worst_p <= 1e-12 and worst_det <= 1e-12 and without > 1e-3
    report(
        2,
        "teleportation brute force",
        ok,
        f"max|p-1/4|={worst_p:.1e}, max 1-P(correct)={worst_det:.1e}, without X at pi/7: {without:.3f}",
    )


def test_3_averaged_fidelity_formula():
    start = time.perf_counter()
    worst = 0.0
    for x in np.linspace(0, 3, 5):
        for sigma in np.linspace(0, 1, 5):
            for dphi in np.linspace(0, math.pi / 2, 5):
                closed = an.f_verif_avg(x, 1.0, sigma, dphi)
                worst = max(worst, abs(closed - an.f_verif_avg_numeric(x, 1.0, sigma, dphi)))
    origin = an.f_verif_avg(0, 1, 0, 0)
    tail = [an.f_verif_avg(x, 1, 0, 0) for x in (5, 10, 20, 40)]
    elapsed = time.perf_counter() - start
    ok = (
        worst < 1e-8
        and abs(origin - 0.892699) < 5e-7
        and all(a > b for a, b in zip(tail, tail[1:]))
        and abs(tail[-1] - 0.5) < 1e-12
        and elapsed < 30
    )
    report(3, "averaged fidelity formula", ok, f"grid max dev={worst:.1e}, origin={origin:.6f}, F(40)={tail[-1]:.12f}, {elapsed:.1f}s")


def test_4_storage_sweep():
    start = time.perf_counter()
    xs = [0.0, 1.0, 2.0, 3.0]
    rows = hs.sweep(hs.SweepSpec("t_s", xs, trials=100_000, seed=42), ProtocolConfig(NoiseConfig(alpha_mode="uniform")))
    elapsed = time.perf_counter() - start
    zs = []
    for x, r in zip(xs, rows):
        want = formula(x)
        zs.append(abs(r.mc_p - want) / math.sqrt(want * (1 - want) / r.n_trials))
    mc = [r.mc_p for r in rows]
    monotone = all(a > b for a, b in zip(mc, mc[1:]))
    ok = max(zs) < 4 and monotone and abs(formula(40.0) - 0.5) < 1e-12 and elapsed < 300
    points = ", ".join(f"{x:g}:{p:.4f}" for x, p in zip(xs, mc))
    report(4, "t_s/t_m sweep against closed form", ok, f"mc {points}; max z={max(zs):.2f}, {elapsed:.0f}s")


def _forge(kind, rounds, trials, seed):
    return adv.run_forgery_experiment(adv.AdversaryStrategy(kind), NOISELESS, rounds, trials, seed=seed).forgery


def test_5_forgery_bound():
    n = 100_000
    blind = _forge("blind_guess", 10, n, 501)
    lo, hi = blind.per_round_ci
    per_round_ok = lo <= 0.5 <= hi

    # the ten survival points come from one experiment, so each gets a
    # Bonferroni-adjusted Wilson interval (family-wise level 95%)
    outside = []
    for k in range(1, 11):
        s_lo, s_hi = hs.wilson_interval(round(blind.survival[k - 1] * n), n, confidence=1 - 0.05 / 10)
        if not s_lo <= 2.0**-k <= s_hi:
            outside.append(k)

    haar = _forge("random_state", 1, n, 502)
    intercept = _forge("intercept_p2", 1, n, 503)
    haar_ok = haar.per_round_ci[0] <= 0.5 <= haar.per_round_ci[1]

    bound_ok = all(
        f.per_round_p <= min(f.forge_bound_honest, 0.5) + 3 * f.per_round_halfwidth for f in (blind, haar, intercept)
    ) and blind.n_round_p <= 2.0**-10 + 3 * blind.n_round_halfwidth

    ok = per_round_ok and not outside and haar_ok and bound_ok
    report(
        5,
        "forgery bound",
        ok,
        f"blind={blind.per_round_p:.4f} [{lo:.4f},{hi:.4f}], 10-round={blind.n_round_p:.5f} vs {2**-10:.5f}, "
        f"survival outside CI at n={outside or 'none'}, haar={haar.per_round_p:.4f}, intercept={intercept.per_round_p:.4f}",
    )


def test_6_dephasing_exactness():
    channel = check_dephasing()
    cfg = ProtocolConfig(NoiseConfig(alpha=0.5, t_s=1.0, t_m=1.0))
    exact = hs.exact_acceptance(cfg)
    want = 0.5 * (1 + math.exp(-1))
    ok = channel.ok and abs(exact - want) < 1e-10 and round(exact, 6) == 0.683940
    report(6, "dephasing exactness", ok, f"{channel.detail}; acceptance={exact:.12f}")


def test_7_interferometer_equivalence():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        alpha, theta, phi = rng.random(), rng.uniform(-math.pi, math.pi), rng.uniform(0, 2 * math.pi)
        worst = max(worst, interferometer_deviation(alpha, theta, phi))
    report(7, "interferometer equivalence", worst < 1e-12, f"max deviation over 20 draws={worst:.1e}")


def test_8_determinism():
    cfg = ProtocolConfig(NoiseConfig(alpha_mode="uniform", sigma_theta=0.4, t_s=0.6, f_bsm=0.9, p_loss=0.3))
    streams = {w: hs.run_transcripts(cfg, 2000, 8080, workers=w) for w in (1, 4, 8)}
    text = {w: "\n".join(t.to_json_line() for t in ts) for w, ts in streams.items()}
    ok = text[1] == text[4] == text[8] and streams[1] == streams[4] == streams[8]
    report(8, "determinism across workers", ok, f"{len(streams[1])} transcripts, {len(text[1])} bytes per stream")
