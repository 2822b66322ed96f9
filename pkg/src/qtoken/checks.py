"""Invariant checks shared by ``qtoken selftest`` and the test suite.

Each check returns a :class:`CheckResult`; none of them raise on failure.
"""
from __future__ import annotations

import dataclasses
import math
import time
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import analytics
from . import noise as nz
from .harness import exact_acceptance, predicted_acceptance, run_mc
from .protocol import (
    ProtocolConfig,
    bank_issue_branches,
    entangle_photon_timebin,
    interferometer_branches,
    prepare_am_entanglement,
    reentangle_photon,
    store_token,
    verifier_branches,
)
from .qcore import (
    BELL_LABELS,
    BUILTIN_GATES,
    DensityMatrix,
    PHI_MINUS,
    PSI_PLUS,
    StateVector,
    apply_channel,
    bell_branches,
    is_unitary,
    phase_gate,
    ry,
)

# (0,1) and (1,1) exchanged: the Z correction is then applied on the wrong outcomes
CORRUPT_BELL_LABELING = {**BELL_LABELS, (0, 1): PSI_PLUS, (1, 1): PHI_MINUS}

TELEPORT_PHASES = (0.0, math.pi / 7, math.pi / 2, 1.3)


class CheckResult(NamedTuple):
    name: str
    ok: bool
    detail: str = ""


# ---------------------------------------------------------------------------
# Teleportation
# ---------------------------------------------------------------------------


def issued_token(m1: int, phi: float, alpha: float = 0.5) -> StateVector:
    """The stored memory qubit after the bank reports ``m1`` for phase ``phi``."""
    state = entangle_photon_timebin(prepare_am_entanglement(alpha))
    _, _, am = bank_issue_branches(state, phi)[m1]
    return store_token(am)


def teleport_table(m1: int, phi: float, active_correction: bool = True, labeling: Optional[dict] = None):
    """Rows of (r1, r2, p_bsm, p_correct) for one token, where p_correct is the
    probability that the verifier's bit satisfies m2 = m1 ^ r1 ^ r2."""
    rows = []
    for (r1, r2), p, post in bell_branches(reentangle_photon(issued_token(m1, phi)), ("A", "M"), labeling):
        good = 0.0
        if post is not None:
            for m2, q, _ in verifier_branches(post, r1, phi, active_correction):
                if m2 == m1 ^ r1 ^ r2:
                    good += q
        rows.append((r1, r2, p, good))
    return rows


def check_teleportation(labeling: Optional[dict] = None, tol: float = 1e-12) -> CheckResult:
    worst_p, worst_det = 0.0, 0.0
    for m1 in (0, 1):
        for phi in TELEPORT_PHASES:
            for _, _, p, good in teleport_table(m1, phi, True, labeling):
                worst_p = max(worst_p, abs(p - 0.25))
                worst_det = max(worst_det, abs(1.0 - good))
    ok = worst_p <= tol and worst_det <= tol
    return CheckResult("teleportation", ok, f"max |p-1/4|={worst_p:.2e}, max 1-P(correct)={worst_det:.2e}")


def check_correction_is_needed() -> CheckResult:
    """Without the X correction, phi = pi/7 must give a non-deterministic verifier."""
    worst = max(abs(1.0 - good) for m1 in (0, 1) for *_, good in teleport_table(m1, math.pi / 7, False))
    return CheckResult("correction_load_bearing", worst > 1e-3, f"max 1-P(correct) without correction={worst:.3f}")


# ---------------------------------------------------------------------------
# Linear-algebra invariants
# ---------------------------------------------------------------------------


def check_unitarity() -> CheckResult:
    gates = dict(BUILTIN_GATES)
    for t in (0.3, math.pi / 7, 2.0):
        gates[f"phase({t:.3g})"] = phase_gate(t)
        gates[f"ry({t:.3g})"] = ry(t)
    bad = [name for name, u in gates.items() if not is_unitary(u)]
    return CheckResult("unitarity", not bad, ", ".join(bad) or f"{len(gates)} gates")


def check_cptp() -> CheckResult:
    channels = [
        nz.memory_dephasing_channel(1.0, 1.0),
        nz.memory_dephasing_channel(0.3, 2.0),
        nz.phase_noise_channel(0.7),
        nz.depolarizing_channel(0.9, 2),
        nz.depolarizing_channel(0.0, 1),
    ]
    worst = 0.0
    for ch in channels:
        d = ch.operators[0].shape[0]
        s = sum(k.conj().T @ k for k in ch.operators)
        worst = max(worst, float(np.max(np.abs(s - np.eye(d)))))
    return CheckResult("cptp", worst < 1e-12, f"max completeness deviation {worst:.2e}")


def check_bell_completeness(labeling: Optional[dict] = None) -> CheckResult:
    labeling = BELL_LABELS if labeling is None else labeling
    proj = sum(np.outer(v, v.conj()) for v in labeling.values())
    dev = float(np.max(np.abs(proj - np.eye(4))))
    return CheckResult("bell_completeness", dev < 1e-12 and len(labeling) == 4, f"deviation {dev:.2e}")


def check_dephasing() -> CheckResult:
    rho = DensityMatrix(np.full((2, 2), 0.5, dtype=complex), ("M",))
    worst = 0.0
    for x in (0.0, 0.5, 1.0, 3.0):
        out = apply_channel(rho, nz.memory_dephasing_channel(x, 1.0), ("M",))
        worst = max(worst, abs(out.matrix[0, 1] / 0.5 - math.exp(-x)))
    a = apply_channel(apply_channel(rho, nz.memory_dephasing_channel(0.4, 1.0), ("M",)),
                      nz.memory_dephasing_channel(0.9, 1.0), ("M",))
    b = apply_channel(rho, nz.memory_dephasing_channel(1.3, 1.0), ("M",))
    semi = float(np.max(np.abs(a.matrix - b.matrix)))
    ok = worst < 1e-12 and semi < 1e-12
    return CheckResult("dephasing", ok, f"scaling err {worst:.2e}, semigroup err {semi:.2e}")


# ---------------------------------------------------------------------------
# Oracle agreements
# ---------------------------------------------------------------------------


def _cfg(**noise) -> ProtocolConfig:
    return ProtocolConfig(nz.NoiseConfig(**noise))


def check_exact_oracles() -> CheckResult:
    cases = [
        ("noiseless", _cfg(), 1.0),
        ("dephasing", _cfg(t_s=1.0, t_m=1.0), 0.5 * (1 + math.exp(-1.0))),
        ("bsm_readout", _cfg(f_bsm=0.9), 0.95),
        ("bsm_depolarizing", dataclasses.replace(_cfg(f_bsm=0.9), bsm_model="depolarizing"), 0.95),
    ]
    generic = _cfg(alpha=0.3, sigma_theta=0.4, delta_phi=0.25, t_s=0.6, t_m=1.5, f_bsm=0.97)
    cases.append(("generic", generic, predicted_acceptance(generic)))
    cases.append(("swap_variant", dataclasses.replace(generic, swap_variant=True), predicted_acceptance(generic)))
    bad = []
    for name, cfg, want in cases:
        got = exact_acceptance(cfg)
        if abs(got - want) > 1e-10:
            bad.append(f"{name}: {got!r} vs {want!r}")
    return CheckResult("exact_oracles", not bad, "; ".join(bad) or f"{len(cases)} configs")


def check_quadrature_oracle() -> CheckResult:
    worst = 0.0
    for x in (0.0, 1.5, 3.0):
        for sigma in (0.0, 0.5, 1.0):
            for dphi in (0.0, math.pi / 4):
                closed = analytics.f_verif_avg(x, 1.0, sigma, dphi)
                numeric = analytics.f_verif_avg_numeric(x, 1.0, sigma, dphi)
                worst = max(worst, abs(closed - numeric))
    return CheckResult("quadrature_oracle", worst < 1e-8, f"max deviation {worst:.2e}")


def check_interferometer(draws: int = 5, seed: int = 7) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        alpha, theta, phi = rng.random(), rng.uniform(-math.pi, math.pi), rng.uniform(0, 2 * math.pi)
        worst = max(worst, interferometer_deviation(alpha, theta, phi))
    return CheckResult("interferometer", worst < 1e-12, f"max deviation {worst:.2e}")


def interferometer_deviation(alpha: float, theta: float, phi: float) -> float:
    """Largest difference in branch probability or post-measurement density
    matrix between the abstract phase-basis projection and the interferometer."""
    state = entangle_photon_timebin(prepare_am_entanglement(alpha), theta)
    worst = 0.0
    for (_, p, a), (_, q, b) in zip(bank_issue_branches(state, phi), interferometer_branches(state, phi)):
        worst = max(worst, abs(p - q))
        if a is not None and b is not None:
            worst = max(worst, float(np.max(np.abs(a.to_density().matrix - b.to_density().matrix))))
        elif (a is None) != (b is None):
            worst = max(worst, max(p, q))
    return worst


def check_mc_agreement(trials: int = 4000, seed: int = 11) -> CheckResult:
    cfg = _cfg(alpha_mode="uniform", t_s=0.7, sigma_theta=0.3)
    exact = predicted_acceptance(cfg)
    mc = run_mc(cfg, trials, seed, keep_transcripts=False)
    sigma = math.sqrt(exact * (1 - exact) / mc.completed)
    z = abs(mc.estimate - exact) / sigma
    return CheckResult("mc_agreement", z < 4.0, f"mc={mc.estimate:.4f} exact={exact:.4f} z={z:.2f}")


def run_all(labeling: Optional[dict] = None) -> list[CheckResult]:
    checks: list[Callable[[], CheckResult]] = [
        check_unitarity,
        check_cptp,
        lambda: check_bell_completeness(labeling),
        lambda: check_teleportation(labeling),
        check_correction_is_needed,
        check_dephasing,
        check_interferometer,
        check_exact_oracles,
        check_quadrature_oracle,
        check_mc_agreement,
    ]
    out = []
    for check in checks:
        t0 = time.perf_counter()
        try:
            res = check()
        except Exception as exc:  # a crashing check is a failing check
            res = CheckResult(getattr(check, "__name__", "check"), False, f"{type(exc).__name__}: {exc}")
        out.append(res._replace(detail=f"{res.detail} ({time.perf_counter() - t0:.2f}s)"))
    return out
