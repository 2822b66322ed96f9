"""Memory-less forgery strategies and the forgery experiment.

A strategy only ever receives an :class:`AdversaryView` (public classical
announcements) plus its own qubits and RNG. The bank's phase and the user's
memory never reach strategy code.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import analytics
from . import noise as nz
from .harness import SecurityReport, predicted_acceptance, standard_error, trial_rng, wilson_interval
from .protocol import (
    TWO_PI,
    ProtocolConfig,
    bank_issue,
    entangle_photon_timebin,
    prepare_am_entanglement,
    reentangle_photon,
    store_token,
    verifier_branches,
    verifier_measure,
    verify,
)
from .qcore import (
    PhaseBasis,
    StateVector,
    bell_branches,
    haar_random_qubit,
    measure,
    partial_trace,
    sample_channel,
)

log = logging.getLogger(__name__)


class StrategyKind(str, Enum):
    BLIND_GUESS = "blind_guess"
    RANDOM_STATE = "random_state"
    INTERCEPT_P2 = "intercept_p2"


@dataclass(frozen=True)
class AdversaryView:
    """Public announcements visible to a forger."""

    m1: int


@dataclass(frozen=True)
class AdversaryStrategy:
    kind: StrategyKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))


def forge_blind(rng: np.random.Generator) -> int:
    """Guess the verifier's bit."""
    return int(rng.integers(2))


def forge_random_state(rng: np.random.Generator) -> StateVector:
    """Haar-random qubit presented in place of the stored token."""
    return haar_random_qubit(rng, "M")


def intercept_resend(photon: StateVector, rng: np.random.Generator) -> StateVector:
    """Measure an intercepted photon in a random equatorial basis and re-prepare
    the observed eigenstate."""
    basis = PhaseBasis(rng.uniform(0.0, TWO_PI))
    bit, _ = measure(photon, basis.kets(), ("P",), rng)
    return StateVector(basis.kets()[bit], ("P",))


# ---------------------------------------------------------------------------
# Single forgery round
# ---------------------------------------------------------------------------


def _issue(config: ProtocolConfig, rng) -> tuple[int, float, StateVector]:
    """Honest issuance to a legitimate user. Returns (m1, phi1, stored memory)."""
    nc = config.noise
    alpha = nz.sample_alpha(nc.alpha_spec, rng)
    theta1 = nz.sample_phase_noise(nc.sigma_theta, rng)
    phi1 = float(config.phi1) if config.phi1 is not None else float(rng.uniform(0.0, TWO_PI))
    state = entangle_photon_timebin(prepare_am_entanglement(alpha), theta1)
    m1, state = bank_issue(state, phi1, rng)
    mem = store_token(state)
    if nc.t_s > 0:
        mem = sample_channel(mem, nz.memory_dephasing_channel(nc.t_s, nc.t_m), ("M",), rng)
    return m1, phi1, mem


def forgery_round(strategy: AdversaryStrategy, config: ProtocolConfig, rng: np.random.Generator) -> bool:
    """One forged verification attempt against a freshly issued token."""
    nc = config.noise
    m1, phi1, honest_memory = _issue(config, rng)
    phi2 = phi1 - nc.delta_phi
    view = AdversaryView(m1=m1)

    if strategy.kind is StrategyKind.BLIND_GUESS:
        # announcements look like an honest user's; the detector outcome is guessed
        r1, r2 = int(rng.integers(2)), int(rng.integers(2))
        return verify(view.m1, forge_blind(rng), r1, r2)

    if strategy.kind is StrategyKind.RANDOM_STATE:
        return submit_token(forge_random_state(rng), view.m1, phi2, config, rng)

    if strategy.kind is StrategyKind.INTERCEPT_P2:
        # the honest user's BSM bits travel on the authenticated channel only
        state = reentangle_photon(honest_memory)
        _, _, state = nz.noisy_bsm(state, ("A", "M"), nc.f_bsm, rng, config.bsm_model)
        photon = _photon_marginal(state)
        resent = intercept_resend(photon, rng)
        r1, r2 = int(rng.integers(2)), int(rng.integers(2))
        m2 = verifier_measure(resent, r1, phi2, rng, config.active_correction)
        return verify(view.m1, m2, r1, r2)

    raise ValueError(f"unknown strategy {strategy.kind!r}")


def _photon_marginal(state: StateVector) -> StateVector:
    """After the BSM the photon is in a product state with the projected (A, M)
    pair; return it as a one-qubit pure state."""
    red = partial_trace(state, ("P",))
    w, v = np.linalg.eigh(red.matrix)
    return StateVector(v[:, int(np.argmax(w))], ("P",))


def submit_token(memory: StateVector, m1: int, phi2: float, config: ProtocolConfig, rng) -> bool:
    """Run the honest teleport-and-verify steps on whatever qubit is presented
    as the stored token."""
    nc = config.noise
    state = reentangle_photon(memory)
    r1, r2, state = nz.noisy_bsm(state, ("A", "M"), nc.f_bsm, rng, config.bsm_model)
    m2 = verifier_measure(state, r1, phi2, rng, config.active_correction)
    return verify(m1, m2, r1, r2)


def submit_token_exact(memory: StateVector, m1: int, phi2: float, active_correction: bool = True) -> float:
    """Acceptance probability of :func:`submit_token` with an ideal BSM, by
    summing over all BSM and verifier branches."""
    total = 0.0
    for (r1, r2), p, post in bell_branches(reentangle_photon(memory), ("A", "M")):
        if post is None:
            continue
        for m2, q, _ in verifier_branches(post, r1, phi2, active_correction):
            if verify(m1, m2, r1, r2):
                total += p * q
    return total


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------


@dataclass
class ForgeryResult:
    strategy: str
    n_rounds: int
    n_trials: int
    per_round_p: float
    per_round_ci: tuple[float, float]
    n_round_p: float
    n_round_ci: tuple[float, float]
    # survival[k-1]: fraction of trials whose first k rounds were all accepted
    survival: list[float]
    forge_bound_honest: float
    forge_bound_half: float
    epsilon_sound: float
    warnings: list = field(default_factory=list)

    @property
    def per_round_halfwidth(self) -> float:
        return (self.per_round_ci[1] - self.per_round_ci[0]) / 2.0

    @property
    def n_round_halfwidth(self) -> float:
        return (self.n_round_ci[1] - self.n_round_ci[0]) / 2.0

    def survival_ci(self, k: int) -> tuple[float, float]:
        return wilson_interval(round(self.survival[k - 1] * self.n_trials), self.n_trials)


def _survival_chunk(args) -> np.ndarray:
    strategy, config, n_rounds, seed, start, stop = args
    counts = np.zeros(n_rounds + 1, dtype=np.int64)
    for i in range(start, stop):
        rng = trial_rng(seed, i)
        k = 0
        while k < n_rounds and forgery_round(strategy, config, rng):
            k += 1
        counts[: k + 1] += 1
    return counts


def run_forgery_experiment(
    strategy: AdversaryStrategy,
    config: ProtocolConfig,
    n_rounds: int,
    n_trials: int,
    seed: int = 42,
    target_halfwidth: Optional[float] = None,
    workers: int = 1,
) -> SecurityReport:
    """Each trial plays up to ``n_rounds`` independent forgery rounds and stops
    at the first rejection (later rounds cannot change the all-accepted outcome).

    The per-round rate is taken from the first round of every trial, so it is
    an unbiased estimate over ``n_trials`` samples.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    workers = max(1, int(workers))
    bounds = np.linspace(0, n_trials, workers + 1).astype(int)
    chunks = [(strategy, config, n_rounds, seed, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if len(chunks) == 1:
        parts = [_survival_chunk(chunks[0])]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_survival_chunk, chunks))
    # passed_upto[k]: trials whose first k rounds were all accepted
    passed_upto = np.sum(parts, axis=0)
    first = int(passed_upto[1])
    all_n = int(passed_upto[n_rounds])
    honest = predicted_acceptance(config)
    result = ForgeryResult(
        strategy=strategy.kind.value,
        n_rounds=n_rounds,
        n_trials=n_trials,
        per_round_p=first / n_trials,
        per_round_ci=wilson_interval(first, n_trials),
        n_round_p=all_n / n_trials,
        n_round_ci=wilson_interval(all_n, n_trials),
        survival=[float(passed_upto[k]) / n_trials for k in range(1, n_rounds + 1)],
        forge_bound_honest=analytics.forge_bound(honest, n_rounds),
        forge_bound_half=0.5**n_rounds,
        epsilon_sound=analytics.soundness(honest, 0.5),
    )
    if target_halfwidth is not None and result.per_round_halfwidth > target_halfwidth:
        msg = (
            f"{n_trials} trials give CI half-width {result.per_round_halfwidth:.3g} "
            f"> requested {target_halfwidth:.3g}"
        )
        result.warnings.append(msg)
        log.info(msg)
    return SecurityReport(
        parameter_value=float(n_rounds),
        exact_p=float("nan"),
        mc_p=result.per_round_p,
        ci_lo=result.per_round_ci[0],
        ci_hi=result.per_round_ci[1],
        analytic_p=honest,
        soundness=result.epsilon_sound,
        forge_n=result.forge_bound_honest,
        n_trials=n_trials,
        forgery=result,
        warnings=list(result.warnings),
    )


def per_round_stderr(result: ForgeryResult) -> float:
    return standard_error(result.per_round_p, result.n_trials)


__all__ = [
    "AdversaryStrategy",
    "AdversaryView",
    "ForgeryResult",
    "StrategyKind",
    "forge_blind",
    "forge_random_state",
    "forgery_round",
    "intercept_resend",
    "run_forgery_experiment",
    "submit_token",
    "submit_token_exact",
]
