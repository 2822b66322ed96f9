"""Imperfection models: A-M preparation imbalance, apparatus phase noise,
memory dephasing, Bell-measurement infidelity and photon loss."""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import asdict, dataclass
from typing import Sequence, Union

import numpy as np

from .qcore import (
    I2,
    X,
    Y,
    Z,
    DensityMatrix,
    KrausChannel,
    QCoreError,
    State,
    StateVector,
    apply_channel,
    bell_measure,
    sample_channel,
)

ALPHA_MODES = ("fixed", "uniform")
BSM_MODELS = ("readout", "depolarizing")


class NoiseConfigError(ValueError):
    pass


@dataclass
class NoiseConfig:
    """Physical imperfections for one protocol run.

    ``t_s`` and ``t_m`` share whatever time unit the caller uses; only their
    ratio matters. ``delta_phi`` is the bank/verifier basis mismatch phi1 - phi2.
    """

    alpha_mode: str = "fixed"
    alpha: float = 0.5
    sigma_theta: float = 0.0
    delta_phi: float = 0.0
    t_s: float = 0.0
    t_m: float = 1.0
    f_bsm: float = 1.0
    p_loss: float = 0.0
    max_repetitions: int = 20

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.alpha_mode not in ALPHA_MODES:
            raise NoiseConfigError(f"alpha_mode must be one of {ALPHA_MODES}, got {self.alpha_mode!r}")
        checks = [
            ("alpha", 0.0 <= self.alpha <= 1.0, "must lie in [0, 1]"),
            ("sigma_theta", self.sigma_theta >= 0.0, "must be >= 0"),
            ("t_s", self.t_s >= 0.0, "must be >= 0"),
            ("t_m", self.t_m > 0.0, "must be > 0"),
            ("f_bsm", 0.0 <= self.f_bsm <= 1.0, "must lie in [0, 1]"),
            ("p_loss", 0.0 <= self.p_loss <= 1.0, "must lie in [0, 1]"),
            ("max_repetitions", int(self.max_repetitions) == self.max_repetitions and self.max_repetitions >= 1,
             "must be a positive integer"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise NoiseConfigError(f"{name} {msg} (got {getattr(self, name)!r})")
        if not math.isfinite(self.delta_phi):
            raise NoiseConfigError("delta_phi must be finite")

    @property
    def storage_ratio(self) -> float:
        return self.t_s / self.t_m

    @property
    def alpha_spec(self) -> Union[float, str]:
        """The fixed alpha value, or ``"uniform"``."""
        return self.alpha if self.alpha_mode == "fixed" else "uniform"

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


def sample_alpha(mode: Union[float, str], rng: np.random.Generator) -> float:
    """``mode`` is either a fixed alpha or the string ``"uniform"`` for alpha ~ U[0, 1]."""
    if isinstance(mode, str):
        if mode != "uniform":
            raise NoiseConfigError(f"unknown alpha mode {mode!r}")
        return float(rng.random())
    return float(mode)


def sample_phase_noise(sigma: float, rng: np.random.Generator) -> float:
    if sigma < 0:
        raise NoiseConfigError("sigma must be >= 0")
    if sigma == 0:
        return 0.0
    return float(rng.normal(0.0, sigma))


def attempt_photon(p_loss: float, rng: np.random.Generator) -> bool:
    """One heralded emission attempt; True when the photon arrives."""
    return bool(rng.random() >= p_loss)


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1024)
def phase_flip_channel(p: float) -> KrausChannel:
    if not 0.0 <= p <= 1.0:
        raise QCoreError("flip probability must lie in [0, 1]")
    return KrausChannel((math.sqrt(1 - p) * I2, math.sqrt(p) * Z), name=f"phase_flip({p:.6g})")


def dephasing_channel(coherence: float) -> KrausChannel:
    """Phase flip that multiplies single-qubit off-diagonals by ``coherence``."""
    return phase_flip_channel((1.0 - coherence) / 2.0)


def memory_dephasing_channel(t_s: float, t_m: float) -> KrausChannel:
    if t_m <= 0:
        raise NoiseConfigError("t_m must be > 0")
    if t_s < 0:
        raise NoiseConfigError("t_s must be >= 0")
    return dephasing_channel(math.exp(-t_s / t_m))


def phase_noise_channel(sigma: float) -> KrausChannel:
    """Gaussian average of diag(1, e^{i theta}), theta ~ N(0, sigma^2).

    The characteristic function gives an off-diagonal factor exp(-sigma^2/2),
    so the average is exactly a dephasing channel.
    """
    return dephasing_channel(math.exp(-sigma * sigma / 2.0))


_PAULIS = (I2, X, Y, Z)


@lru_cache(maxsize=256)
def depolarizing_channel(fidelity: float, num_qubits: int = 2) -> KrausChannel:
    """rho -> f rho + (1-f) Tr_targets(rho) (x) I/d on the target qubits."""
    if not 0.0 <= fidelity <= 1.0:
        raise QCoreError("fidelity must lie in [0, 1]")
    paulis = [np.array([[1.0]], dtype=complex)]
    for _ in range(num_qubits):
        paulis = [np.kron(a, b) for a in paulis for b in _PAULIS]
    n = len(paulis)
    w_rest = (1.0 - fidelity) / n
    ops = [math.sqrt(fidelity + w_rest) * paulis[0]] + [math.sqrt(w_rest) * p for p in paulis[1:]]
    return KrausChannel(tuple(ops), name=f"depolarizing({fidelity:.6g})")


# ---------------------------------------------------------------------------
# Bell measurement with imperfections
# ---------------------------------------------------------------------------


def noisy_bsm(
    state: StateVector,
    targets: Sequence[str],
    f_bsm: float,
    rng: np.random.Generator,
    model: str = "readout",
    labeling: dict | None = None,
) -> tuple[int, int, State]:
    """Bell measurement that is ideal with probability ``f_bsm``.

    ``readout``: on failure the state still collapses as for an ideal BSM but
    the reported bits are uniformly random. ``depolarizing``: a two-qubit
    depolarizing channel of fidelity ``f_bsm`` precedes an ideal BSM.
    """
    if not 0.0 <= f_bsm <= 1.0:
        raise NoiseConfigError("f_bsm must lie in [0, 1]")
    if model == "readout":
        r1, r2, collapsed = bell_measure(state, targets, rng, labeling)
        if f_bsm < 1.0 and rng.random() >= f_bsm:
            r1, r2 = int(rng.integers(2)), int(rng.integers(2))
        return r1, r2, collapsed
    if model == "depolarizing":
        if f_bsm < 1.0:
            ch = depolarizing_channel(f_bsm, 2)
            if isinstance(state, DensityMatrix):
                state = apply_channel(state, ch, targets)
            else:
                state = sample_channel(state, ch, targets, rng)
        return bell_measure(state, targets, rng, labeling)
    raise NoiseConfigError(f"unknown BSM model {model!r}")
