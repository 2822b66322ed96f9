"""Issue -> store -> teleport -> verify token lifecycle.

Register roles: ancilla spin ``A``, memory spin ``M``, photon ``P`` (the same
slot carries the issuance photon and, later, the verification photon).

Phase conventions
-----------------
The bank projects the issuance photon onto ``|+-_phi1>`` (detector D1 / D2).
Projection conjugates the basis phase, so the stored token is

    sqrt(a)|up> +- sqrt(1-a) e^{i(theta1 - phi1)} |down>

The verifier therefore reads the teleported photon in the basis the token was
written in, ``|+-_{-phi2}>`` (see :func:`token_basis`). With phi2 == phi1 and
no noise the verifier's bit obeys m2 = m1 ^ r1 ^ r2.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from . import noise as nz
from .qcore import (
    CNOT,
    H,
    SWAP,
    X,
    DensityMatrix,
    PhaseBasis,
    State,
    StateVector,
    apply_channel,
    apply_operator,
    bell_branches,
    discard_qubit,
    measure,
    measurement_branches,
    partial_trace,
    phase_gate,
    ry,
    sample_channel,
    tensor,
    _choose,
)

TWO_PI = 2 * math.pi
KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)
_S = 1 / math.sqrt(2)
X_BASIS = (np.array([_S, _S], dtype=complex), np.array([_S, -_S], dtype=complex))


class ProtocolError(RuntimeError):
    pass


class CustodyError(ProtocolError):
    """A party touched a qubit it does not hold, or the memory tried to leave the user."""


class PhotonLost(ProtocolError):
    """Every emission attempt within the repetition budget was lost."""


# ---------------------------------------------------------------------------
# Configuration and records
# ---------------------------------------------------------------------------


@dataclass
class ProtocolConfig:
    noise: nz.NoiseConfig = field(default_factory=nz.NoiseConfig)
    # sample Delta-theta ~ N(0, sigma^2) directly (theta2 = 0) instead of two
    # independent apparatus phases
    delta_mode: bool = True
    bsm_model: str = "readout"
    active_correction: bool = True
    # read the token out through the ancilla after a memory->ancilla SWAP
    swap_variant: bool = False
    # bank's secret phase; drawn uniformly per run when None
    phi1: Optional[float] = None
    # number of independent repetitions n used for the forgery bound
    repetitions: int = 1

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = nz.NoiseConfig(**self.noise)
        if self.bsm_model not in nz.BSM_MODELS:
            raise nz.NoiseConfigError(f"bsm_model must be one of {nz.BSM_MODELS}")
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise nz.NoiseConfigError("repetitions must be a positive integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TokenRecord:
    phi: float
    m1: int
    issued_at: int = 0

    def __post_init__(self):
        object.__setattr__(self, "phi", float(self.phi) % TWO_PI)
        if self.m1 not in (0, 1):
            raise ValueError("m1 must be a bit")


TRANSCRIPT_FIELDS = (
    "seed",
    "m1",
    "r1",
    "r2",
    "m2",
    "accepted",
    "repetitions_used",
    "sampled_alpha",
    "sampled_theta1",
    "sampled_theta2",
)


@dataclass
class Transcript:
    """Classical record of one run. ``m1 is None`` marks a run that ran out of
    photon attempts; such runs are failures, not rejections."""

    seed: Optional[int]
    m1: Optional[int]
    r1: Optional[int]
    r2: Optional[int]
    m2: Optional[int]
    accepted: bool
    repetitions_used: int
    sampled_alpha: float
    sampled_theta1: float
    sampled_theta2: float

    @property
    def failed(self) -> bool:
        return self.m1 is None

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, f) for f in TRANSCRIPT_FIELDS)

    def to_json_line(self) -> str:
        parts = []
        for f in TRANSCRIPT_FIELDS:
            v = getattr(self, f)
            if isinstance(v, float):
                parts.append(f'"{f}": {format(v, ".17g")}')
            else:
                parts.append(f'"{f}": {json.dumps(v)}')
        return "{" + ", ".join(parts) + "}"

    def to_csv_row(self) -> list[str]:
        row = []
        for f in TRANSCRIPT_FIELDS:
            v = getattr(self, f)
            if v is None:
                row.append("")
            elif isinstance(v, bool):
                row.append("true" if v else "false")
            elif isinstance(v, float):
                row.append(format(v, ".9g"))
            else:
                row.append(str(v))
        return row

    @classmethod
    def from_json_line(cls, line: str) -> "Transcript":
        d = json.loads(line)
        return cls(**{f: d[f] for f in TRANSCRIPT_FIELDS})


def transcripts_to_csv(transcripts: Sequence[Transcript]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRANSCRIPT_FIELDS)
    for t in transcripts:
        w.writerow(t.to_csv_row())
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Parties and the in-process channel
# ---------------------------------------------------------------------------


class Role(str, Enum):
    USER = "user"
    BANK = "bank"
    VERIFIER = "verifier"


@dataclass
class PartyState:
    role: Role
    held: set = field(default_factory=set)
    pending: dict = field(default_factory=dict)


class LogEntry(NamedTuple):
    role: Role
    op: str
    qubits: tuple


class Session:
    """Tracks qubit custody and classical messages between the three parties.

    Every quantum operation goes through :meth:`act`, which refuses to touch a
    qubit the acting party does not hold, and appends to :attr:`log`.
    """

    def __init__(self):
        self.parties = {r: PartyState(r) for r in Role}
        self.parties[Role.USER].held.update({"A", "M"})
        self.log: list[LogEntry] = []

    def holder(self, label: str) -> Optional[Role]:
        owners = [r for r, p in self.parties.items() if label in p.held]
        if len(owners) > 1:
            raise CustodyError(f"qubit {label} held by {owners}")
        return owners[0] if owners else None

    def act(self, role: Role, op: str, qubits: Sequence[str]) -> None:
        held = self.parties[role].held
        for q in qubits:
            if q not in held:
                raise CustodyError(f"{role.value} cannot {op} qubit {q} held by {self.holder(q)}")
        self.log.append(LogEntry(role, op, tuple(qubits)))

    def create(self, role: Role, label: str) -> None:
        if self.holder(label) is not None:
            raise CustodyError(f"qubit {label} already exists")
        self.parties[role].held.add(label)
        self.log.append(LogEntry(role, "create", (label,)))

    def transfer(self, src: Role, dst: Role, label: str) -> None:
        if label == "M":
            raise CustodyError("the memory qubit never leaves the user")
        self.act(src, f"send->{dst.value}", (label,))
        self.parties[src].held.discard(label)
        self.parties[dst].held.add(label)

    def consume(self, role: Role, label: str) -> None:
        self.act(role, "discard", (label,))
        self.parties[role].held.discard(label)

    def announce(self, src: Role, dst: Role, key: str, value) -> None:
        self.parties[dst].pending[key] = value
        self.log.append(LogEntry(src, f"announce:{key}->{dst.value}", ()))


# ---------------------------------------------------------------------------
# Quantum steps. These accept StateVector or DensityMatrix unless noted.
# ---------------------------------------------------------------------------


def _fresh(label: str, like: State) -> State:
    sv = StateVector(KET0, (label,))
    return sv.to_density() if isinstance(like, DensityMatrix) else sv


def _basis_phase(phi: Union[float, PhaseBasis]) -> PhaseBasis:
    return phi if isinstance(phi, PhaseBasis) else PhaseBasis(phi)


def token_basis(phi: Union[float, PhaseBasis]) -> PhaseBasis:
    """Basis the token is written in when the bank projects with phase ``phi``."""
    return PhaseBasis(-_basis_phase(phi).phi)


def _population_one(state: State, label: str) -> float:
    """Probability of finding ``label`` in |1>."""
    (p, _), = measurement_branches(state, (KET1,), (label,))
    return p


def prepare_am_entanglement(alpha: float, density: bool = False) -> State:
    """sqrt(alpha)|0,up> + sqrt(1-alpha)|-1,down> on (A, M).

    Rotation on the memory followed by a memory-controlled flip of the ancilla.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    state: State = StateVector.basis(("A", "M"), (0, 0))
    if density:
        state = state.to_density()
    state = apply_operator(state, ry(2 * math.acos(math.sqrt(alpha))), ("M",))
    return apply_operator(state, CNOT, ("M", "A"))


def entangle_photon_timebin(state: State, theta: float = 0.0) -> State:
    """Early photon for the |0> ancilla branch, late photon (with apparatus
    phase e^{i theta}) for the |-1> branch."""
    if "P" in state.labels:
        if _population_one(state, "P") > 1e-12 or partial_trace(state, ("P",)).purity() < 1 - 1e-10:
            raise ProtocolError("photon slot is not fresh |E>")
    else:
        state = tensor(state, _fresh("P", state))
    state = apply_operator(state, CNOT, ("A", "P"))
    if theta:
        state = apply_operator(state, phase_gate(theta), ("P",))
    return state


def bank_issue_branches(state: State, phi1: Union[float, PhaseBasis]) -> list[tuple[int, float, State | None]]:
    """(m1, probability, post-measurement A-M state) for both issuance outcomes."""
    kets = _basis_phase(phi1).kets()
    out = []
    for m1, (p, post) in enumerate(measurement_branches(state, kets, ("P",))):
        out.append((m1, p, None if post is None else discard_qubit(post, "P", kets[m1])))
    return out


def bank_issue(state: State, phi1: Union[float, PhaseBasis], rng: np.random.Generator) -> tuple[int, State]:
    kets = _basis_phase(phi1).kets()
    m1, post = measure(state, kets, ("P",), rng)
    return m1, discard_qubit(post, "P", kets[m1])


# time bin -> arm: early takes the long arm (|1>), late the short arm (|0>)
_ROUTE = X


def interferometer_branches(state: State, phi1: Union[float, PhaseBasis]) -> list[tuple[str, float, State | None]]:
    """Unbalanced Mach-Zehnder readout: route time bins onto arms, stretcher
    phase on the long arm, 50/50 recombination, click in D1 or D2."""
    phi = _basis_phase(phi1).phi
    routed = apply_operator(state, _ROUTE, ("P",))
    routed = apply_operator(routed, phase_gate(phi), ("P",))
    routed = apply_operator(routed, H, ("P",))
    out = []
    for det, ket in (("D1", KET0), ("D2", KET1)):
        (p, post), = measurement_branches(routed, (ket,), ("P",))
        out.append((det, p, None if post is None else discard_qubit(post, "P", ket)))
    return out


def interferometer_issue(state: State, phi1: Union[float, PhaseBasis], rng: np.random.Generator) -> tuple[str, State]:
    """Returns ("D1"|"D2", A-M state). D1 corresponds to m1 = 0.

    The collapsed state matches :func:`bank_issue` up to a global phase.
    """
    branches = interferometer_branches(state, phi1)
    i = _choose([p for _, p, _ in branches], rng)
    return branches[i][0], branches[i][2]


DETECTOR_BIT = {"D1": 0, "D2": 1}


def store_token(state: State) -> State:
    """Disentangle A from M with the memory-controlled flip; returns the memory alone."""
    state = apply_operator(state, CNOT, ("M", "A"))
    if _population_one(state, "A") > 1e-10:
        # for the pure register this also certifies reduced-state purity
        raise ProtocolError("ancilla still entangled after storage")
    if isinstance(state, StateVector):
        return discard_qubit(state, "A", KET0)
    return partial_trace(state, ("M",))


def reentangle_photon(state: State, theta2: float = 0.0) -> State:
    """Fresh ancilla-photon pair (|0,E> + e^{i theta2}|-1,L>)/sqrt(2) next to the memory.

    Accepts the memory alone or a register whose ancilla is already reset to |0>.
    """
    if "A" in state.labels:
        if _population_one(state, "A") > 1e-10:
            raise ProtocolError("ancilla not reset before re-entangling")
    else:
        state = tensor(_fresh("A", state), state)
    if "P" in state.labels:
        raise ProtocolError("verification photon slot already in use")
    state = tensor(state, _fresh("P", state))
    state = apply_operator(state, H, ("A",))
    state = apply_operator(state, CNOT, ("A", "P"))
    if theta2:
        state = apply_operator(state, phase_gate(theta2), ("P",))
    return state


def swap_memory_to_ancilla(state: State) -> State:
    """SWAP M and A; adds a |0> ancilla first if the register has none."""
    if "A" not in state.labels:
        state = tensor(_fresh("A", state), state)
    return apply_operator(state, SWAP, ("M", "A"))


def emit_from_ancilla(state: State, theta2: float = 0.0) -> State:
    """Time-bin emission from an ancilla that already carries the token."""
    if "P" in state.labels:
        raise ProtocolError("verification photon slot already in use")
    state = tensor(state, _fresh("P", state))
    state = apply_operator(state, CNOT, ("A", "P"))
    if theta2:
        state = apply_operator(state, phase_gate(theta2), ("P",))
    return state


def verifier_branches(
    state: State, r1: int, phi2: Union[float, PhaseBasis], active_correction: bool = True
) -> list[tuple[int, float, State | None]]:
    if active_correction and r1:
        state = apply_operator(state, X, ("P",))
    kets = token_basis(phi2).kets()
    return [(m2, p, s) for m2, (p, s) in enumerate(measurement_branches(state, kets, ("P",)))]


def verifier_measure(
    state: State, r1: int, phi2, rng: np.random.Generator, active_correction: bool = True
) -> int:
    if active_correction and r1:
        state = apply_operator(state, X, ("P",))
    return measure(state, token_basis(phi2).kets(), ("P",), rng)[0]


class TeleportResult(NamedTuple):
    r1: int
    r2: int
    m2: int


def teleport_and_verify(
    state: State,
    phi2: Union[float, PhaseBasis],
    rng: np.random.Generator,
    active_correction: bool = True,
    f_bsm: float = 1.0,
    bsm_model: str = "readout",
    labeling: dict | None = None,
) -> TeleportResult:
    """BSM on (A, M), optional X correction on P when r1 = 1, then the verifier's
    phase-basis measurement of P."""
    r1, r2, post = nz.noisy_bsm(state, ("A", "M"), f_bsm, rng, bsm_model, labeling)
    m2 = verifier_measure(post, r1, phi2, rng, active_correction)
    return TeleportResult(r1, r2, m2)


def ancilla_readout(
    state: State, f_bsm: float, rng: np.random.Generator, bsm_model: str = "readout"
) -> tuple[int, int, State]:
    """Readout of the SWAP variant: X-basis measurement of the token-carrying
    ancilla. Reported as (r1, r2) = (0, x) so the Z correction is still r1 ^ r2."""
    if bsm_model == "depolarizing" and f_bsm < 1.0:
        ch = nz.depolarizing_channel(f_bsm, 2)
        state = apply_channel(state, ch, ("A", "M")) if isinstance(state, DensityMatrix) else sample_channel(state, ch, ("A", "M"), rng)
    branches = measurement_branches(state, X_BASIS, ("A",))
    x = _choose([p for p, _ in branches], rng)
    r1, r2 = 0, x
    if bsm_model == "readout" and f_bsm < 1.0 and rng.random() >= f_bsm:
        r1, r2 = int(rng.integers(2)), int(rng.integers(2))
    return r1, r2, branches[x][1]


def verify(m1: int, m2: int, r1: int, r2: int) -> bool:
    """Strong verification condition m2 == m1 ^ (r1 ^ r2)."""
    for b in (m1, m2, r1, r2):
        if b not in (0, 1):
            raise ValueError("verification inputs must be bits")
    return m2 == m1 ^ (r1 ^ r2)


# ---------------------------------------------------------------------------
# Honest run (sampled) and exact branch enumeration
# ---------------------------------------------------------------------------


def _sample_thetas(config: ProtocolConfig, rng) -> tuple[float, float]:
    sigma = config.noise.sigma_theta
    theta1 = nz.sample_phase_noise(sigma, rng)
    theta2 = 0.0 if config.delta_mode else nz.sample_phase_noise(sigma, rng)
    return theta1, theta2


def _attempts(noise: nz.NoiseConfig, rng, session: Session, stage: str) -> Optional[int]:
    for k in range(1, noise.max_repetitions + 1):
        if nz.attempt_photon(noise.p_loss, rng):
            return k
        session.log.append(LogEntry(Role.USER, f"photon_lost:{stage}", ()))
    return None


def run_honest_protocol(
    config: ProtocolConfig,
    rng: np.random.Generator,
    seed: Optional[int] = None,
    session: Optional[Session] = None,
    labeling: dict | None = None,
) -> Transcript:
    """Sample one honest issue/store/verify run with every configured imperfection.

    Memory dephasing and depolarizing BSM noise are unravelled as quantum
    trajectories; their average over runs equals the density-matrix result.
    """
    nc = config.noise
    sess = session if session is not None else Session()
    alpha = nz.sample_alpha(nc.alpha_spec, rng)
    theta1, theta2 = _sample_thetas(config, rng)
    phi1 = float(config.phi1) if config.phi1 is not None else float(rng.uniform(0.0, TWO_PI))

    def failed(reps):
        return Transcript(seed, None, None, None, None, False, reps, alpha, theta1, theta2)

    # Steps 1-3: issuance, repeated until the photon reaches the bank
    n_issue = _attempts(nc, rng, sess, "issue")
    if n_issue is None:
        return failed(nc.max_repetitions)
    sess.act(Role.USER, "prepare_am", ("A", "M"))
    state = prepare_am_entanglement(alpha)
    sess.create(Role.USER, "P")
    sess.act(Role.USER, "emit_timebin", ("A", "P"))
    state = entangle_photon_timebin(state, theta1)
    sess.transfer(Role.USER, Role.BANK, "P")
    sess.act(Role.BANK, "measure_phase_basis", ("P",))
    m1, state = bank_issue(state, phi1, rng)
    sess.consume(Role.BANK, "P")
    record = TokenRecord(phi1, m1)
    sess.announce(Role.BANK, Role.USER, "m1", m1)
    sess.announce(Role.BANK, Role.VERIFIER, "token", (record.phi, record.m1))

    # Step 4: storage
    sess.act(Role.USER, "store_cnot", ("M", "A"))
    state = store_token(state)
    if nc.t_s > 0:
        sess.act(Role.USER, "dephase", ("M",))
        state = sample_channel(state, nz.memory_dephasing_channel(nc.t_s, nc.t_m), ("M",), rng)

    # Steps 5-7: verification, repeated until the photon reaches the verifier
    n_verify = _attempts(nc, rng, sess, "verify")
    if n_verify is None:
        return failed(n_issue + nc.max_repetitions - 1)
    sess.create(Role.USER, "P")
    if config.swap_variant:
        sess.act(Role.USER, "swap", ("M", "A"))
        state = swap_memory_to_ancilla(state)
        sess.act(Role.USER, "emit_timebin", ("A", "P"))
        state = emit_from_ancilla(state, theta2)
        sess.transfer(Role.USER, Role.VERIFIER, "P")
        sess.act(Role.USER, "ancilla_readout", ("A", "M"))
        r1, r2, state = ancilla_readout(state, nc.f_bsm, rng, config.bsm_model)
    else:
        sess.act(Role.USER, "reset_entangle", ("A", "P"))
        state = reentangle_photon(state, theta2)
        sess.transfer(Role.USER, Role.VERIFIER, "P")
        sess.act(Role.USER, "bsm", ("A", "M"))
        r1, r2, state = nz.noisy_bsm(state, ("A", "M"), nc.f_bsm, rng, config.bsm_model, labeling)
    sess.announce(Role.USER, Role.VERIFIER, "r1", r1)
    sess.announce(Role.USER, Role.VERIFIER, "r2", r2)
    sess.act(Role.VERIFIER, "correct_and_measure", ("P",))
    bank_phi, bank_m1 = sess.parties[Role.VERIFIER].pending["token"]
    m2 = verifier_measure(state, r1, bank_phi - nc.delta_phi, rng, config.active_correction)
    accepted = verify(bank_m1, m2, r1, r2)
    return Transcript(seed, m1, r1, r2, m2, accepted, n_issue + n_verify - 1, alpha, theta1, theta2)


def _reported(true_bits: tuple[int, int], f_bsm: float, model: str) -> list[tuple[tuple[int, int], float]]:
    if model != "readout" or f_bsm >= 1.0:
        return [(true_bits, 1.0)]
    rest = (1.0 - f_bsm) / 4.0
    return [((a, b), rest + (f_bsm if (a, b) == true_bits else 0.0)) for a in (0, 1) for b in (0, 1)]


def exact_distribution(
    config: ProtocolConfig,
    alpha: Optional[float] = None,
    phi1: Optional[float] = None,
    labeling: dict | None = None,
) -> dict[tuple[int, int, int, int], float]:
    """Exact probability of every (m1, r1, r2, m2) by density-matrix evolution
    and enumeration of all measurement branches (photon loss excluded: it only
    delays a run).

    Gaussian phase noise enters as its exact average, a dephasing channel on
    the photon with coherence exp(-sigma^2/2).
    """
    nc = config.noise
    if alpha is None:
        if nc.alpha_mode != "fixed":
            raise ValueError("continuous alpha needs an explicit alpha value")
        alpha = nc.alpha
    phi1 = (config.phi1 if config.phi1 is not None else 0.0) if phi1 is None else phi1
    phi2 = phi1 - nc.delta_phi
    sigma = nc.sigma_theta
    noise_ch = nz.phase_noise_channel(sigma) if sigma > 0 else None
    model = config.bsm_model
    dep = nz.depolarizing_channel(nc.f_bsm, 2) if model == "depolarizing" and nc.f_bsm < 1 else None

    rho = entangle_photon_timebin(prepare_am_entanglement(alpha, density=True))
    if noise_ch is not None:
        rho = apply_channel(rho, noise_ch, ("P",))

    dist: dict = defaultdict(float)
    for m1, p1, am in bank_issue_branches(rho, phi1):
        if am is None:
            continue
        mem = store_token(am)
        if nc.t_s > 0:
            mem = apply_channel(mem, nz.memory_dephasing_channel(nc.t_s, nc.t_m), ("M",))
        if config.swap_variant:
            st = emit_from_ancilla(swap_memory_to_ancilla(mem))
        else:
            st = reentangle_photon(mem)
        if noise_ch is not None and not config.delta_mode:
            st = apply_channel(st, noise_ch, ("P",))
        if dep is not None:
            st = apply_channel(st, dep, ("A", "M"))
        if config.swap_variant:
            readout = [((0, x), p, s) for x, (p, s) in enumerate(measurement_branches(st, X_BASIS, ("A",)))]
        else:
            readout = bell_branches(st, ("A", "M"), labeling)
        for bits, p2, post in readout:
            if post is None:
                continue
            for (q1, q2), pr in _reported(bits, nc.f_bsm, model):
                for m2, p3, _ in verifier_branches(post, q1, phi2, config.active_correction):
                    dist[(m1, q1, q2, m2)] += p1 * p2 * pr * p3
    return dict(dist)


def acceptance_from_distribution(dist: dict) -> float:
    return float(sum(p for (m1, r1, r2, m2), p in dist.items() if m2 == m1 ^ r1 ^ r2))
