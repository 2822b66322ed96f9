"""Dense state-vector / density-matrix engine for a handful of qubits.

Qubits are addressed by label. Matrices and amplitude vectors are laid out
with the first label as the most significant bit, so a register ordered
``("A", "M", "P")`` has basis index ``4*a + 2*m + p``.

Computational basis conventions used throughout the package:

    ancilla  A : |0>  = m_s=0,      |1> = m_s=-1
    memory   M : |0>  = up,         |1> = down
    photon   P : |0>  = early (E),  |1> = late (L)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

ATOL = 1e-12
PSD_FLOOR = 1e-10
DEGENERATE_PROB = 1e-15


class QCoreError(ValueError):
    """Raised for malformed states, gates, channels or qubit addressing."""


# ---------------------------------------------------------------------------
# Gates
# ---------------------------------------------------------------------------

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
SWAP = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
)


def phase_gate(theta: float) -> np.ndarray:
    """diag(1, e^{i theta}): phase on the |1> (late / m_s=-1 / down) branch."""
    return np.array([[1, 0], [0, np.exp(1j * theta)]], dtype=complex)


def ry(angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


BUILTIN_GATES = {"I": I2, "X": X, "Y": Y, "Z": Z, "H": H, "CNOT": CNOT, "SWAP": SWAP}


def is_unitary(u: np.ndarray, atol: float = ATOL) -> bool:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return bool(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) < atol)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


def _check_labels(labels: Sequence[str], dim: int) -> tuple[str, ...]:
    labels = tuple(labels)
    if len(set(labels)) != len(labels):
        raise QCoreError(f"duplicate qubit labels {labels}")
    if dim != 2 ** len(labels):
        raise QCoreError(f"dimension {dim} does not match {len(labels)} qubit labels")
    return labels


@dataclass
class StateVector:
    amplitudes: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        self.labels = _check_labels(self.labels, self.amplitudes.size)

    @classmethod
    def _raw(cls, amplitudes: np.ndarray, labels: tuple[str, ...]) -> "StateVector":
        obj = object.__new__(cls)
        obj.amplitudes = amplitudes
        obj.labels = labels
        return obj

    @classmethod
    def basis(cls, labels: Sequence[str], bits: Sequence[int]) -> "StateVector":
        labels = tuple(labels)
        if len(bits) != len(labels):
            raise QCoreError("one bit per label required")
        amps = np.zeros(2 ** len(labels), dtype=complex)
        amps[int("".join(str(int(b)) for b in bits) or "0", 2)] = 1.0
        return cls(amps, labels)

    @classmethod
    def from_amplitudes(cls, amplitudes, labels: Sequence[str]) -> "StateVector":
        """Build a state, rejecting anything not normalized to ATOL."""
        sv = cls(amplitudes, tuple(labels))
        if abs(sv.norm() - 1.0) > ATOL:
            raise QCoreError(f"state not normalized (norm={sv.norm()!r})")
        return sv

    @property
    def num_qubits(self) -> int:
        return len(self.labels)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.labels)

    def to_density(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(np.outer(a, a.conj()), self.labels)


@dataclass
class DensityMatrix:
    matrix: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise QCoreError("density matrix must be square")
        self.labels = _check_labels(self.labels, self.matrix.shape[0])

    @classmethod
    def _raw(cls, matrix: np.ndarray, labels: tuple[str, ...]) -> "DensityMatrix":
        obj = object.__new__(cls)
        obj.matrix = matrix
        obj.labels = labels
        return obj

    @classmethod
    def maximally_mixed(cls, labels: Sequence[str]) -> "DensityMatrix":
        d = 2 ** len(labels)
        return cls(np.eye(d, dtype=complex) / d, tuple(labels))

    @property
    def num_qubits(self) -> int:
        return len(self.labels)

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.matrix.copy(), self.labels)

    def check(self) -> None:
        """Raise QCoreError unless Hermitian, unit trace and PSD."""
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > ATOL:
            raise QCoreError("density matrix not Hermitian")
        if abs(self.trace() - 1.0) > ATOL:
            raise QCoreError(f"density matrix trace {self.trace()!r} != 1")
        if np.min(np.linalg.eigvalsh(m)) < -PSD_FLOOR:
            raise QCoreError("density matrix not positive semidefinite")


State = Union[StateVector, DensityMatrix]


@dataclass(frozen=True)
class KrausChannel:
    """A CPTP map given by Kraus operators on ``2**k``-dimensional space."""

    operators: tuple[np.ndarray, ...]
    name: str = field(default="channel", compare=False)

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.operators)
        if not ops:
            raise QCoreError("channel needs at least one Kraus operator")
        d = ops[0].shape[0]
        if any(k.shape != (d, d) for k in ops) or d & (d - 1):
            raise QCoreError("Kraus operators must share a 2^k x 2^k shape")
        total = sum(k.conj().T @ k for k in ops)
        if np.max(np.abs(total - np.eye(d))) > ATOL:
            raise QCoreError(f"Kraus operators of {self.name!r} are not complete")
        object.__setattr__(self, "operators", ops)

    @property
    def num_qubits(self) -> int:
        return int(self.operators[0].shape[0]).bit_length() - 1

    def then(self, other: "KrausChannel") -> "KrausChannel":
        """Channel applying ``self`` first, then ``other``."""
        ops = tuple(b @ a for a in self.operators for b in other.operators)
        return KrausChannel(ops, name=f"{other.name}.{self.name}")

    def superoperator(self) -> np.ndarray:
        """Column-stacking superoperator, for exact channel comparisons."""
        return sum(np.kron(k.conj(), k) for k in self.operators)


@dataclass(frozen=True)
class PhaseBasis:
    """Equatorial time-bin basis |+-_phi> = (|E> +- e^{i phi}|L>)/sqrt(2)."""

    phi: float

    def __post_init__(self):
        object.__setattr__(self, "phi", float(self.phi) % (2 * math.pi))

    def kets(self) -> tuple[np.ndarray, np.ndarray]:
        w = np.exp(1j * self.phi)
        s = 1 / math.sqrt(2)
        return (
            np.array([s, s * w], dtype=complex),
            np.array([s, -s * w], dtype=complex),
        )


# ---------------------------------------------------------------------------
# Low-level tensor plumbing
# ---------------------------------------------------------------------------


def _axes(labels: tuple[str, ...], targets: Sequence[str]) -> list[int]:
    if isinstance(targets, str):
        targets = (targets,)
    if len(set(targets)) != len(targets):
        raise QCoreError(f"repeated target in {tuple(targets)}")
    try:
        return [labels.index(t) for t in targets]
    except ValueError:
        raise QCoreError(f"targets {tuple(targets)} not all in register {labels}") from None


@lru_cache(maxsize=256)
def _perm(n: int, axes: tuple[int, ...]) -> np.ndarray:
    """Basis indices reordered so the target qubits become most significant."""
    order = list(axes) + [i for i in range(n) if i not in axes]
    return np.arange(2**n).reshape((2,) * n).transpose(order).reshape(-1)


def _check_op(op: np.ndarray, k: int) -> None:
    if op.shape != (2**k, 2**k):
        raise QCoreError(f"operator shape {op.shape} does not act on {k} qubit(s)")


def _apply_to_vector(vec: np.ndarray, n: int, op: np.ndarray, axes: list[int]) -> np.ndarray:
    k = len(axes)
    _check_op(op, k)
    idx = _perm(n, tuple(axes))
    out = np.empty_like(vec)
    out[idx] = (op @ vec[idx].reshape(2**k, -1)).reshape(-1)
    return out


def _apply_to_matrix(rho: np.ndarray, n: int, op: np.ndarray, axes: list[int]) -> np.ndarray:
    k = len(axes)
    _check_op(op, k)
    idx = _perm(n, tuple(axes))
    full = np.kron(op, np.eye(2 ** (n - k)))
    sub = full @ rho[np.ix_(idx, idx)] @ full.conj().T
    out = np.empty_like(sub)
    out[np.ix_(idx, idx)] = sub
    return out


def apply_operator(state: State, op: np.ndarray, targets: Sequence[str]) -> State:
    """Apply an arbitrary (not necessarily unitary) operator, no normalization.

    For density matrices this is ``op rho op^dagger``.
    """
    axes = _axes(state.labels, targets)
    op = np.asarray(op, dtype=complex)
    if isinstance(state, StateVector):
        return StateVector._raw(_apply_to_vector(state.amplitudes, state.num_qubits, op, axes), state.labels)
    return DensityMatrix._raw(_apply_to_matrix(state.matrix, state.num_qubits, op, axes), state.labels)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def tensor(a: State, b: State) -> State:
    """Kronecker product, ``a``'s labels first. Both operands must be the same kind."""
    if set(a.labels) & set(b.labels):
        raise QCoreError(f"overlapping labels {set(a.labels) & set(b.labels)}")
    labels = a.labels + b.labels
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector._raw(np.outer(a.amplitudes, b.amplitudes).reshape(-1), labels)
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(np.kron(a.matrix, b.matrix), labels)
    raise QCoreError("cannot tensor a StateVector with a DensityMatrix")


def apply_unitary(state: State, u: np.ndarray, targets: Sequence[str]) -> State:
    u = np.asarray(u, dtype=complex)
    if not is_unitary(u):
        raise QCoreError("gate is not unitary")
    return apply_operator(state, u, targets)


def _sv_projections(state: StateVector, kets: Sequence[np.ndarray], targets: Sequence[str]):
    axes = _axes(state.labels, targets)
    idx = _perm(state.num_qubits, tuple(axes))
    block = state.amplitudes[idx].reshape(2 ** len(axes), -1)
    kets = [np.asarray(k, dtype=complex) for k in kets]
    coeffs = [k.conj() @ block for k in kets]
    probs = [float(np.real(np.vdot(c, c))) for c in coeffs]
    return idx, kets, coeffs, probs


def _sv_collapse(state: StateVector, idx, ket, coeff, p) -> StateVector:
    amps = np.empty(state.amplitudes.size, dtype=complex)
    amps[idx] = np.outer(ket, coeff / math.sqrt(p)).reshape(-1)
    return StateVector._raw(amps, state.labels)


def measurement_branches(
    state: State, kets: Sequence[np.ndarray], targets: Sequence[str]
) -> list[tuple[float, State | None]]:
    """Born probabilities and collapsed (renormalized) states for a projective
    measurement onto the orthonormal ``kets`` over ``targets``.

    The measured qubits stay in the register, collapsed onto the ket. Branches
    with probability below 1e-15 get ``None`` as their state.
    """
    if isinstance(state, StateVector):
        idx, kets, coeffs, probs = _sv_projections(state, kets, targets)
        return [
            (p, _sv_collapse(state, idx, k, c, p) if p > DEGENERATE_PROB else None)
            for k, c, p in zip(kets, coeffs, probs)
        ]
    axes = _axes(state.labels, targets)
    out: list[tuple[float, State | None]] = []
    for ket in kets:
        ket = np.asarray(ket, dtype=complex)
        branch = _apply_to_matrix(state.matrix, state.num_qubits, np.outer(ket, ket.conj()), axes)
        p = float(np.real(np.trace(branch)))
        out.append((p, DensityMatrix._raw(branch / p, state.labels) if p > DEGENERATE_PROB else None))
    return out


def _choose(probs: Sequence[float], rng: np.random.Generator) -> int:
    total = sum(probs)
    if total < DEGENERATE_PROB:
        raise QCoreError("all measurement outcomes have vanishing probability")
    u = rng.random() * total
    acc = 0.0
    last = 0
    for i, p in enumerate(probs):
        if p <= DEGENERATE_PROB:
            continue
        last = i
        acc += p
        if u < acc:
            return i
    return last


def measure(
    state: State, kets: Sequence[np.ndarray], targets: Sequence[str], rng: np.random.Generator
) -> tuple[int, State]:
    if isinstance(state, StateVector):
        # only the selected branch is materialized
        idx, kets, coeffs, probs = _sv_projections(state, kets, targets)
        i = _choose(probs, rng)
        return i, _sv_collapse(state, idx, kets[i], coeffs[i], probs[i])
    branches = measurement_branches(state, kets, targets)
    i = _choose([p for p, _ in branches], rng)
    return i, branches[i][1]


def measure_in_phase_basis(
    state: State, target: str, basis: PhaseBasis, rng: np.random.Generator
) -> tuple[int, State]:
    """Bit 0 for |+_phi>, bit 1 for |-_phi>. The measured qubit stays in the register."""
    return measure(state, basis.kets(), (target,), rng)


_s = 1 / math.sqrt(2)
PHI_PLUS = np.array([_s, 0, 0, _s], dtype=complex)
PHI_MINUS = np.array([_s, 0, 0, -_s], dtype=complex)
PSI_PLUS = np.array([0, _s, _s, 0], dtype=complex)
PSI_MINUS = np.array([0, _s, -_s, 0], dtype=complex)

# (r1, r2) -> Bell state. r1 flags the X part of the teleportation byproduct,
# r1 ^ r2 flags the Z part.
BELL_LABELS: dict[tuple[int, int], np.ndarray] = {
    (0, 0): PHI_PLUS,
    (0, 1): PHI_MINUS,
    (1, 1): PSI_PLUS,
    (1, 0): PSI_MINUS,
}


def bell_branches(
    state: State, targets: Sequence[str], labeling: dict | None = None
) -> list[tuple[tuple[int, int], float, State | None]]:
    labeling = BELL_LABELS if labeling is None else labeling
    targets = tuple(targets)
    if len(targets) != 2 or targets[0] == targets[1]:
        raise QCoreError("Bell measurement needs two distinct qubits")
    outcomes = list(labeling)
    branches = measurement_branches(state, [labeling[o] for o in outcomes], targets)
    return [(o, p, s) for o, (p, s) in zip(outcomes, branches)]


def bell_measure(
    state: State, targets: Sequence[str], rng: np.random.Generator, labeling: dict | None = None
) -> tuple[int, int, State]:
    labeling = BELL_LABELS if labeling is None else labeling
    targets = tuple(targets)
    if len(targets) != 2 or targets[0] == targets[1]:
        raise QCoreError("Bell measurement needs two distinct qubits")
    outcomes = list(labeling)
    i, collapsed = measure(state, [labeling[o] for o in outcomes], targets, rng)
    r1, r2 = outcomes[i]
    return r1, r2, collapsed


def apply_channel(rho: DensityMatrix, ch: KrausChannel, targets: Sequence[str]) -> DensityMatrix:
    if not isinstance(rho, DensityMatrix):
        raise QCoreError("apply_channel needs a DensityMatrix; use sample_channel for trajectories")
    axes = _axes(rho.labels, targets)
    if len(axes) != ch.num_qubits:
        raise QCoreError(f"channel acts on {ch.num_qubits} qubit(s), got {len(axes)} targets")
    n = rho.num_qubits
    out = sum(_apply_to_matrix(rho.matrix, n, k, axes) for k in ch.operators)
    return DensityMatrix(out, rho.labels)


def sample_channel(
    state: StateVector, ch: KrausChannel, targets: Sequence[str], rng: np.random.Generator
) -> StateVector:
    """One quantum-trajectory step: pick Kraus operator k with probability
    ||K_k psi||^2 and renormalize. Averaging over draws reproduces apply_channel."""
    axes = _axes(state.labels, targets)
    n = state.num_qubits
    candidates = [_apply_to_vector(state.amplitudes, n, k, axes) for k in ch.operators]
    probs = [float(np.real(np.vdot(c, c))) for c in candidates]
    i = _choose(probs, rng)
    return StateVector._raw(candidates[i] / math.sqrt(probs[i]), state.labels)


def partial_trace(rho: State, keep: Sequence[str]) -> DensityMatrix:
    """Reduced state on ``keep``; the result keeps the register's label order."""
    if isinstance(keep, str):
        keep = (keep,)
    if not keep:
        raise QCoreError("partial_trace needs at least one qubit to keep")
    if isinstance(rho, StateVector):
        rho = rho.to_density()
    _axes(rho.labels, keep)
    n = rho.num_qubits
    kept = [i for i, lab in enumerate(rho.labels) if lab in keep]
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n])
    cols = list(letters[n : 2 * n])
    for i in range(n):
        if i not in kept:
            cols[i] = rows[i]
    out_idx = "".join(rows[i] for i in kept) + "".join(cols[i] for i in kept)
    t = np.einsum("".join(rows) + "".join(cols) + "->" + out_idx, rho.matrix.reshape((2,) * (2 * n)))
    d = 2 ** len(kept)
    return DensityMatrix(t.reshape(d, d), tuple(rho.labels[i] for i in kept))


def discard_qubit(state: State, label: str, ket: np.ndarray | None = None) -> State:
    """Remove ``label`` from the register.

    For a state vector the qubit must be in a product state with the rest;
    pass the known single-qubit ``ket`` to fix the global phase, otherwise the
    dominant eigenvector of the reduced state is used. Density matrices are
    simply traced.
    """
    if isinstance(state, DensityMatrix):
        return partial_trace(state, [x for x in state.labels if x != label])
    axis = _axes(state.labels, (label,))[0]
    if ket is None:
        red = partial_trace(state, (label,))
        if red.purity() < 1 - PSD_FLOOR:
            raise QCoreError(f"qubit {label} is entangled with the register")
        w, v = np.linalg.eigh(red.matrix)
        ket = v[:, int(np.argmax(w))]
    ket = np.asarray(ket, dtype=complex)
    block = state.amplitudes[_perm(state.num_qubits, (axis,))].reshape(2, -1)
    rest = ket.conj() @ block
    nrm = math.sqrt(float(np.real(np.vdot(rest, rest))))
    if abs(nrm - 1.0) > 1e-9:
        raise QCoreError(f"qubit {label} is not in the given product state")
    labels = tuple(x for x in state.labels if x != label)
    return StateVector._raw(rest / nrm, labels)


def fidelity(rho: State, psi: StateVector) -> float:
    """<psi|rho|psi> for a pure reference state."""
    if isinstance(rho, StateVector):
        rho = rho.to_density()
    if rho.matrix.shape[0] != psi.amplitudes.size:
        raise QCoreError("dimension mismatch between state and reference")
    val = np.vdot(psi.amplitudes, rho.matrix @ psi.amplitudes)
    if abs(val.imag) > ATOL:
        raise QCoreError("fidelity has an imaginary part; rho not Hermitian?")
    return float(min(1.0, max(0.0, val.real)))


def outcome_distribution(state: State, targets: Sequence[str], kets: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([p for p, _ in measurement_branches(state, kets, targets)])


def haar_random_qubit(rng: np.random.Generator, label: str = "M") -> StateVector:
    z = rng.normal(size=2) + 1j * rng.normal(size=2)
    return StateVector(z / np.linalg.norm(z), (label,))


def random_state(rng: np.random.Generator, labels: Sequence[str]) -> StateVector:
    d = 2 ** len(labels)
    z = rng.normal(size=d) + 1j * rng.normal(size=d)
    return StateVector(z / np.linalg.norm(z), tuple(labels))
