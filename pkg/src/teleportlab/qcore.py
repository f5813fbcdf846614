"""Complex linear algebra over small labeled qubit registers.

States and operators carry an ordered tuple of qubit labels. Ordering is
big-endian: the first label is the most significant bit of the basis index,
so ``|q1 q2⟩`` with ``q1=1, q2=0`` is basis index 2. Everything is dense;
registers are at most a handful of qubits.

Conventions fixed here and relied on everywhere else:

* CNOT matrices list the control qubit first in ``targets``.
* Logical/polarization dictionary: ``|0⟩=|H⟩``, ``|1⟩=|V⟩``,
  ``|+⟩=(|0⟩+|1⟩)/√2=|D⟩``, ``|i⟩=(|0⟩+i|1⟩)/√2=|R⟩``,
  ``|−⟩=(|0⟩−|1⟩)/√2``.
* Wave plates use the Jones convention
  ``HWP(θ) = [[cos2θ, sin2θ], [sin2θ, −cos2θ]]`` and
  ``QWP(θ) = e^{−iπ/4} R(θ) diag(1, i) R(−θ)`` (fast axis at θ). Under
  this sign choice ``QWP(−π/4)|H⟩ = |i⟩`` up to global phase.
* States compare equal up to a global phase; the comparison divides out
  the phase of the largest-magnitude amplitude.
"""

from __future__ import annotations

import enum
import json
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ATOL_NORM",
    "ATOL_HERM",
    "EIG_CLAMP",
    "BasisKet",
    "PureState",
    "DensityMatrix",
    "Gate",
    "identity_gate",
    "x_gate",
    "y_gate",
    "z_gate",
    "hadamard",
    "cnot",
    "hwp",
    "qwp",
    "bell_state",
    "tensor",
    "apply",
    "apply_kraus",
    "embed_operator",
    "partial_trace",
    "matrix_sqrt_psd",
    "projector",
    "phase_normalized",
    "states_equal",
    "matrix_to_json_dict",
    "matrix_from_json_dict",
]

ATOL_NORM = 1e-12   # state normalization tolerance
ATOL_HERM = 1e-10   # hermiticity / trace / unitarity tolerance
EIG_CLAMP = 1e-9    # eigenvalues in [-EIG_CLAMP, 0) clamp to 0

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)

PAULIS_1Q = {"I": I2, "X": X, "Y": Y, "Z": Z}


class BasisKet(enum.Enum):
    """Single-qubit preparation/analysis kets used throughout the lab."""

    ZERO = "0"
    ONE = "1"
    PLUS = "+"
    MINUS = "-"
    PLUS_I = "i"

    @property
    def vector(self) -> np.ndarray:
        return _KET_VECTORS[self].copy()

    @classmethod
    def from_token(cls, token: str) -> "BasisKet":
        try:
            return cls(token)
        except ValueError:
            raise ValueError(
                f"unknown basis token {token!r}; expected one of 0, 1, +, -, i"
            ) from None


_KET_VECTORS = {
    BasisKet.ZERO: np.array([1, 0], dtype=complex),
    BasisKet.ONE: np.array([0, 1], dtype=complex),
    BasisKet.PLUS: np.array([1, 1], dtype=complex) / np.sqrt(2),
    BasisKet.MINUS: np.array([1, -1], dtype=complex) / np.sqrt(2),
    BasisKet.PLUS_I: np.array([1, 1j], dtype=complex) / np.sqrt(2),
}


def _check_labels(labels: Sequence[str]) -> tuple[str, ...]:
    labels = tuple(str(lbl) for lbl in labels)
    if len(set(labels)) != len(labels):
        raise ValueError(f"qubit labels must be unique, got {labels}")
    return labels


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains NaN or Inf")


class PureState:
    """Normalized complex amplitude vector over a labeled register."""

    def __init__(self, amplitudes: Iterable[complex], labels: Sequence[str]):
        amps = np.asarray(amplitudes, dtype=complex).ravel()
        self.labels = _check_labels(labels)
        dim = 2 ** len(self.labels)
        if amps.shape != (dim,):
            raise ValueError(
                f"amplitude vector has length {amps.shape[0]}, expected {dim} "
                f"for labels {self.labels}"
            )
        _check_finite(amps, "state vector")
        norm = float(np.linalg.norm(amps))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"state vector norm {norm} is not 1")
        # renormalize tiny drift so chained operations stay within ATOL_NORM
        self.amplitudes = amps / norm

    @property
    def n_qubits(self) -> int:
        return len(self.labels)

    @classmethod
    def from_kets(cls, kets: Sequence[BasisKet | str], labels: Sequence[str]) -> "PureState":
        vecs = [BasisKet.from_token(k).vector if isinstance(k, str) else k.vector
                for k in kets]
        amps = vecs[0]
        for v in vecs[1:]:
            amps = np.kron(amps, v)
        return cls(amps, labels)

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()), self.labels)

    def overlap(self, other: "PureState") -> complex:
        if self.labels != other.labels:
            raise ValueError(f"label mismatch: {self.labels} vs {other.labels}")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def fidelity(self, other: "PureState") -> float:
        return abs(self.overlap(other)) ** 2

    def to_json_dict(self) -> dict:
        return matrix_to_json_dict(self.amplitudes.reshape(1, -1), self.labels)

    @classmethod
    def from_json_dict(cls, data: dict) -> "PureState":
        mat, labels = matrix_from_json_dict(data)
        return cls(mat.ravel(), labels)

    def __repr__(self) -> str:
        return f"PureState(labels={self.labels}, dim={len(self.amplitudes)})"


class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite operator on a register."""

    def __init__(self, matrix: np.ndarray, labels: Sequence[str], *, validate: bool = True):
        mat = np.asarray(matrix, dtype=complex)
        self.labels = _check_labels(labels)
        dim = 2 ** len(self.labels)
        if mat.shape != (dim, dim):
            raise ValueError(f"matrix shape {mat.shape} does not match labels {self.labels}")
        if validate:
            _check_finite(mat, "density matrix")
            herm_err = float(np.max(np.abs(mat - mat.conj().T)))
            if herm_err > ATOL_HERM:
                raise ValueError(f"density matrix not Hermitian (max dev {herm_err:.2e})")
            tr = complex(np.trace(mat))
            if abs(tr - 1.0) > 1e-8:
                raise ValueError(f"density matrix trace {tr} is not 1")
            evals = np.linalg.eigvalsh((mat + mat.conj().T) / 2)
            if evals.min() < -EIG_CLAMP:
                raise ValueError(f"density matrix has negative eigenvalue {evals.min():.2e}")
            mat = (mat + mat.conj().T) / 2
            mat = mat / tr.real
        self.matrix = mat

    @property
    def n_qubits(self) -> int:
        return len(self.labels)

    @classmethod
    def from_pure(cls, state: PureState) -> "DensityMatrix":
        return state.to_density()

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def to_json_dict(self) -> dict:
        return matrix_to_json_dict(self.matrix, self.labels)

    @classmethod
    def from_json_dict(cls, data: dict) -> "DensityMatrix":
        mat, labels = matrix_from_json_dict(data)
        return cls(mat, labels)

    def __repr__(self) -> str:
        return f"DensityMatrix(labels={self.labels})"


class Gate:
    """Unitary acting on named qubits; for CNOT the control label comes first."""

    def __init__(self, matrix: np.ndarray, targets: Sequence[str], *, name: str = ""):
        mat = np.asarray(matrix, dtype=complex)
        self.targets = _check_labels(targets)
        dim = 2 ** len(self.targets)
        if mat.shape != (dim, dim):
            raise ValueError(f"gate shape {mat.shape} does not match targets {self.targets}")
        _check_finite(mat, "gate matrix")
        dev = float(np.max(np.abs(mat.conj().T @ mat - np.eye(dim))))
        if dev > ATOL_HERM:
            raise ValueError(f"gate is not unitary (max |U†U - I| = {dev:.2e})")
        self.matrix = mat
        self.name = name or "U"

    def dagger(self) -> "Gate":
        return Gate(self.matrix.conj().T, self.targets, name=self.name + "†")

    def to_json_dict(self) -> dict:
        return matrix_to_json_dict(self.matrix, self.targets)

    def __repr__(self) -> str:
        return f"Gate({self.name}, targets={self.targets})"


def identity_gate(target: str) -> Gate:
    return Gate(I2, (target,), name="I")


def x_gate(target: str) -> Gate:
    return Gate(X, (target,), name="X")


def y_gate(target: str) -> Gate:
    return Gate(Y, (target,), name="Y")


def z_gate(target: str) -> Gate:
    return Gate(Z, (target,), name="Z")


def hadamard(target: str) -> Gate:
    return Gate(H, (target,), name="H")


CNOT_MATRIX = np.array(
    [[1, 0, 0, 0],
     [0, 1, 0, 0],
     [0, 0, 0, 1],
     [0, 0, 1, 0]], dtype=complex)


def cnot(control: str, target: str) -> Gate:
    """CNOT flipping ``target`` iff ``control`` is |1⟩ (control listed first)."""
    return Gate(CNOT_MATRIX, (control, target), name=f"CNOT({control}->{target})")


def hwp(theta: float, target: str = "q") -> Gate:
    """Half-wave plate with fast axis at angle ``theta`` (radians)."""
    c, s = np.cos(2 * theta), np.sin(2 * theta)
    return Gate(np.array([[c, s], [s, -c]], dtype=complex), (target,),
                name=f"HWP({theta:.4f})")


def qwp(theta: float, target: str = "q") -> Gate:
    """Quarter-wave plate with fast axis at angle ``theta`` (radians)."""
    c, s = np.cos(theta), np.sin(theta)
    mat = np.exp(-1j * np.pi / 4) * np.array(
        [[c * c + 1j * s * s, (1 - 1j) * s * c],
         [(1 - 1j) * s * c, s * s + 1j * c * c]], dtype=complex)
    return Gate(mat, (target,), name=f"QWP({theta:.4f})")


_BELL_STANDARD = {
    "phi+": np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2),
    "phi-": np.array([1, 0, 0, -1], dtype=complex) / np.sqrt(2),
    "psi+": np.array([0, 1, 1, 0], dtype=complex) / np.sqrt(2),
    "psi-": np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2),
}


def bell_state(name: str, convention: str = "standard",
               labels: Sequence[str] = ("q1", "q2")) -> PureState:
    """Two-qubit Bell state.

    ``standard``: |Φ±⟩=(|00⟩±|11⟩)/√2, |Ψ±⟩=(|01⟩±|10⟩)/√2.
    ``paper``: the rotated set |Φ±⟩=(|0⟩|+⟩±|1⟩|−⟩)/√2 and
    |Ψ±⟩=(|0⟩|−⟩±|1⟩|+⟩)/√2, i.e. the standard state with an extra
    Hadamard on the second qubit.
    """
    key = name.lower().replace("−", "-")
    if key not in _BELL_STANDARD:
        raise ValueError(f"unknown Bell state {name!r}; expected phi+/phi-/psi+/psi-")
    amps = _BELL_STANDARD[key].copy()
    if convention == "standard":
        pass
    elif convention == "paper":
        amps = np.kron(I2, H) @ amps
    else:
        raise ValueError(f"unknown convention {convention!r}; expected 'standard' or 'paper'")
    return PureState(amps, labels)


def _permutation_to_front(labels: tuple[str, ...], front: tuple[str, ...]) -> np.ndarray:
    """Permutation matrix P with P @ v reordering register ``labels`` to
    ``front + rest`` (big-endian bit positions follow label positions)."""
    rest = tuple(lbl for lbl in labels if lbl not in front)
    new_order = front + rest
    n = len(labels)
    dim = 2 ** n
    src_pos = {lbl: i for i, lbl in enumerate(labels)}
    perm = np.zeros((dim, dim))
    for idx in range(dim):
        bits = [(idx >> (n - 1 - i)) & 1 for i in range(n)]
        new_idx = 0
        for j, lbl in enumerate(new_order):
            new_idx = (new_idx << 1) | bits[src_pos[lbl]]
        perm[new_idx, idx] = 1.0
    return perm


def embed_operator(op: np.ndarray, op_targets: Sequence[str],
                   register: Sequence[str]) -> np.ndarray:
    """Embed a k-qubit operator into the full register by identity padding."""
    op_targets = tuple(op_targets)
    register = tuple(register)
    missing = [t for t in op_targets if t not in register]
    if missing:
        raise ValueError(f"unknown target label(s) {missing}; register has {register}")
    n_rest = len(register) - len(op_targets)
    full = np.kron(op, np.eye(2 ** n_rest, dtype=complex))
    perm = _permutation_to_front(register, op_targets)
    return perm.T @ full @ perm


def tensor(a, b):
    """Kronecker product of two states/operators with disjoint labels."""
    kinds = (type(a), type(b))
    if kinds == (PureState, PureState):
        labels = _tensor_labels(a.labels, b.labels)
        return PureState(np.kron(a.amplitudes, b.amplitudes), labels)
    if kinds == (DensityMatrix, DensityMatrix):
        labels = _tensor_labels(a.labels, b.labels)
        return DensityMatrix(np.kron(a.matrix, b.matrix), labels)
    if kinds == (Gate, Gate):
        labels = _tensor_labels(a.targets, b.targets)
        return Gate(np.kron(a.matrix, b.matrix), labels, name=f"{a.name}⊗{b.name}")
    raise TypeError(f"tensor() needs two values of the same kind, got {kinds}")


def _tensor_labels(la: tuple[str, ...], lb: tuple[str, ...]) -> tuple[str, ...]:
    clash = set(la) & set(lb)
    if clash:
        raise ValueError(f"label collision in tensor product: {sorted(clash)}")
    return la + lb


def apply(gate: Gate, state):
    """Apply a gate to a PureState (Uψ) or DensityMatrix (UρU†)."""
    if isinstance(state, PureState):
        u = embed_operator(gate.matrix, gate.targets, state.labels)
        return PureState(u @ state.amplitudes, state.labels)
    if isinstance(state, DensityMatrix):
        u = embed_operator(gate.matrix, gate.targets, state.labels)
        return DensityMatrix(u @ state.matrix @ u.conj().T, state.labels)
    raise TypeError(f"apply() expects PureState or DensityMatrix, got {type(state)}")


def apply_kraus(kraus_ops: Sequence[np.ndarray], op_targets: Sequence[str],
                rho: DensityMatrix) -> DensityMatrix:
    """Apply a Kraus-set channel on ``op_targets`` to a density matrix."""
    out = np.zeros_like(rho.matrix)
    for k in kraus_ops:
        kk = embed_operator(np.asarray(k, dtype=complex), op_targets, rho.labels)
        out += kk @ rho.matrix @ kk.conj().T
    return DensityMatrix(out, rho.labels)


def partial_trace(rho: DensityMatrix, keep: Sequence[str]) -> DensityMatrix:
    """Trace out every qubit not in ``keep`` (result keeps register order)."""
    keep = tuple(keep)
    if not keep:
        raise ValueError("keep set must be nonempty")
    missing = [k for k in keep if k not in rho.labels]
    if missing:
        raise ValueError(f"unknown label(s) {missing}; register has {rho.labels}")
    kept = tuple(lbl for lbl in rho.labels if lbl in keep)
    n = rho.n_qubits
    tens = rho.matrix.reshape((2,) * (2 * n))
    # trace traced-out axes pairwise, from the back to keep indices stable
    traced_positions = [i for i, lbl in enumerate(rho.labels) if lbl not in keep]
    for count, pos in enumerate(sorted(traced_positions)):
        eff = pos - count
        n_now = n - count
        tens = np.trace(tens, axis1=eff, axis2=eff + n_now)
    dim = 2 ** len(kept)
    return DensityMatrix(tens.reshape(dim, dim), kept)


def matrix_sqrt_psd(mat: np.ndarray, *, herm_tol: float = ATOL_HERM) -> np.ndarray:
    """Principal square root of a Hermitian PSD matrix via eigendecomposition.

    Eigenvalues in [-EIG_CLAMP, 0) are clamped to 0; anything more negative,
    or a non-Hermitian input, is rejected.
    """
    mat = np.asarray(mat, dtype=complex)
    dev = float(np.max(np.abs(mat - mat.conj().T)))
    if dev > herm_tol:
        raise ValueError(f"matrix_sqrt_psd needs a Hermitian input (max dev {dev:.2e})")
    w, v = np.linalg.eigh((mat + mat.conj().T) / 2)
    if w.min() < -EIG_CLAMP:
        raise ValueError(f"matrix is not PSD (eigenvalue {w.min():.2e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def projector(ket: BasisKet | np.ndarray) -> np.ndarray:
    """Rank-1 projector |k⟩⟨k| for a basis ket or raw vector."""
    vec = ket.vector if isinstance(ket, BasisKet) else np.asarray(ket, dtype=complex)
    return np.outer(vec, vec.conj())


def phase_normalized(amps: np.ndarray) -> np.ndarray:
    """Divide out the phase of the largest-magnitude amplitude."""
    amps = np.asarray(amps, dtype=complex)
    idx = int(np.argmax(np.abs(amps)))
    ref = amps[idx]
    if abs(ref) == 0:
        return amps.copy()
    return amps * (abs(ref) / ref)


def states_equal(a: PureState, b: PureState, tol: float = 1e-10) -> bool:
    """Equality of pure states up to a global phase."""
    if a.labels != b.labels:
        return False
    return bool(np.max(np.abs(phase_normalized(a.amplitudes)
                              - phase_normalized(b.amplitudes))) <= tol)


def matrix_to_json_dict(mat: np.ndarray, labels: Sequence[str]) -> dict:
    mat = np.atleast_2d(np.asarray(mat, dtype=complex))
    return {
        "labels": list(labels),
        "re": mat.real.tolist(),
        "im": mat.imag.tolist(),
    }


def matrix_from_json_dict(data: dict) -> tuple[np.ndarray, tuple[str, ...]]:
    re = np.asarray(data["re"], dtype=float)
    im = np.asarray(data["im"], dtype=float)
    if re.shape != im.shape:
        raise ValueError(f"re/im shape mismatch: {re.shape} vs {im.shape}")
    return re + 1j * im, tuple(data["labels"])


def dump_matrix_json(mat: np.ndarray, labels: Sequence[str]) -> str:
    return json.dumps(matrix_to_json_dict(mat, labels), sort_keys=True)


def load_matrix_json(text: str) -> tuple[np.ndarray, tuple[str, ...]]:
    return matrix_from_json_dict(json.loads(text))
