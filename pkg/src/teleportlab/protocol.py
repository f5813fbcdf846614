"""Two-node gate-teleportation engine.

Alice holds qubits q1 (data) and q2 (her half of the shared pair); Bob
holds q3 (his half) and q4 (data). The run is:

1. prepare ``|Ψ⟩₁₄ ⊗ Φ₂₃`` on the register (q1, q2, q3, q4),
2. apply the local gates C₁₂ (chip, control q1 → target q2) and
   C₃₄ (free space, control q3 → target q4),
3. measure q2 in Z and q3 in X,
4. exchange two classical bits,
5. apply the branch-dependent Pauli correction on (q1, q4).

With an ideal pair every corrected branch equals ``C₁₄|Ψ⟩₁₄`` and each of
the four outcomes has probability 1/4. The branch (1,−) carries a −1
global phase which is recorded, not applied.

Correction table: (0,+) → I, (0,−) → Z on q1, (1,+) → X on q4,
(1,−) → Z on q1 and X on q4 with recorded phase −1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import qcore
from .qcore import (
    BasisKet, DensityMatrix, Gate, PureState,
    bell_state, cnot, embed_operator, projector,
)
from .noise import Channel, NoiseConfig, dephase_pair, leaky_cnot, werner

__all__ = [
    "REGISTER",
    "InputStatePrep",
    "EprResource",
    "MeasurementOutcome",
    "ClassicalMessage",
    "BranchResult",
    "ProtocolRun",
    "OUTCOMES",
    "correction_for",
    "correction_operator",
    "build_joint_state",
    "build_joint_pure",
    "run_protocol",
    "classical_cost",
    "state_teleportation_baseline_cost",
    "local_truth_table",
    "teleported_superop",
    "apply_superop",
    "write_transcript",
]

REGISTER = ("q1", "q2", "q3", "q4")
DATA_QUBITS = ("q1", "q4")

OUTCOMES = ((0, "+"), (0, "-"), (1, "+"), (1, "-"))

# outcome -> (pauli letters on (q1, q4), recorded global phase)
_CORRECTIONS = {
    (0, "+"): ((), 1.0),
    (0, "-"): ((("q1", "Z"),), 1.0),
    (1, "+"): ((("q4", "X"),), 1.0),
    (1, "-"): ((("q1", "Z"), ("q4", "X")), -1.0),
}

_KET_PLUS = BasisKet.PLUS.vector
_KET_MINUS = BasisKet.MINUS.vector


@dataclass(frozen=True)
class InputStatePrep:
    """Two-qubit input |Ψ⟩₁₄, from basis kets or raw amplitudes A₁..A₄."""

    amplitudes: tuple

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).ravel()
        if amps.shape != (4,):
            raise ValueError(f"input state needs 4 amplitudes, got {amps.shape}")
        norm = float(np.linalg.norm(amps))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"input amplitudes have norm {norm}, expected 1")
        object.__setattr__(self, "amplitudes", tuple((amps / norm).tolist()))

    @classmethod
    def from_kets(cls, ket1: BasisKet | str, ket4: BasisKet | str) -> "InputStatePrep":
        k1 = BasisKet.from_token(ket1) if isinstance(ket1, str) else ket1
        k4 = BasisKet.from_token(ket4) if isinstance(ket4, str) else ket4
        return cls(tuple(np.kron(k1.vector, k4.vector).tolist()))

    @classmethod
    def from_token(cls, token: str) -> "InputStatePrep":
        if len(token) != 2:
            raise ValueError(f"input token must have two characters from 0/1/+/-/i, got {token!r}")
        return cls.from_kets(token[0], token[1])

    @property
    def state(self) -> PureState:
        return PureState(np.asarray(self.amplitudes), DATA_QUBITS)

    def ideal_output(self) -> PureState:
        """C₁₄|Ψ⟩₁₄ — what the teleported gate should produce."""
        return qcore.apply(cnot("q1", "q4"), self.state)


@dataclass(frozen=True)
class EprResource:
    """Shared pair on (q2, q3): ideal projector or a noise-degraded state."""

    state: DensityMatrix
    source_kind: str = "ideal"
    pure: PureState | None = None

    @classmethod
    def ideal(cls) -> "EprResource":
        phi = bell_state("phi+", "standard", ("q2", "q3"))
        return cls(state=phi.to_density(), source_kind="ideal", pure=phi)

    @classmethod
    def noisy(cls, cfg: NoiseConfig) -> "EprResource":
        rho = werner(cfg.werner_p, ("q2", "q3"))
        channel = dephase_pair(cfg.visibility_v, ("q2", "q3"))
        rho = DensityMatrix(channel.apply_matrix(rho.matrix), ("q2", "q3"))
        return cls(state=rho, source_kind=f"noisy({cfg})", pure=None)

    @classmethod
    def from_state(cls, rho: DensityMatrix, kind: str = "custom") -> "EprResource":
        if tuple(rho.labels) != ("q2", "q3"):
            raise ValueError(f"EPR resource must live on (q2, q3), got {rho.labels}")
        return cls(state=rho, source_kind=kind, pure=None)


@dataclass(frozen=True)
class MeasurementOutcome:
    m2: int          # Z outcome on q2
    m3: str          # '+' or '-' on q3
    probability: float

    def __post_init__(self):
        if self.m2 not in (0, 1) or self.m3 not in ("+", "-"):
            raise ValueError(f"bad outcome ({self.m2}, {self.m3})")
        if not -1e-12 <= self.probability <= 1 + 1e-12:
            raise ValueError(f"probability {self.probability} outside [0, 1]")

    @property
    def key(self) -> tuple:
        return (self.m2, self.m3)


@dataclass(frozen=True)
class ClassicalMessage:
    sender: str      # "Alice" | "Bob"
    bit: int
    meaning: str     # "z_outcome" | "x_outcome"


@dataclass
class BranchResult:
    """One post-selected branch: probability, corrected state, bookkeeping.

    ``state`` is None for a zero-probability branch (undefined, never NaN).
    ``vector`` is only set in state-vector mode and holds the *unnormalized*
    corrected branch amplitudes (including the recorded −1 where it occurs),
    so branches combine linearly over superposed inputs.
    """

    outcome: MeasurementOutcome
    state: PureState | DensityMatrix | None
    raw_state: PureState | DensityMatrix | None
    correction: tuple
    phase: float
    vector: np.ndarray | None = None

    @property
    def probability(self) -> float:
        return self.outcome.probability


@dataclass
class ProtocolRun:
    branches: dict
    messages_by_outcome: dict
    sampled_outcome: tuple | None = None
    input_prep: InputStatePrep | None = None
    epr_kind: str = ""
    extinction_eps: float = 0.0

    def branch(self, m2: int, m3: str) -> BranchResult:
        return self.branches[(m2, m3)]

    @property
    def sampled_branch(self) -> BranchResult | None:
        if self.sampled_outcome is None:
            return None
        return self.branches[self.sampled_outcome]


def correction_for(m2: int, m3: str) -> tuple:
    """(pauli ops on q1/q4, recorded phase) for a measurement outcome."""
    try:
        return _CORRECTIONS[(m2, m3)]
    except KeyError:
        raise ValueError(f"unknown outcome ({m2!r}, {m3!r})") from None


def correction_operator(m2: int, m3: str) -> np.ndarray:
    """4×4 correction unitary on (q1, q4), phase not included."""
    ops, _ = correction_for(m2, m3)
    mat = np.eye(4, dtype=complex)
    for qubit, letter in ops:
        pauli = qcore.PAULIS_1Q[letter]
        mat = embed_operator(pauli, (qubit,), DATA_QUBITS) @ mat
    return mat


def build_joint_pure(prep: InputStatePrep, epr: EprResource) -> PureState:
    """|Ψ⟩₁₄ ⊗ |Φ⟩₂₃ reordered to the register (q1, q2, q3, q4)."""
    if epr.pure is None:
        raise ValueError("pure joint state needs a pure EPR resource")
    joint = qcore.tensor(prep.state, epr.pure)       # (q1, q4, q2, q3)
    perm = qcore._permutation_to_front(joint.labels, REGISTER)
    return PureState(perm @ joint.amplitudes, REGISTER)


def build_joint_state(prep: InputStatePrep, epr: EprResource) -> DensityMatrix:
    """Density-matrix form of the pre-gate state on (q1, q2, q3, q4)."""
    joint = qcore.tensor(prep.state.to_density(), epr.state)   # (q1,q4,q2,q3)
    perm = qcore._permutation_to_front(joint.labels, REGISTER)
    return DensityMatrix(perm @ joint.matrix @ perm.T, REGISTER)


def _messages(m2: int, m3: str) -> tuple:
    return (
        ClassicalMessage(sender="Alice", bit=m2, meaning="z_outcome"),
        ClassicalMessage(sender="Bob", bit=0 if m3 == "+" else 1, meaning="x_outcome"),
    )


def _branch_projector(m2: int, m3: str) -> np.ndarray:
    """Projector on (q2, q3) for Z outcome m2 and X outcome m3."""
    pz = projector(BasisKet.ZERO if m2 == 0 else BasisKet.ONE)
    px = projector(_KET_PLUS if m3 == "+" else _KET_MINUS)
    return embed_operator(np.kron(pz, px), ("q2", "q3"), REGISTER)


def _gate_stage_unitaries(extinction_eps: float) -> list:
    """Kraus factors of C₁₂ followed by C₃₄ on the full register.

    The chip gate C₁₂ carries the extinction leak; the free-space gate C₃₄
    stays unitary.
    """
    c12 = leaky_cnot(extinction_eps, "q1", "q2")
    c34 = cnot("q3", "q4")
    u34 = embed_operator(c34.matrix, c34.targets, REGISTER)
    factors = []
    for k in c12.kraus:
        factors.append(u34 @ embed_operator(k, c12.targets, REGISTER))
    return factors


def _ptrace_to_data(mat16: np.ndarray) -> np.ndarray:
    """Raw partial trace of a 16×16 register matrix down to (q1, q4)."""
    t = mat16.reshape(2, 2, 2, 2, 2, 2, 2, 2)
    # axes: (q1, q2, q3, q4 | q1', q2', q3', q4'); trace q2 and q3
    return np.einsum("abcdfbch->adfh", t).reshape(4, 4)


def run_protocol(prep: InputStatePrep, epr: EprResource, branch: str = "all", *,
                 seed: int | None = None, extinction_eps: float = 0.0) -> ProtocolRun:
    """Execute the teleportation and return all four corrected branches.

    ``branch="all"`` keeps every outcome; ``branch="sampled"`` additionally
    draws one outcome from the branch distribution using ``seed``.
    State-vector evolution is used when the resource is pure and the gates
    ideal; otherwise the run is density-matrix based.
    """
    if branch not in ("all", "sampled"):
        raise ValueError(f"branch mode must be 'all' or 'sampled', got {branch!r}")

    branches: dict = {}
    pure_mode = epr.pure is not None and extinction_eps == 0.0

    if pure_mode:
        psi = build_joint_pure(prep, epr)
        u12 = embed_operator(qcore.CNOT_MATRIX, ("q1", "q2"), REGISTER)
        u34 = embed_operator(qcore.CNOT_MATRIX, ("q3", "q4"), REGISTER)
        evolved = (u34 @ (u12 @ psi.amplitudes)).reshape(2, 2, 2, 2)
        for m2, m3 in OUTCOMES:
            # contract the measured qubits against their outcome kets
            vz = (BasisKet.ZERO if m2 == 0 else BasisKet.ONE).vector
            vx = _KET_PLUS if m3 == "+" else _KET_MINUS
            sub = np.einsum("abcd,b,c->ad", evolved, vz.conj(), vx.conj()).reshape(4)
            prob = float(np.vdot(sub, sub).real)
            ops, phase = correction_for(m2, m3)
            corr = correction_operator(m2, m3)
            corrected_vec = corr @ sub
            outcome = MeasurementOutcome(m2, m3, prob)
            if prob <= 1e-14:
                branches[(m2, m3)] = BranchResult(outcome, None, None,
                                                  ops, phase, corrected_vec)
                continue
            state = PureState(corrected_vec / np.sqrt(prob), DATA_QUBITS)
            raw = PureState(sub / np.sqrt(prob), DATA_QUBITS)
            branches[(m2, m3)] = BranchResult(outcome, state, raw, ops, phase,
                                              corrected_vec)
    else:
        rho = build_joint_state(prep, epr).matrix
        factors = _gate_stage_unitaries(extinction_eps)
        evolved = np.zeros_like(rho)
        for f in factors:
            evolved += f @ rho @ f.conj().T
        for m2, m3 in OUTCOMES:
            proj = _branch_projector(m2, m3)
            kept = proj @ evolved @ proj.conj().T
            prob = float(np.trace(kept).real)
            ops, phase = correction_for(m2, m3)
            outcome = MeasurementOutcome(m2, m3, min(max(prob, 0.0), 1.0))
            if prob <= 1e-14:
                branches[(m2, m3)] = BranchResult(outcome, None, None, ops, phase)
                continue
            reduced = _ptrace_to_data(kept / prob)
            corr = correction_operator(m2, m3)
            corrected = DensityMatrix(corr @ reduced @ corr.conj().T, DATA_QUBITS)
            raw = DensityMatrix(reduced, DATA_QUBITS)
            branches[(m2, m3)] = BranchResult(outcome, corrected, raw, ops, phase)

    total = sum(b.probability for b in branches.values())
    if abs(total - 1.0) > 1e-9:
        raise ArithmeticError(f"branch probabilities sum to {total}, expected 1")

    run = ProtocolRun(
        branches=branches,
        messages_by_outcome={key: _messages(*key) for key in branches},
        input_prep=prep,
        epr_kind=epr.source_kind,
        extinction_eps=extinction_eps,
    )
    if branch == "sampled":
        rng = np.random.default_rng(seed)
        probs = np.array([branches[o].probability for o in OUTCOMES])
        idx = int(rng.choice(len(OUTCOMES), p=probs / probs.sum()))
        run.sampled_outcome = OUTCOMES[idx]
    return run


def classical_cost(run: ProtocolRun | None) -> int:
    """Classical bits consumed by a completed gate-teleportation run."""
    if run is None or not run.branches:
        raise ValueError("classical cost is undefined for an empty or aborted run")
    return 2


def state_teleportation_baseline_cost() -> int:
    """Bits for the double state-teleportation route (two teleports, two bits each)."""
    return 4


def local_truth_table(gate: str, noise: NoiseConfig | None = None, *,
                      include_accidentals: bool = False) -> np.ndarray:
    """4×4 truth table of one local CNOT under the gate's own noise.

    Rows are computational inputs |00⟩..|11⟩, columns measured outputs.
    The chip gate (``C12``) carries the extinction leak; the free-space
    gate (``C34``) is unitary. Local characterization is a direct bright
    measurement, so accidentals are excluded unless requested; with
    ``include_accidentals`` the background-dominated limit drives every
    entry to 1/4.
    """
    if gate not in ("C12", "C34"):
        raise ValueError(f"gate must be 'C12' or 'C34', got {gate!r}")
    noise = noise or NoiseConfig.ideal()
    eps = noise.extinction_eps if gate == "C12" else 0.0
    channel = leaky_cnot(eps, "a", "b")
    table = np.zeros((4, 4))
    for row in range(4):
        rho_in = np.zeros((4, 4), dtype=complex)
        rho_in[row, row] = 1.0
        rho_out = channel.apply_matrix(rho_in)
        probs = np.diag(rho_out).real
        if include_accidentals:
            probs = (probs + noise.accidental_ratio / 4)
        table[row] = probs / probs.sum()
    return table


_BASIS_4 = [np.zeros((4, 4), dtype=complex) for _ in range(16)]
for _i in range(4):
    for _j in range(4):
        _BASIS_4[4 * _i + _j][_i, _j] = 1.0


class _StaticMachinery:
    """Noise-independent pieces of the pipeline, built once."""

    def __init__(self):
        self.perm = qcore._permutation_to_front(("q1", "q4", "q2", "q3"), REGISTER)
        self.projs = {key: _branch_projector(*key) for key in OUTCOMES}
        self.corrs = {key: correction_operator(*key) for key in OUTCOMES}
        self.u34 = embed_operator(qcore.CNOT_MATRIX, ("q3", "q4"), REGISTER)
        self.u12 = embed_operator(qcore.CNOT_MATRIX, ("q1", "q2"), REGISTER)
        self.x2_u12 = embed_operator(
            np.kron(qcore.I2, qcore.X) @ qcore.CNOT_MATRIX, ("q1", "q2"), REGISTER)


_STATIC: list = []


def _static() -> _StaticMachinery:
    if not _STATIC:
        _STATIC.append(_StaticMachinery())
    return _STATIC[0]


def teleported_superop(noise: NoiseConfig | None = None) -> np.ndarray:
    """16×16 superoperator of the teleported gate on (q1, q4).

    Row-major vec convention: ``vec(E(M)) = S @ vec(M)``. Built by pushing
    the 16 matrix units through the branch engine (corrections applied,
    branches summed), so it is exactly the channel the protocol realizes.
    Accidental background is a measurement-stage effect and is not part of
    this map.
    """
    noise = noise or NoiseConfig.ideal()
    epr = EprResource.noisy(noise) if not noise.is_ideal else EprResource.ideal()
    epr_mat = epr.state.matrix
    st = _static()
    eps = noise.extinction_eps
    factors = [np.sqrt(1 - eps) * (st.u34 @ st.u12)]
    if eps > 0:
        factors.append(np.sqrt(eps) * (st.u34 @ st.x2_u12))

    cols = []
    for unit in _BASIS_4:
        joint = st.perm @ np.kron(unit, epr_mat) @ st.perm.T
        evolved = np.zeros_like(joint)
        for f in factors:
            evolved += f @ joint @ f.conj().T
        out = np.zeros((4, 4), dtype=complex)
        for key in OUTCOMES:
            p = st.projs[key]
            kept = p @ evolved @ p.conj().T
            reduced = _ptrace_to_data(kept)
            out += st.corrs[key] @ reduced @ st.corrs[key].conj().T
        cols.append(out.reshape(16))
    return np.array(cols).T


def apply_superop(superop: np.ndarray, mat: np.ndarray) -> np.ndarray:
    return (superop @ np.asarray(mat, dtype=complex).reshape(16)).reshape(4, 4)


def write_transcript(runs: Iterable[ProtocolRun], path: str | Path, *,
                     state_dir: str | Path | None = None) -> None:
    """Export runs as JSON lines, one object per sampled or full run.

    Each line carries ``input``, ``outcome``, ``probability``,
    ``correction``, ``classical_bits`` and a ``state_ref`` naming the
    corrected-state JSON artifact (written under ``state_dir`` if given).
    """
    path = Path(path)
    state_dir = Path(state_dir) if state_dir is not None else None
    if state_dir is not None:
        state_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for run_idx, run in enumerate(runs):
        keys = ([run.sampled_outcome] if run.sampled_outcome is not None
                else list(run.branches))
        for key in keys:
            br = run.branches[key]
            ref = None
            if state_dir is not None and br.state is not None:
                ref = f"run{run_idx}_m2{key[0]}_m3{'p' if key[1] == '+' else 'm'}.json"
                obj = (br.state.to_density() if isinstance(br.state, PureState)
                       else br.state)
                (state_dir / ref).write_text(json.dumps(obj.to_json_dict()) + "\n")
            record = {
                "input": _amplitude_pairs(run.input_prep),
                "outcome": {"m2": key[0], "m3": key[1]},
                "probability": br.probability,
                "correction": ["".join(op) for op in br.correction],
                "classical_bits": [m.bit for m in run.messages_by_outcome[key]],
                "state_ref": ref,
            }
            lines.append(json.dumps(record, sort_keys=True))
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def _amplitude_pairs(prep: InputStatePrep | None) -> list:
    if prep is None:
        return []
    return [[z.real, z.imag] for z in np.asarray(prep.amplitudes, dtype=complex)]
