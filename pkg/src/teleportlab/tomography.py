"""Truth tables, state/process tomography, and the fidelity measures.

Reconstruction follows the photonic-lab convention: each measurement
setting is a single rank-1 coincidence projector from {|0⟩,|1⟩,|+⟩,|i⟩}
per qubit, so the 16 settings of two-qubit QST do not form a POVM and the
overall photon flux is a nuisance parameter. Maximum likelihood handles
this through the Gram-operator transform: with G = Σ_s Π_s, the rescaled
effects G^{-1/2} Π_s G^{-1/2} are a POVM for the congruently transformed
state, and the diluted RρR iteration runs there.

Process tomography works on the Choi operator J = Σ_ij E_ij ⊗ E(E_ij)
(input factor first, row-major vec), for which Tr[E(ρ)Π] = Tr[J(ρᵀ⊗Π)],
so the same likelihood machinery applies with effects ρᵀ⊗Π.

All vec/kron conventions are row-major: vec(AρB) = (A ⊗ Bᵀ) vec(ρ).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .qcore import (
    ATOL_HERM, BasisKet, CNOT_MATRIX, DensityMatrix, PAULIS_1Q,
    matrix_sqrt_psd, matrix_to_json_dict, projector,
)
from .counting import CountRecord, MeasurementSetting

log = logging.getLogger(__name__)

__all__ = [
    "PAULI_LABELS_2Q",
    "PAULIS_2Q",
    "FidelityReport",
    "TruthTable",
    "ideal_cnot_truth_table",
    "truth_table_fidelity",
    "state_fidelity",
    "uhlmann_fidelity",
    "KET_ORDER",
    "qst_settings",
    "qst_reconstruct",
    "qst_from_probabilities",
    "MleResult",
    "qpt_input_tokens",
    "qpt_prep_matrix",
    "qpt_reconstruct",
    "qpt_from_probabilities",
    "ChiMatrix",
    "chi_of_unitary",
    "chi_cnot",
    "chi_from_superop",
    "superop_from_chi",
    "choi_from_superop",
    "superop_from_choi",
    "project_cptp",
    "process_fidelity",
    "average_gate_fidelity",
    "to_ptm",
    "bootstrap_sigma",
]

_P1 = [PAULIS_1Q[c] for c in "IXYZ"]
PAULI_LABELS_2Q = [a + b for a in "IXYZ" for b in "IXYZ"]
PAULIS_2Q = [np.kron(_P1["IXYZ".index(l[0])], _P1["IXYZ".index(l[1])])
             for l in PAULI_LABELS_2Q]

KET_ORDER = (BasisKet.ZERO, BasisKet.ONE, BasisKet.PLUS, BasisKet.PLUS_I)

MLE_DILUTION = 0.5
MLE_TOL = 1e-10
MLE_MAX_ITER = 10_000


@dataclass
class FidelityReport:
    """A fidelity value with its Monte Carlo error bar."""

    value: float
    kind: str                       # truth_table | state | process | average_gate
    error_bar: float = 0.0
    d: int | None = None

    def __post_init__(self):
        if self.kind not in ("truth_table", "state", "process", "average_gate"):
            raise ValueError(f"unknown fidelity kind {self.kind!r}")
        if not -1e-9 <= self.value <= 1 + 1e-9:
            raise ValueError(f"fidelity {self.value} outside [0, 1]")
        if self.error_bar < 0:
            raise ValueError("error bar must be >= 0")
        if self.value - 3 * self.error_bar > 1 + 1e-12:
            raise ValueError("value - 3*error_bar exceeds 1")

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value,
                "error_bar": self.error_bar, "d": self.d}


# ---------------------------------------------------------------------------
# truth tables


class TruthTable:
    """4×4 matrix of output probabilities, rows = computational inputs."""

    def __init__(self, matrix: np.ndarray):
        mat = np.asarray(matrix, dtype=float)
        if mat.shape != (4, 4):
            raise ValueError(f"truth table must be 4×4, got {mat.shape}")
        if mat.min() < -1e-9:
            raise ValueError(f"negative probability {mat.min()} in truth table")
        sums = mat.sum(axis=1)
        if np.any(sums <= 0):
            raise ValueError("truth table has an all-zero row; cannot normalize")
        self.matrix = mat / sums[:, None]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


def ideal_cnot_truth_table() -> np.ndarray:
    """Permutation 00→00, 01→01, 10→11, 11→10."""
    m = np.zeros((4, 4))
    for row, col in ((0, 0), (1, 1), (2, 3), (3, 2)):
        m[row, col] = 1.0
    return m


def truth_table_fidelity(m_exp: np.ndarray, m_ideal: np.ndarray,
                         error_bar: float = 0.0) -> FidelityReport:
    """Mean row overlap of the row-normalized measured table with the ideal.

    For a permutation-matrix ideal this is (1/4)·Tr(M_exp·M_idealᵀ), the
    mean probability of the correct output.
    """
    exp = TruthTable(m_exp).matrix
    ideal = TruthTable(m_ideal).matrix
    value = float(np.mean(np.sum(exp * ideal, axis=1)))
    return FidelityReport(value=min(value, 1.0), kind="truth_table",
                          error_bar=error_bar)


# ---------------------------------------------------------------------------
# state fidelity


def _as_matrix(rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        return rho.matrix
    return np.asarray(rho, dtype=complex)


def _clamped_psd(mat: np.ndarray, warn_above: float = 1e-6) -> np.ndarray:
    """Clamp small negative eigenvalues and renormalize the trace."""
    w, v = np.linalg.eigh((mat + mat.conj().T) / 2)
    clipped = np.clip(w, 0.0, None)
    lost = float(np.sum(np.abs(w - clipped)))
    if lost > warn_above:
        log.warning("clamped %.3e of negative eigenvalue mass", lost)
    out = (v * clipped) @ v.conj().T
    return out / np.trace(out).real


def uhlmann_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """F(ρ,σ) = (Tr √(√ρ σ √ρ))²."""
    rho = _clamped_psd(_as_matrix(rho))
    sigma = _clamped_psd(_as_matrix(sigma))
    sr = matrix_sqrt_psd(rho)
    inner = sr @ sigma @ sr
    # inner is PSD up to roundoff; the sqrt would amplify eigenvalue debris
    # near zero, so clip relative to the leading eigenvalue
    w = np.linalg.eigvalsh((inner + inner.conj().T) / 2)
    w = np.clip(w, 0.0, None)
    w[w < 1e-14 * max(float(w.max()), 1e-300)] = 0.0
    value = float(np.sum(np.sqrt(w)) ** 2)
    return min(value, 1.0)


def state_fidelity(rho_mea, rho_ideal, error_bar: float = 0.0) -> FidelityReport:
    a, b = _as_matrix(rho_mea), _as_matrix(rho_ideal)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if (isinstance(rho_mea, DensityMatrix) and isinstance(rho_ideal, DensityMatrix)
            and rho_mea.labels != rho_ideal.labels):
        raise ValueError(f"label mismatch: {rho_mea.labels} vs {rho_ideal.labels}")
    return FidelityReport(value=uhlmann_fidelity(a, b), kind="state",
                          error_bar=error_bar)


# ---------------------------------------------------------------------------
# maximum-likelihood core


@dataclass
class MleResult:
    matrix: np.ndarray
    log_likelihoods: np.ndarray
    iterations: int
    converged: bool


def _gram_inv_sqrt(effects: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    g = effects.sum(axis=0)
    w, v = np.linalg.eigh((g + g.conj().T) / 2)
    if w.min() <= 1e-12:
        raise ValueError("singular design matrix: measurement set is not informationally complete")
    g_sqrt = (v * np.sqrt(w)) @ v.conj().T
    g_isqrt = (v / np.sqrt(w)) @ v.conj().T
    return g_sqrt, g_isqrt


def mle_density(effects: Sequence[np.ndarray], counts: Sequence[float], *,
                dilution: float = MLE_DILUTION, tol: float = MLE_TOL,
                max_iter: int = MLE_MAX_ITER,
                seed_matrix: np.ndarray | None = None,
                on_step: Callable[[float, float], None] | None = None) -> MleResult:
    """Diluted RρR maximum likelihood for PSD effects with unknown flux.

    ``counts`` may be real-valued (exact expectation data behaves like an
    infinite-count experiment). The returned matrix is PSD with unit trace
    by construction; the per-iteration log-likelihood trace is monotone
    (the dilution is halved within a step whenever a trial update would
    decrease it).
    """
    effects = np.asarray(effects, dtype=complex)
    counts = np.asarray(counts, dtype=float)
    if counts.min() < 0:
        raise ValueError(f"negative count {counts.min()}")
    total = counts.sum()
    if total <= 0:
        raise ValueError("all settings have zero counts")
    m, d, _ = effects.shape
    freqs = counts / total

    g_sqrt, g_isqrt = _gram_inv_sqrt(effects)
    povm = np.einsum("ab,sbc,cd->sad", g_isqrt, effects, g_isqrt)

    if seed_matrix is None:
        rho = np.eye(d, dtype=complex) / d
    else:
        # exact data makes the seed the stationary point (R = I), so it must
        # pass through untouched; noisy seeds only get clamped to PSD.
        rho = g_sqrt @ seed_matrix @ g_sqrt
        rho = _clamped_psd(rho, warn_above=np.inf)

    def loglik(r):
        q = np.einsum("sij,ji->s", povm, r).real
        q = np.clip(q, 1e-300, None)
        return float(np.sum(freqs * np.log(q))), q

    ll, q = loglik(rho)
    trace = [ll]
    converged = False
    iterations = 0
    eye = np.eye(d)
    for iterations in range(1, max_iter + 1):
        r_op = np.einsum("s,sij->ij", freqs / np.clip(q, 1e-300, None), povm)
        lam = dilution
        accepted = False
        for _ in range(30):
            mix = (1 - lam) * eye + lam * r_op
            cand = mix @ rho @ mix.conj().T
            cand = cand / np.trace(cand).real
            ll_new, q_new = loglik(cand)
            if ll_new >= ll - 1e-15:
                accepted = True
                break
            lam /= 2
        if not accepted:
            converged = True   # at a stationary point within machine precision
            break
        gain = ll_new - ll
        rho, ll, q = cand, ll_new, q_new
        trace.append(ll)
        if on_step is not None:
            on_step(trace[-2], trace[-1])
        if gain < tol:
            converged = True
            break

    out = g_isqrt @ rho @ g_isqrt
    out = out / np.trace(out).real
    out = _clamped_psd(out, warn_above=np.inf)
    return MleResult(matrix=out, log_likelihoods=np.array(trace),
                     iterations=iterations, converged=converged)


# ---------------------------------------------------------------------------
# state tomography


def qst_settings(qubits: Sequence[str] = ("q1", "q4"),
                 prep: str | None = None) -> list[MeasurementSetting]:
    """The 16 coincidence settings {|0⟩,|1⟩,|+⟩,|i⟩} per qubit."""
    qubits = tuple(qubits)
    return [MeasurementSetting(kets=(a, b), qubits=qubits, prep=prep)
            for a, b in itertools.product(KET_ORDER, repeat=len(qubits))]


def _setting_effects(settings: Sequence[MeasurementSetting]) -> np.ndarray:
    return np.asarray([s.projector() for s in settings])


def qst_from_probabilities(settings: Sequence[MeasurementSetting],
                           probs: Sequence[float], **mle_kw) -> DensityMatrix:
    return _qst_core(settings, np.asarray(probs, dtype=float), **mle_kw)


def qst_reconstruct(records: Sequence[CountRecord], **mle_kw) -> DensityMatrix:
    """Reconstruct a density matrix from coincidence count records."""
    if not records:
        raise ValueError("no count records given")
    settings = [r.setting for r in records]
    counts = np.array([r.raw_counts for r in records], dtype=float)
    return _qst_core(settings, counts, **mle_kw)


def _qst_core(settings, counts, **mle_kw) -> DensityMatrix:
    qubits = settings[0].qubits
    if any(s.qubits != qubits for s in settings):
        raise ValueError("all settings must address the same qubits")
    if np.sum(counts) <= 0:
        raise ValueError("all settings have zero counts")
    effects = _setting_effects(settings)
    d = effects.shape[1]
    if len(settings) < d * d:
        raise ValueError(f"need at least {d*d} settings, got {len(settings)}")
    seed = _linear_inversion(effects, counts)
    res = mle_density(effects, counts, seed_matrix=seed, **mle_kw)
    return DensityMatrix(res.matrix, qubits)


def _linear_inversion(effects: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Least-squares solve of Tr(Π_s σ) = counts_s, Hermitized and normalized."""
    m, d, _ = effects.shape
    a = effects.transpose(0, 2, 1).reshape(m, d * d)   # row s = vec(Π_sᵀ)
    if np.linalg.matrix_rank(a, tol=1e-10) < d * d:
        raise ValueError("singular design matrix: measurement set is not informationally complete")
    sol, *_ = np.linalg.lstsq(a, counts.astype(complex), rcond=None)
    sigma = sol.reshape(d, d)
    sigma = (sigma + sigma.conj().T) / 2
    tr = np.trace(sigma).real
    if abs(tr) < 1e-12:
        raise ValueError("linear inversion produced a traceless matrix")
    return sigma / tr


# ---------------------------------------------------------------------------
# process tomography


def qpt_input_tokens() -> list[str]:
    """The 16 product preparations as two-character tokens."""
    return [a.value + b.value for a, b in itertools.product(KET_ORDER, repeat=2)]


def qpt_prep_matrix(token: str) -> np.ndarray:
    """Density matrix of the product preparation named by ``token``."""
    if len(token) != 2:
        raise ValueError(f"prep token must have 2 characters, got {token!r}")
    k1, k2 = BasisKet.from_token(token[0]), BasisKet.from_token(token[1])
    return np.kron(projector(k1), projector(k2))


def qpt_reconstruct(records: Sequence[CountRecord], **mle_kw) -> "ChiMatrix":
    """Full process tomography from 16 preparations × 16 settings."""
    by_prep: dict[str, list[CountRecord]] = {}
    for rec in records:
        if rec.setting.prep is None:
            raise ValueError("process tomography records need a preparation tag "
                             "in the setting (label prefix 'in:')")
        by_prep.setdefault(rec.setting.prep, []).append(rec)
    expected = qpt_input_tokens()
    missing = [t for t in expected if t not in by_prep]
    if missing:
        raise ValueError(f"missing input preparations: {missing}")
    prep_tokens = expected
    settings_counts = []
    rho_out = []
    for token in prep_tokens:
        recs = by_prep[token]
        rho_out.append(qst_reconstruct(recs, **mle_kw).matrix)
        settings_counts.append((recs[0].setting.qubits,
                                [(r.setting, float(r.raw_counts)) for r in recs]))
    rho_in = [qpt_prep_matrix(t) for t in prep_tokens]
    effects = []
    counts = []
    for (qubits, recs), rin in zip(settings_counts, rho_in):
        for setting, c in recs:
            effects.append(np.kron(rin.T, setting.projector()))
            counts.append(c)
    return _qpt_core(rho_in, rho_out, effects, counts, **mle_kw)


def qpt_from_probabilities(prep_tokens: Sequence[str],
                           settings: Sequence[MeasurementSetting],
                           probs: np.ndarray, **mle_kw) -> "ChiMatrix":
    """Exact-data path: ``probs[j, s]`` for preparation j and setting s."""
    probs = np.asarray(probs, dtype=float)
    rho_in = [qpt_prep_matrix(t) for t in prep_tokens]
    setting_effects = _setting_effects(settings)
    rho_out = []
    for j, token in enumerate(prep_tokens):
        rho_out.append(qst_from_probabilities(settings, probs[j], **mle_kw).matrix)
    effects = [np.kron(rin.T, eff) for rin in rho_in for eff in setting_effects]
    counts = probs.reshape(-1)
    return _qpt_core(rho_in, rho_out, effects, counts, **mle_kw)


def _qpt_core(rho_in, rho_out, effects, counts, **mle_kw) -> "ChiMatrix":
    d = rho_in[0].shape[0]
    rin = np.column_stack([r.reshape(d * d) for r in rho_in])
    rout = np.column_stack([r.reshape(d * d) for r in rho_out])
    superop = rout @ np.linalg.inv(rin)
    choi = choi_from_superop(superop) / d          # trace-1 Choi
    choi = project_cptp(choi, d)
    res = mle_density(effects, counts, seed_matrix=choi, **mle_kw)
    choi = project_cptp(res.matrix, d)
    chi = chi_from_superop(superop_from_choi(choi * d))
    return ChiMatrix(chi)


def project_cptp(choi: np.ndarray, d: int, *, rounds: int = 500,
                 tol: float = 1e-9) -> np.ndarray:
    """Alternating projection of a trace-1 Choi operator onto CPTP.

    PSD step: clamp negative eigenvalues. TP step: shift so the output
    marginal is maximally mixed (input factor first).
    """
    j = np.asarray(choi, dtype=complex)
    eye = np.eye(d) / d
    for _ in range(rounds):
        # PSD projection
        w, v = np.linalg.eigh((j + j.conj().T) / 2)
        j = (v * np.clip(w, 0.0, None)) @ v.conj().T
        # TP projection: Tr_out(J) must equal I/d
        marg = np.einsum("abcb->ac", j.reshape(d, d, d, d))
        delta = eye - marg
        j = j + np.kron(delta, eye)
        w_min = float(np.linalg.eigvalsh((j + j.conj().T) / 2).min())
        tp_err = float(np.linalg.norm(
            np.einsum("abcb->ac", j.reshape(d, d, d, d)) - eye))
        if w_min >= -tol and tp_err <= tol:
            break
    return (j + j.conj().T) / 2


# ---------------------------------------------------------------------------
# chi / superoperator / Choi / PTM conversions (row-major vec)


class ChiMatrix:
    """Process matrix in the two-qubit Pauli basis {I,X,Y,Z}⊗{I,X,Y,Z}."""

    def __init__(self, matrix: np.ndarray, *, validate: bool = True,
                 herm_tol: float = 1e-8, psd_tol: float = 1e-8, tp_tol: float = 1e-6):
        mat = np.asarray(matrix, dtype=complex)
        if mat.shape != (16, 16):
            raise ValueError(f"chi matrix must be 16×16, got {mat.shape}")
        if validate:
            herm = float(np.max(np.abs(mat - mat.conj().T)))
            if herm > herm_tol:
                raise ValueError(f"chi not Hermitian (dev {herm:.2e})")
            mat = (mat + mat.conj().T) / 2
            w = np.linalg.eigvalsh(mat)
            if w.min() < -psd_tol:
                raise ValueError(f"chi not PSD (eigenvalue {w.min():.2e})")
            tp = np.einsum("k,kab->ab", mat.reshape(256), _TP_STACK)
            tp_err = float(np.max(np.abs(tp - np.eye(4))))
            if tp_err > tp_tol:
                raise ValueError(f"chi violates trace preservation (dev {tp_err:.2e})")
        self.matrix = mat
        self.labels = list(PAULI_LABELS_2Q)

    def to_json_dict(self) -> dict:
        return matrix_to_json_dict(self.matrix, self.labels)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


def chi_of_unitary(u: np.ndarray) -> np.ndarray:
    """Rank-1 chi of a two-qubit unitary: outer product of Pauli coefficients."""
    c = np.array([np.trace(p @ u) / 4 for p in PAULIS_2Q])
    return np.outer(c, c.conj())


def chi_cnot() -> np.ndarray:
    return chi_of_unitary(CNOT_MATRIX)


# stacked superoperator basis: _CHI_BASIS[m*16+n] = P_m ⊗ conj(P_n);
# _TP_STACK[m*16+n] = P_n† P_m enters the trace-preservation constraint
_CHI_BASIS = np.array([np.kron(PAULIS_2Q[m], PAULIS_2Q[n].conj())
                       for m in range(16) for n in range(16)])
_TP_STACK = np.array([PAULIS_2Q[n].conj().T @ PAULIS_2Q[m]
                      for m in range(16) for n in range(16)])


def superop_from_chi(chi: np.ndarray) -> np.ndarray:
    chi = _as_matrix(chi)
    return np.einsum("k,kab->ab", chi.reshape(256), _CHI_BASIS)


def chi_from_superop(superop: np.ndarray) -> np.ndarray:
    coeffs = np.einsum("kab,ab->k", _CHI_BASIS.conj(), superop) / 16.0
    return coeffs.reshape(16, 16)


def choi_from_superop(superop: np.ndarray, d: int = 4) -> np.ndarray:
    """J = Σ_ij E_ij ⊗ E(E_ij) (input factor first, trace d for TP maps)."""
    s4 = superop.reshape(d, d, d, d)
    return s4.transpose(2, 0, 3, 1).reshape(d * d, d * d)


def superop_from_choi(choi: np.ndarray, d: int = 4) -> np.ndarray:
    j4 = choi.reshape(d, d, d, d)
    return j4.transpose(1, 3, 0, 2).reshape(d * d, d * d)


def process_fidelity(chi_exp, chi_ideal, error_bar: float = 0.0) -> FidelityReport:
    """Uhlmann fidelity between trace-normalized process matrices."""
    a = _as_matrix(chi_exp)
    b = _as_matrix(chi_ideal)
    a = a / np.trace(a).real
    b = b / np.trace(b).real
    return FidelityReport(value=uhlmann_fidelity(a, b), kind="process",
                          error_bar=error_bar, d=4)


def average_gate_fidelity(f_p: float | FidelityReport, d: int = 4) -> FidelityReport:
    """F_avg = (d·F_p + 1)/(d + 1)."""
    err = 0.0
    if isinstance(f_p, FidelityReport):
        err = f_p.error_bar * d / (d + 1)
        f_p = f_p.value
    if not 0.0 <= f_p <= 1.0:
        raise ValueError(f"process fidelity {f_p} outside [0, 1]")
    if d < 2:
        raise ValueError(f"dimension {d} must be >= 2")
    return FidelityReport(value=(d * f_p + 1) / (d + 1), kind="average_gate",
                          error_bar=err, d=d)


_PAULI_STACK = np.array(PAULIS_2Q)


def to_ptm(chi) -> np.ndarray:
    """Pauli transfer matrix R_ij = (1/4)·Tr(P_i E(P_j)) of a chi matrix."""
    superop = superop_from_chi(_as_matrix(chi))
    outs = np.einsum("xy,jy->jx", superop,
                     _PAULI_STACK.reshape(16, 16)).reshape(16, 4, 4)
    r = np.einsum("iab,jba->ij", _PAULI_STACK, outs) / 4
    if np.max(np.abs(r.imag)) > 1e-8:
        raise ValueError(f"PTM has imaginary parts up to {np.max(np.abs(r.imag)):.2e}")
    return r.real


# ---------------------------------------------------------------------------
# Monte Carlo error bars


def bootstrap_sigma(counts: Sequence[float], metric: Callable[[np.ndarray], float],
                    n_resamples: int = 200, master_seed: int = 0) -> float:
    """Parametric bootstrap: Poisson-resample counts, σ of the re-run metric."""
    counts = np.asarray(counts, dtype=float)
    if n_resamples <= 1:
        return 0.0
    values = np.empty(n_resamples)
    for k in range(n_resamples):
        seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(k,))
        rng = np.random.Generator(np.random.PCG64(seq))
        values[k] = metric(rng.poisson(counts).astype(float))
    return float(values.std(ddof=1))
