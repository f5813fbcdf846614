"""Parameterized imperfection models for the teleported-gate laboratory.

Four scalar knobs cover the imperfections the experiment exposes:

``werner_p``
    Purity of the shared photon-pair source. The resource state becomes
    ``p |Φ⟩⟨Φ| + (1−p) I/4``. The source's own Bell-test quality
    (fringe visibility, CHSH S value) is set by this knob alone.
``extinction_eps``
    Crosstalk of the on-chip polarized coupler realizing the local chip
    gate: an amplitude fraction ε exits in the wrong output polarization.
    Modeled as a bit-error Kraus branch on the gate's target qubit. The
    free-space local gate is kept ideal; its small infidelity is absorbed
    by the other knobs.
``visibility_v``
    Two-photon interference quality of the protocol optics. Applied as a
    phase-damping channel on the shared pair before the local gates run,
    scaling EPR coherences by v.
``accidental_ratio``
    Uncorrelated background coincidences per true coincidence, projecting
    uniformly (1/4 per two-qubit setting). Raw counts keep them.

``calibrate`` fits the knobs against a set of measured fidelity goals
using the exact (expectation-value) pipeline, no sampling involved.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .qcore import I2, X, Z, CNOT_MATRIX, DensityMatrix, bell_state

log = logging.getLogger(__name__)

__all__ = [
    "NoiseConfig",
    "Channel",
    "werner",
    "leaky_cnot",
    "dephase_pair",
    "depolarizing_channel",
    "CalibrationResult",
    "CalibrationError",
    "calibrate",
    "PAPER_TARGETS",
    "PAPER_SOURCE_S",
    "RESIDUAL_THRESHOLD",
]


@dataclass(frozen=True)
class NoiseConfig:
    """Scalar noise knobs; the default configuration is ideal."""

    werner_p: float = 1.0
    extinction_eps: float = 0.0
    visibility_v: float = 1.0
    accidental_ratio: float = 0.0
    pair_rate_hz: float = 200.0

    def __post_init__(self):
        for name in ("werner_p", "extinction_eps", "visibility_v",
                     "accidental_ratio", "pair_rate_hz"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not 0.0 <= self.werner_p <= 1.0:
            raise ValueError(f"werner_p must be in [0, 1], got {self.werner_p}")
        if not 0.0 <= self.extinction_eps <= 0.5:
            raise ValueError(f"extinction_eps must be in [0, 0.5], got {self.extinction_eps}")
        if not 0.0 <= self.visibility_v <= 1.0:
            raise ValueError(f"visibility_v must be in [0, 1], got {self.visibility_v}")
        if self.accidental_ratio < 0.0:
            raise ValueError(f"accidental_ratio must be >= 0, got {self.accidental_ratio}")
        if self.pair_rate_hz <= 0.0:
            raise ValueError(f"pair_rate_hz must be > 0, got {self.pair_rate_hz}")

    @classmethod
    def ideal(cls, pair_rate_hz: float = 200.0) -> "NoiseConfig":
        return cls(pair_rate_hz=pair_rate_hz)

    @property
    def is_ideal(self) -> bool:
        return (self.werner_p == 1.0 and self.extinction_eps == 0.0
                and self.visibility_v == 1.0 and self.accidental_ratio == 0.0)

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, data: dict) -> "NoiseConfig":
        known = {f: data[f] for f in
                 ("werner_p", "extinction_eps", "visibility_v",
                  "accidental_ratio", "pair_rate_hz") if f in data}
        return cls(**known)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "NoiseConfig":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Channel:
    """Completely positive trace-preserving map as a Kraus set on named qubits."""

    kraus: tuple
    targets: tuple
    name: str = "channel"

    def __post_init__(self):
        kraus = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        object.__setattr__(self, "kraus", kraus)
        object.__setattr__(self, "targets", tuple(self.targets))
        dim = 2 ** len(self.targets)
        acc = np.zeros((dim, dim), dtype=complex)
        for k in kraus:
            if k.shape != (dim, dim):
                raise ValueError(f"Kraus operator shape {k.shape}, expected {(dim, dim)}")
            acc += k.conj().T @ k
        dev = float(np.max(np.abs(acc - np.eye(dim))))
        if dev > 1e-10:
            raise ValueError(f"Kraus set is not trace preserving (|ΣK†K - I| = {dev:.2e})")

    @property
    def dim(self) -> int:
        return 2 ** len(self.targets)

    def apply_matrix(self, mat: np.ndarray) -> np.ndarray:
        """Σ K mat K† for a matrix already living on this channel's qubits."""
        out = np.zeros_like(mat, dtype=complex)
        for k in self.kraus:
            out += k @ mat @ k.conj().T
        return out

    def choi(self) -> np.ndarray:
        """Choi matrix J = Σ_ij |i⟩⟨j| ⊗ E(|i⟩⟨j|), trace d."""
        d = self.dim
        j = np.zeros((d * d, d * d), dtype=complex)
        for i in range(d):
            for jj in range(d):
                eij = np.zeros((d, d), dtype=complex)
                eij[i, jj] = 1.0
                j[i * d:(i + 1) * d, jj * d:(jj + 1) * d] = self.apply_matrix(eij)
        return j

    def is_completely_positive(self, tol: float = 1e-9) -> bool:
        evals = np.linalg.eigvalsh((self.choi() + self.choi().conj().T) / 2)
        return bool(evals.min() >= -tol)


def werner(p: float, labels: Sequence[str] = ("q2", "q3")) -> DensityMatrix:
    """Werner resource state p·|Φ⟩⟨Φ| + (1−p)·I/4 with |Φ⟩=(|00⟩+|11⟩)/√2."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"werner parameter must be in [0, 1], got {p}")
    phi = bell_state("phi+", "standard", labels)
    mat = p * np.outer(phi.amplitudes, phi.amplitudes.conj()) + (1 - p) * np.eye(4) / 4
    return DensityMatrix(mat, labels)


def leaky_cnot(eps: float, control: str = "q1", target: str = "q2") -> Channel:
    """CNOT with amplitude fraction ``eps`` leaking into the wrong target
    polarization; the leaked branch decoheres (bit error after the gate)."""
    if not 0.0 <= eps <= 0.5:
        raise ValueError(f"extinction eps must be in [0, 0.5], got {eps}")
    u = CNOT_MATRIX
    if eps == 0.0:
        return Channel((u,), (control, target), name="cnot")
    x_on_target = np.kron(I2, X)
    kraus = (np.sqrt(1 - eps) * u, np.sqrt(eps) * (x_on_target @ u))
    return Channel(kraus, (control, target), name=f"leaky_cnot({eps})")


def dephase_pair(v: float, targets: Sequence[str] = ("q2", "q3")) -> Channel:
    """Scale the pair's cross coherences by ``v`` (phase damping on one arm)."""
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"visibility must be in [0, 1], got {v}")
    z_first = np.kron(Z, I2)
    kraus = (np.sqrt((1 + v) / 2) * np.eye(4), np.sqrt((1 - v) / 2) * z_first)
    return Channel(kraus, tuple(targets), name=f"dephase_pair({v})")


def depolarizing_channel(strength: float, targets: Sequence[str]) -> Channel:
    """n-qubit depolarizing channel E(ρ) = (1−λ)ρ + λ I/2ⁿ."""
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"depolarizing strength must be in [0, 1], got {strength}")
    targets = tuple(targets)
    n = len(targets)
    d = 2 ** n
    paulis = [I2, X, np.array([[0, -1j], [1j, 0]]), Z]
    kraus = []
    for combo in itertools.product(range(4), repeat=n):
        p = np.array([[1.0]], dtype=complex)
        for c in combo:
            p = np.kron(p, paulis[c])
        weight = strength / (d * d)
        if all(c == 0 for c in combo):
            weight += 1 - strength
        if weight > 0:
            kraus.append(np.sqrt(weight) * p)
    return Channel(tuple(kraus), targets, name=f"depolarizing({strength})")


PAPER_TARGETS = {
    "truth_table": 0.931,
    "state_mean14": 0.870,
    "bell_mean": 0.862,
    "process": 0.831,
    "local_gate": 0.979,
}

# The source's published Bell violation; pins werner_p = S/(2√2).
PAPER_SOURCE_S = 2.686

HEADLINE_KEYS = ("truth_table", "state_mean14", "bell_mean", "process")

RESIDUAL_THRESHOLD = 0.02

DEFAULT_GRID = {
    "werner_p": (0.50, 1.00, 11),
    "visibility_v": (0.50, 1.00, 11),
    "accidental_ratio": (0.00, 0.30, 13),
}
REFINE_ROUNDS = 4


class CalibrationError(RuntimeError):
    """Raised when no config reaches the residual threshold for the targets."""

    def __init__(self, message: str, result: "CalibrationResult"):
        super().__init__(message)
        self.result = result


@dataclass
class CalibrationResult:
    config: NoiseConfig
    achieved: dict
    residuals: dict
    rms_residual: float
    targets: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "achieved": self.achieved,
            "residuals": self.residuals,
            "rms_residual": self.rms_residual,
            "targets": self.targets,
        }


def _grid(lo: float, hi: float, n: int) -> np.ndarray:
    return np.linspace(lo, hi, n)


def calibrate(targets: dict | None = None, *,
              source_s_value: float | None = None,
              grid: dict | None = None,
              evaluator: Callable[[NoiseConfig], dict] | None = None,
              pair_rate_hz: float = 200.0,
              threshold: float = RESIDUAL_THRESHOLD) -> CalibrationResult:
    """Fit the noise knobs to a set of fidelity goals.

    Knobs with their own characterization measurement are solved directly:
    the extinction from the local-gate target (local fidelity is 1−ε in
    this model) and, when ``source_s_value`` is given, the Werner purity
    from the source's Bell violation (p = S/(2√2)). The remaining knobs
    run a deterministic grid search with iterative refinement, minimizing
    squared error over the headline targets; ties break lexicographically
    on the knob values. The reported residual is the root mean square over
    the headline targets.

    Raises CalibrationError when the best RMS residual exceeds
    ``threshold`` (the result is attached to the exception).
    """
    targets = dict(PAPER_TARGETS if targets is None else targets)
    for key, val in targets.items():
        if not 0.0 < val <= 1.0:
            raise ValueError(f"target {key}={val} outside (0, 1]")
    head_keys = [k for k in HEADLINE_KEYS if k in targets]
    if not head_keys:
        raise ValueError(f"no headline targets given; expected some of {HEADLINE_KEYS}")

    if evaluator is None:
        from .experiments import exact_headline_fidelities
        evaluator = exact_headline_fidelities

    # local-gate fidelity is 1−ε in this model; targets below the channel's
    # 0.5 floor saturate the knob and surface as an infeasibility residual
    eps = min(max(1.0 - targets.get("local_gate", 1.0), 0.0), 0.5)
    p_pinned = None
    if source_s_value is not None:
        p_pinned = source_s_value / (2 * np.sqrt(2))
        if not 0.0 <= p_pinned <= 1.0:
            raise ValueError(f"source S value {source_s_value} outside [0, 2√2]")
    grid = dict(DEFAULT_GRID if grid is None else grid)
    free = ["visibility_v", "accidental_ratio"]
    if p_pinned is None:
        free = ["werner_p"] + free

    def objective(point: dict) -> tuple[float, dict]:
        cfg = NoiseConfig(
            werner_p=p_pinned if p_pinned is not None else point["werner_p"],
            extinction_eps=eps,
            visibility_v=point["visibility_v"],
            accidental_ratio=point["accidental_ratio"],
            pair_rate_hz=pair_rate_hz)
        achieved = evaluator(cfg)
        sq = sum((achieved[k] - targets[k]) ** 2 for k in head_keys)
        return sq, achieved

    def as_key(sq: float, point: dict) -> tuple:
        return (sq,) + tuple(point[n] for n in free)

    axes = {name: _grid(*grid[name]) for name in free}
    # the ideal corner goes first so perfect targets resolve to it (and an
    # exact hit short-circuits the search: nothing beats zero error)
    ideal_point = {"werner_p": 1.0, "visibility_v": 1.0, "accidental_ratio": 0.0}
    candidates = [{n: ideal_point[n] for n in free}]
    candidates += [dict(zip(free, combo))
                   for combo in itertools.product(*(axes[n] for n in free))]

    best = None
    for point in candidates:
        sq, achieved = objective(point)
        key = as_key(sq, point)
        if best is None or key < best[0]:
            best = (key, dict(point), achieved)
        if best[0][0] < 1e-24:
            break

    spans = {name: (grid[name][1] - grid[name][0]) for name in free}
    bounds = {name: (grid[name][0], grid[name][1]) for name in free}
    point = dict(best[1])
    for round_idx in range(0 if best[0][0] < 1e-24 else REFINE_ROUNDS):
        shrink = 4 ** (round_idx + 1)
        for name in free:
            half = spans[name] / shrink
            lo = max(bounds[name][0], point[name] - half)
            hi = min(bounds[name][1], point[name] + half)
            for val in np.linspace(lo, hi, 9):
                trial = dict(point)
                trial[name] = float(val)
                sq, achieved = objective(trial)
                key = as_key(sq, trial)
                if key < best[0]:
                    best = (key, dict(trial), achieved)
                    point = trial

    _, point, achieved = best
    cfg = NoiseConfig(
        werner_p=float(p_pinned if p_pinned is not None else point["werner_p"]),
        extinction_eps=float(eps),
        visibility_v=float(point["visibility_v"]),
        accidental_ratio=float(point["accidental_ratio"]),
        pair_rate_hz=pair_rate_hz)
    residuals = {k: achieved[k] - targets[k] for k in targets if k in achieved}
    rms = float(np.sqrt(np.mean([(achieved[k] - targets[k]) ** 2 for k in head_keys])))
    result = CalibrationResult(config=cfg, achieved=achieved, residuals=residuals,
                               rms_residual=rms, targets=targets)
    if rms > threshold:
        raise CalibrationError(
            f"targets are infeasible for this noise model: best RMS residual "
            f"{rms:.4f} exceeds {threshold}", result)
    log.info("calibration: %s rms=%.4f", cfg, rms)
    return result
