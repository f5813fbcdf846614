"""Simulated coincidence counting: Poisson statistics over integration
windows, the two source-characterization scans (HOM dip, CHSH fringes),
and CSV persistence of count records.

Count model: a setting with projection probability p accumulates
``rate · T · p`` true coincidences plus a flat accidental background
``rate · T · ratio · p_acc`` (p_acc = 1/4 for a two-qubit setting). Raw
counts keep the background; "subtracted" quantities remove the known
accidental estimate.

Seed discipline: every setting draws from its own child generator derived
from the master seed and the setting index through
``SeedSequence(entropy=master, spawn_key=(index,))``, so scans are
reproducible and order-independent.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

from .qcore import BasisKet, DensityMatrix, projector
from .noise import NoiseConfig

__all__ = [
    "MeasurementSetting",
    "CountRecord",
    "ScanResult",
    "ChshResult",
    "expected_counts",
    "sample_counts",
    "derive_seed",
    "acquire_counts",
    "hom_scan",
    "chsh_scan",
    "DEFAULT_CHSH_ANGLES",
    "persist_counts",
    "load_counts",
]

ACCIDENTAL_PROJECTION = 0.25   # uniform background over a two-qubit setting


@dataclass(frozen=True)
class MeasurementSetting:
    """Per-qubit analysis kets, e.g. q1:+ with q4:i, optionally tagged with
    the input preparation for process-tomography records."""

    kets: tuple
    qubits: tuple
    prep: str | None = None

    def __post_init__(self):
        kets = tuple(BasisKet.from_token(k) if isinstance(k, str) else k
                     for k in self.kets)
        object.__setattr__(self, "kets", kets)
        object.__setattr__(self, "qubits", tuple(self.qubits))
        if len(self.kets) != len(self.qubits):
            raise ValueError("one analysis ket per qubit required")

    @property
    def label(self) -> str:
        body = ", ".join(f"{q}:{k.value}" for q, k in zip(self.qubits, self.kets))
        if self.prep is not None:
            return f"in:{self.prep} {body}"
        return body

    @classmethod
    def from_label(cls, label: str) -> "MeasurementSetting":
        text = label.strip()
        prep = None
        if text.startswith("in:"):
            head, _, text = text.partition(" ")
            prep = head[3:]
            if not prep:
                raise ValueError(f"empty preparation tag in label {label!r}")
        qubits, kets = [], []
        for part in text.split(","):
            part = part.strip()
            if not part:
                raise ValueError(f"malformed setting label {label!r}")
            q, _, k = part.partition(":")
            if not q or not k:
                raise ValueError(f"malformed setting label {label!r}")
            qubits.append(q)
            kets.append(BasisKet.from_token(k))
        return cls(kets=tuple(kets), qubits=tuple(qubits), prep=prep)

    def projector(self) -> np.ndarray:
        mat = np.array([[1.0]], dtype=complex)
        for k in self.kets:
            mat = np.kron(mat, projector(k))
        return mat

    def probability(self, rho: DensityMatrix | np.ndarray) -> float:
        mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
        return float(np.real(np.trace(self.projector() @ mat)))


@dataclass(frozen=True)
class CountRecord:
    setting: MeasurementSetting
    duration_s: float
    raw_counts: int
    accidental_estimate: float
    seed: int

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError(f"duration must be > 0, got {self.duration_s}")
        if self.raw_counts < 0:
            raise ValueError(f"raw_counts must be >= 0, got {self.raw_counts}")
        if self.accidental_estimate < 0:
            raise ValueError("accidental_estimate must be >= 0")


def expected_counts(p: float, cfg: NoiseConfig, duration_s: float,
                    p_accidental: float = ACCIDENTAL_PROJECTION) -> float:
    """rate·T·p true coincidences plus the flat accidental background."""
    if not -1e-12 <= p <= 1 + 1e-12:
        raise ValueError(f"probability {p} outside [0, 1]")
    flux = cfg.pair_rate_hz * duration_s
    return flux * max(p, 0.0) + flux * cfg.accidental_ratio * p_accidental


def derive_seed(master_seed: int, index: int) -> int:
    """Child seed for setting ``index``: the index is mixed into the master
    seed through a SeedSequence spawn key."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return int(seq.generate_state(1, np.uint64)[0])


def sample_counts(expected: float, seed: int) -> int:
    """One Poisson draw, deterministic per seed."""
    if expected < 0:
        raise ValueError(f"expected counts must be >= 0, got {expected}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return int(rng.poisson(expected))


def acquire_counts(settings: Sequence[MeasurementSetting], probs: Sequence[float],
                   cfg: NoiseConfig, duration_s: float,
                   master_seed: int) -> list[CountRecord]:
    """Sample one integration window per setting with per-setting child seeds."""
    records = []
    flux = cfg.pair_rate_hz * duration_s
    for idx, (setting, p) in enumerate(zip(settings, probs)):
        seed = derive_seed(master_seed, idx)
        mean = expected_counts(p, cfg, duration_s)
        records.append(CountRecord(
            setting=setting,
            duration_s=duration_s,
            raw_counts=sample_counts(mean, seed),
            accidental_estimate=flux * cfg.accidental_ratio * ACCIDENTAL_PROJECTION,
            seed=seed,
        ))
    return records


# ---------------------------------------------------------------------------
# Hong-Ou-Mandel dip


@dataclass
class ScanResult:
    """A characterization scan with its fitted visibility."""

    x_values: np.ndarray
    counts: np.ndarray
    fit_curve: np.ndarray
    visibility: float            # after accidental subtraction
    visibility_raw: float        # fitted on raw counts
    coherence_fit: float
    fit_residual: float
    accidental_level: float

    def __post_init__(self):
        if not -1e-9 <= self.visibility <= 1.05:
            raise ValueError(f"fitted visibility {self.visibility} outside [0, 1.05]")
        x = np.asarray(self.x_values, dtype=float)
        if np.any(np.diff(x) <= 0):
            raise ValueError("x values must be strictly increasing")

    def to_json_dict(self) -> dict:
        return {
            "x_values": list(map(float, self.x_values)),
            "counts": list(map(float, self.counts)),
            "fit_curve": list(map(float, self.fit_curve)),
            "visibility": self.visibility,
            "visibility_raw": self.visibility_raw,
            "coherence_fit": self.coherence_fit,
            "fit_residual": self.fit_residual,
            "accidental_level": self.accidental_level,
        }


def _dip_model(tau, baseline, vis, coherence):
    return baseline * (1.0 - vis * np.exp(-(tau / coherence) ** 2))


def hom_scan(delays_ps: Sequence[float], visibility_v: float, coherence_ps: float,
             cfg: NoiseConfig, *, duration_s: float = 10.0, master_seed: int = 0,
             exact: bool = False) -> ScanResult:
    """Coincidence dip C(τ) = C₀·[1 − v·exp(−(τ/τ_c)²)] plus accidentals.

    The dip visibility is fitted twice: on raw counts and after
    subtracting the known accidental level.
    """
    delays = np.asarray(delays_ps, dtype=float)
    if delays.size < 5:
        raise ValueError(f"need at least 5 delay points for the fit, got {delays.size}")
    if np.any(np.diff(delays) <= 0):
        raise ValueError("delays must be strictly increasing")
    if not 0.0 <= visibility_v <= 1.0:
        raise ValueError(f"visibility must be in [0, 1], got {visibility_v}")
    if coherence_ps <= 0:
        raise ValueError("coherence time must be positive")

    baseline = 0.5 * cfg.pair_rate_hz * duration_s     # distinguishable-photon level
    accidental = cfg.accidental_ratio * baseline
    truth = _dip_model(delays, baseline, visibility_v, coherence_ps) + accidental
    if exact:
        counts = truth.copy()
    else:
        counts = np.array([float(sample_counts(t, derive_seed(master_seed, i)))
                           for i, t in enumerate(truth)])

    def fit(values):
        p0 = (max(values.max(), 1.0), min(max(visibility_v, 0.1), 1.0), coherence_ps)
        popt, _ = curve_fit(
            _dip_model, delays, values, p0=p0,
            bounds=([0.0, 0.0, coherence_ps / 10], [np.inf, 1.05, coherence_ps * 10]),
            maxfev=20000)
        return popt

    b_raw, v_raw, _ = fit(counts)
    b_sub, v_sub, tau_sub = fit(np.clip(counts - accidental, 0.0, None))
    fit_curve = _dip_model(delays, b_sub, v_sub, tau_sub) + accidental
    residual = float(np.sqrt(np.mean((fit_curve - counts) ** 2)))
    return ScanResult(
        x_values=delays, counts=counts, fit_curve=fit_curve,
        visibility=float(v_sub), visibility_raw=float(v_raw),
        coherence_fit=float(tau_sub), fit_residual=residual,
        accidental_level=float(accidental),
    )


# ---------------------------------------------------------------------------
# CHSH


# analyzer angle θ selects the dichotomic observable cosθ·X + sinθ·Y;
# at these four pairs S = E(a,b) − E(a,b′) + E(a′,b) + E(a′,b′) reaches
# 2√2 on the ideal pair and scales with the pair's fringe coherence.
DEFAULT_CHSH_ANGLES = (
    (0.0, np.pi / 4),
    (0.0, 3 * np.pi / 4),
    (-np.pi / 2, np.pi / 4),
    (-np.pi / 2, 3 * np.pi / 4),
)

_CHSH_SIGNS = (1.0, -1.0, 1.0, 1.0)


@dataclass
class ChshResult:
    s_value: float               # accidental-subtracted
    s_raw: float
    sigma: float
    e_values: tuple
    counts: np.ndarray = field(repr=False, default=None)

    def to_json_dict(self) -> dict:
        return {
            "s_value": self.s_value,
            "s_raw": self.s_raw,
            "sigma": self.sigma,
            "e_values": list(self.e_values),
        }


def _analyzer_ket(theta: float, sign: int) -> np.ndarray:
    # eigenvectors of cosθ·X + sinθ·Y: (|0⟩ ± e^{iθ}|1⟩)/√2
    return np.array([1.0, sign * np.exp(1j * theta)], dtype=complex) / np.sqrt(2)


def chsh_scan(state: DensityMatrix, settings: Sequence[tuple] | None = None,
              cfg: NoiseConfig | None = None, *, duration_s: float = 10.0,
              master_seed: int = 0, exact: bool = False) -> ChshResult:
    """CHSH correlator from 4 analyzer-angle pairs × 4 joint projections.

    Returns both the accidental-subtracted and the raw S; the error is
    Poisson-propagated through the 16 raw counts.
    """
    if state.n_qubits != 2:
        raise ValueError("CHSH needs a two-qubit state")
    settings = tuple(settings) if settings is not None else DEFAULT_CHSH_ANGLES
    if len(settings) != 4:
        raise ValueError(f"need 4 analyzer-angle pairs, got {len(settings)}")
    cfg = cfg or NoiseConfig.ideal()

    flux = cfg.pair_rate_hz * duration_s
    accidental = flux * cfg.accidental_ratio * ACCIDENTAL_PROJECTION
    e_sub, e_raw, variances = [], [], []
    all_counts = []
    idx = 0
    for theta_a, theta_b in settings:
        counts4, probs4, signs = [], [], []
        for sa in (+1, -1):
            for sb in (+1, -1):
                ka = _analyzer_ket(theta_a, sa)
                kb = _analyzer_ket(theta_b, sb)
                proj = np.kron(np.outer(ka, ka.conj()), np.outer(kb, kb.conj()))
                p = float(np.real(np.trace(proj @ state.matrix)))
                probs4.append(p)
                signs.append(sa * sb)
                if exact:
                    counts4.append(expected_counts(p, cfg, duration_s))
                else:
                    counts4.append(float(sample_counts(
                        expected_counts(p, cfg, duration_s),
                        derive_seed(master_seed, idx))))
                idx += 1
        counts4 = np.asarray(counts4)
        signs = np.asarray(signs, dtype=float)
        all_counts.append(counts4)
        total_raw = counts4.sum()
        if total_raw <= 0:
            raise ValueError("degenerate CHSH data: all-zero counts for a setting pair")
        e_raw_k = float(np.dot(signs, counts4) / total_raw)
        sub = counts4 - accidental
        total_sub = sub.sum()
        if abs(total_sub) < 1e-12:
            raise ValueError("degenerate CHSH data after accidental subtraction")
        e_sub_k = float(np.dot(signs, sub) / total_sub)
        e_raw.append(e_raw_k)
        e_sub.append(e_sub_k)
        # Poisson propagation on raw counts
        var = float(np.sum((signs - e_raw_k) ** 2 * counts4) / total_raw ** 2)
        variances.append(var)

    s_sub = float(np.dot(_CHSH_SIGNS, e_sub))
    s_raw = float(np.dot(_CHSH_SIGNS, e_raw))
    sigma = float(np.sqrt(np.sum(variances)))
    return ChshResult(s_value=s_sub, s_raw=s_raw, sigma=sigma,
                      e_values=tuple(e_sub), counts=np.array(all_counts))


# ---------------------------------------------------------------------------
# persistence

CSV_HEADER = ["setting", "duration_s", "raw_counts", "accidental_estimate", "seed"]


def persist_counts(records: Sequence[CountRecord], path: str | Path) -> None:
    """Write records as CSV (atomic: temp file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow([rec.setting.label, repr(rec.duration_s),
                             rec.raw_counts, repr(rec.accidental_estimate),
                             rec.seed])
    os.replace(tmp, path)


def load_counts(path: str | Path) -> list[CountRecord]:
    """Exact inverse of persist_counts; malformed rows name their line."""
    path = Path(path)
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: line 1: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValueError(f"{path}: line {lineno}: expected 5 fields, got {len(row)}")
            try:
                setting = MeasurementSetting.from_label(row[0])
                duration = float(row[1])
                counts = int(row[2])
                accidental = float(row[3])
                seed = int(row[4])
                rec = CountRecord(setting=setting, duration_s=duration,
                                  raw_counts=counts, accidental_estimate=accidental,
                                  seed=seed)
            except (ValueError, OverflowError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            records.append(rec)
    return records
