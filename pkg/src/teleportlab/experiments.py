"""Experiment orchestration: the four analyses as reproducible runs.

Each runner builds its statistics from the teleported-channel
superoperator, acquires exact or Poisson-sampled counts, reconstructs,
and writes a report directory ``<out>/<experiment>/<tag>/`` containing a
``manifest.json`` plus the data artifacts. Reports are byte-reproducible
for a fixed config and seed: artifact paths are relative, keys sorted,
and the wall-clock field is the single nondeterministic entry.

Exact mode replaces every Poisson draw by its expectation, separating
model error from shot noise; with ideal noise the exact pipelines
reproduce the algebraic identities to numerical precision.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .qcore import DensityMatrix, PureState, cnot, apply
from .noise import (CalibrationError, NoiseConfig, PAPER_SOURCE_S, calibrate, werner)
from .protocol import (InputStatePrep, apply_superop, local_truth_table,
                       teleported_superop)
from .counting import (CountRecord, acquire_counts, chsh_scan, derive_seed,
                       expected_counts, hom_scan, persist_counts)
from . import tomography as tomo
from .tomography import (FidelityReport, average_gate_fidelity, bootstrap_sigma,
                         chi_cnot, ideal_cnot_truth_table, process_fidelity,
                         qst_from_probabilities, qst_reconstruct, qst_settings,
                         qpt_from_probabilities, qpt_input_tokens, qpt_reconstruct,
                         state_fidelity, to_ptm, truth_table_fidelity)

__all__ = [
    "ConfigError",
    "NumericalError",
    "ExperimentConfig",
    "Report",
    "EXPERIMENTS",
    "PAPER14_TOKENS",
    "BELL_TOKENS",
    "COMPUTATIONAL_TOKENS",
    "fixture_dir",
    "load_fixture_noise",
    "measured_state",
    "exact_headline_fidelities",
    "run_truth_table",
    "run_qst",
    "run_bell",
    "run_qpt",
    "run_characterization",
    "run_calibrate",
    "run_experiment",
]

EXPERIMENTS = ("truth-table", "qst", "bell", "qpt", "chsh", "hom", "calibrate")

COMPUTATIONAL_TOKENS = ["00", "01", "10", "11"]
BELL_TOKENS = ["+0", "+1", "-0", "-1"]
BELL_NAMES = {"+0": "phi+", "+1": "psi+", "-0": "phi-", "-1": "psi-"}
PAPER14_TOKENS = ["00", "01", "0+", "0i", "10", "11", "1+", "1i",
                  "++", "+i", "i0", "i1", "i+", "ii"]
INPUT_GRAMMAR = "two characters from {0, 1, +, -, i}, e.g. '+0'"

DEFAULT_FIXTURE = "calibrated_noise.json"
ENV_FIXTURES = "TELEPORT_LAB_FIXTURES"


class ConfigError(Exception):
    """Bad configuration or usage; the CLI maps this to exit code 2."""


class NumericalError(Exception):
    """Reconstruction or statistics failure; CLI exit code 3."""


def fixture_dir() -> Path:
    env = os.environ.get(ENV_FIXTURES)
    if env:
        return Path(env)
    return Path(resources.files("teleportlab") / "fixtures")


def load_fixture_noise(name: str = DEFAULT_FIXTURE) -> NoiseConfig:
    path = Path(name)
    if not path.is_file():
        path = fixture_dir() / name
    if not path.is_file():
        raise ConfigError(f"noise fixture not found: {name!r} (searched {path})")
    try:
        return NoiseConfig.load(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad noise fixture {path}: {exc}") from exc


@dataclass
class ExperimentConfig:
    noise: NoiseConfig = field(default_factory=NoiseConfig.ideal)
    seed: int = 0
    duration_s: float = 10.0
    experiment: str = ""
    input_state: str | None = None
    output_dir: Path = Path("out")
    exact: bool = False
    tag: str | None = None
    bootstrap: int = 0
    hom_visibility: float = 0.974
    hom_coherence_ps: float = 2.0

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        if self.duration_s <= 0:
            raise ConfigError(f"duration_s must be > 0, got {self.duration_s}")
        if self.experiment and self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"unknown experiment {self.experiment!r}; valid: {', '.join(EXPERIMENTS)}")

    @classmethod
    def from_json_file(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_json_dict(data, **overrides)

    @classmethod
    def from_json_dict(cls, data: dict, **overrides) -> "ExperimentConfig":
        known = {"noise", "seed", "duration_s", "experiment", "input_state",
                 "output_dir", "exact", "tag", "bootstrap",
                 "hom_visibility", "hom_coherence_ps"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(data)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        noise = merged.get("noise")
        if noise is None:
            merged["noise"] = NoiseConfig.ideal()
        elif isinstance(noise, str):
            merged["noise"] = load_fixture_noise(noise)
        elif isinstance(noise, dict):
            try:
                merged["noise"] = NoiseConfig.from_json_dict(noise)
            except ValueError as exc:
                raise ConfigError(f"bad noise config: {exc}") from exc
        elif not isinstance(noise, NoiseConfig):
            raise ConfigError(f"noise must be a fixture name or object, got {type(noise)}")
        try:
            return cls(**merged)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def snapshot(self) -> dict:
        """Deterministic config snapshot for the manifest (placement fields
        like output_dir/tag excluded)."""
        return {
            "noise": self.noise.to_json_dict(),
            "seed": self.seed,
            "duration_s": self.duration_s,
            "experiment": self.experiment,
            "input_state": self.input_state,
            "exact": self.exact,
            "bootstrap": self.bootstrap,
            "hom_visibility": self.hom_visibility,
            "hom_coherence_ps": self.hom_coherence_ps,
        }


@dataclass
class Report:
    experiment: str
    directory: Path
    fidelities: dict
    artifacts: dict
    extra: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def manifest_dict(self) -> dict:
        for name, rel in self.artifacts.items():
            target = self.directory / rel
            if not target.exists():
                raise NumericalError(f"artifact {name} missing at {target}")
        return {
            "experiment": self.experiment,
            "version": __version__,
            "fidelities": self.fidelities,
            "artifacts": self.artifacts,
            "extra": self.extra,
            "wall_clock_s": self.wall_clock_s,
        }


# ---------------------------------------------------------------------------
# exact (expectation-value) pipeline


def measured_state(rho: np.ndarray | DensityMatrix, cfg: NoiseConfig) -> np.ndarray:
    """What tomography sees: true state diluted by the flat accidental
    background, (ρ + r·I/4)/(1 + r)."""
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    r = cfg.accidental_ratio
    return (mat + r * np.eye(4) / 4) / (1 + r)


def _prep_state(token: str) -> PureState:
    try:
        return InputStatePrep.from_token(token).state
    except ValueError as exc:
        raise ConfigError(f"bad input token {token!r}: expected {INPUT_GRAMMAR}") from exc


def _ideal_output(token: str) -> DensityMatrix:
    return apply(cnot("q1", "q4"), _prep_state(token)).to_density()


_DEPOL_SUPEROP = np.outer(np.eye(4).reshape(16) / 4, np.eye(4).reshape(16))


def exact_headline_fidelities(cfg: NoiseConfig) -> dict:
    """The calibrated-simulation observables, evaluated without sampling.

    Tomographic reconstruction on exact data reproduces the measured state
    itself, so fidelities are computed directly from the channel; tests
    pin that equivalence against the full reconstruction path.
    """
    superop = teleported_superop(cfg)
    r = cfg.accidental_ratio

    table = np.zeros((4, 4))
    for row, token in enumerate(COMPUTATIONAL_TOKENS):
        rho_in = _prep_state(token).to_density().matrix
        out = measured_state(apply_superop(superop, rho_in), cfg)
        table[row] = np.diag(out).real
    f_tt = truth_table_fidelity(table, ideal_cnot_truth_table()).value

    def mean_state_fid(tokens):
        vals = []
        for token in tokens:
            rho_in = _prep_state(token).to_density().matrix
            out = measured_state(apply_superop(superop, rho_in), cfg)
            vals.append(state_fidelity(out, _ideal_output(token).matrix).value)
        return float(np.mean(vals)), vals

    f_14, per14 = mean_state_fid(PAPER14_TOKENS)
    f_bell, per_bell = mean_state_fid(BELL_TOKENS)

    superop_meas = (superop + r * _DEPOL_SUPEROP) / (1 + r)
    chi_meas = tomo.chi_from_superop(superop_meas)
    f_p = process_fidelity(chi_meas, chi_cnot()).value

    local = local_truth_table("C12", cfg)
    f_local = truth_table_fidelity(local, ideal_cnot_truth_table()).value

    chsh = chsh_scan(werner(cfg.werner_p, ("q2", "q3")), cfg=cfg, exact=True)

    return {
        "truth_table": f_tt,
        "state_mean14": f_14,
        "bell_mean": f_bell,
        "process": f_p,
        "local_gate": f_local,
        "chsh_s": chsh.s_value,
        "average_gate": average_gate_fidelity(f_p).value,
        "per_state14": per14,
        "per_state_bell": per_bell,
    }


# ---------------------------------------------------------------------------
# report plumbing


def _open_run_dir(cfg: ExperimentConfig, experiment: str) -> tuple[Path, Path]:
    tag = cfg.tag or time.strftime("%Y%m%dT%H%M%S")
    run_dir = cfg.output_dir / experiment / tag
    try:
        run_dir.mkdir(parents=True, exist_ok=False)
    except FileExistsError:
        pass
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        os.close(fd)
    except FileExistsError:
        raise ConfigError(
            f"output directory {run_dir} is already in use (stale {lock}?)") from None
    return run_dir, lock


def _finish(report: Report, cfg: ExperimentConfig, lock: Path, t0: float) -> Report:
    report.wall_clock_s = time.perf_counter() - t0
    manifest = report.manifest_dict()
    manifest["config"] = cfg.snapshot()
    text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    (report.directory / "manifest.json").write_text(text)
    lock.unlink(missing_ok=True)
    return report


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_table_csv(path: Path, matrix: np.ndarray, header: Sequence[str]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in np.asarray(matrix):
            writer.writerow([repr(float(x)) for x in row])


# ---------------------------------------------------------------------------
# runners


def run_truth_table(cfg: ExperimentConfig) -> Report:
    t0 = time.perf_counter()
    run_dir, lock = _open_run_dir(cfg, "truth-table")
    try:
        superop = teleported_superop(cfg.noise)
        settings = qst_settings(("q1", "q4"))[:0]  # computational settings below
        comp_settings = [s for s in qst_settings(("q1", "q4"))
                         if all(k.value in "01" for k in s.kets)]
        table = np.zeros((4, 4))
        counts_flat = []
        for row, token in enumerate(COMPUTATIONAL_TOKENS):
            rho_in = _prep_state(token).to_density().matrix
            out = apply_superop(superop, rho_in)
            probs = [s.probability(out) for s in comp_settings]
            if cfg.exact:
                vals = np.array([expected_counts(p, cfg.noise, cfg.duration_s)
                                 for p in probs])
            else:
                recs = acquire_counts(comp_settings, probs, cfg.noise, cfg.duration_s,
                                      derive_seed(cfg.seed, row))
                vals = np.array([r.raw_counts for r in recs], dtype=float)
            counts_flat.append(vals)
            table[row] = vals
        ideal = ideal_cnot_truth_table()

        err = 0.0
        if not cfg.exact and cfg.bootstrap > 1:
            flat = np.concatenate(counts_flat)

            def metric(resampled):
                return truth_table_fidelity(resampled.reshape(4, 4), ideal).value

            err = bootstrap_sigma(flat, metric, cfg.bootstrap, cfg.seed)

        fid = truth_table_fidelity(table, ideal, error_bar=err)
        _write_table_csv(run_dir / "truth_table.csv", tomo.TruthTable(table).matrix,
                         ["p_00", "p_01", "p_10", "p_11"])
        _write_json(run_dir / "fidelity.json", fid.to_json_dict())
        report = Report(
            experiment="truth-table", directory=run_dir,
            fidelities={"truth_table": fid.to_json_dict()},
            artifacts={"truth_table": "truth_table.csv", "fidelity": "fidelity.json"},
        )
        return _finish(report, cfg, lock, t0)
    except Exception:
        lock.unlink(missing_ok=True)
        raise


def _qst_single(cfg: ExperimentConfig, token: str, seed_index: int,
                run_dir: Path) -> tuple[FidelityReport, str]:
    superop = teleported_superop(cfg.noise)
    rho_in = _prep_state(token).to_density().matrix
    out_true = apply_superop(superop, rho_in)
    settings = qst_settings(("q1", "q4"))
    probs = [s.probability(out_true) for s in settings]
    if cfg.exact:
        rates = [expected_counts(p, cfg.noise, cfg.duration_s) for p in probs]
        rho_rec = qst_from_probabilities(settings, rates)
    else:
        recs = acquire_counts(settings, probs, cfg.noise, cfg.duration_s,
                              derive_seed(cfg.seed, seed_index))
        rho_rec = qst_reconstruct(recs)
    ideal = _ideal_output(token)
    err = 0.0
    if not cfg.exact and cfg.bootstrap > 1:
        counts = np.array([r.raw_counts for r in recs], dtype=float)

        def metric(resampled):
            rec = qst_from_probabilities(settings, resampled)
            return state_fidelity(rec, ideal).value

        err = bootstrap_sigma(counts, metric, cfg.bootstrap,
                              derive_seed(cfg.seed, 10_000 + seed_index))
    fid = state_fidelity(rho_rec, ideal, error_bar=err)
    fname = f"rho_{_safe_token(token)}.json"
    _write_json(run_dir / fname, rho_rec.to_json_dict())
    return fid, fname


def _safe_token(token: str) -> str:
    return token.replace("+", "p").replace("-", "m")


def run_qst(cfg: ExperimentConfig, input_state: str | None = None) -> Report:
    t0 = time.perf_counter()
    token = input_state or cfg.input_state or "paper14"
    run_dir, lock = _open_run_dir(cfg, "qst")
    try:
        tokens = PAPER14_TOKENS if token == "paper14" else [token]
        fids = {}
        artifacts = {}
        for idx, tok in enumerate(tokens):
            fid, fname = _qst_single(cfg, tok, idx, run_dir)
            fids[tok] = fid.to_json_dict()
            artifacts[f"rho_{_safe_token(tok)}"] = fname
        mean = float(np.mean([f["value"] for f in fids.values()]))
        payload = {"per_state": fids, "mean": mean}
        _write_json(run_dir / "fidelity.json", payload)
        artifacts["fidelity"] = "fidelity.json"
        report = Report(experiment="qst", directory=run_dir,
                        fidelities=payload, artifacts=artifacts)
        return _finish(report, cfg, lock, t0)
    except Exception:
        lock.unlink(missing_ok=True)
        raise


def run_bell(cfg: ExperimentConfig) -> Report:
    t0 = time.perf_counter()
    run_dir, lock = _open_run_dir(cfg, "bell")
    try:
        fids = {}
        artifacts = {}
        for idx, tok in enumerate(BELL_TOKENS):
            fid, fname = _qst_single(cfg, tok, idx, run_dir)
            fids[tok] = fid.to_json_dict()
            fids[tok]["bell_state"] = BELL_NAMES[tok]
            artifacts[f"rho_{_safe_token(tok)}"] = fname
        mean = float(np.mean([f["value"] for f in fids.values()]))
        payload = {"per_state": fids, "mean": mean}
        _write_json(run_dir / "fidelity.json", payload)
        artifacts["fidelity"] = "fidelity.json"
        report = Report(experiment="bell", directory=run_dir,
                        fidelities=payload, artifacts=artifacts)
        return _finish(report, cfg, lock, t0)
    except Exception:
        lock.unlink(missing_ok=True)
        raise


def run_qpt(cfg: ExperimentConfig) -> Report:
    t0 = time.perf_counter()
    run_dir, lock = _open_run_dir(cfg, "qpt")
    try:
        superop = teleported_superop(cfg.noise)
        tokens = qpt_input_tokens()
        plain_settings = qst_settings(("q1", "q4"))
        if cfg.exact:
            probs = np.zeros((16, 16))
            for j, token in enumerate(tokens):
                out = apply_superop(superop, tomo.qpt_prep_matrix(token))
                probs[j] = [expected_counts(s.probability(out), cfg.noise,
                                            cfg.duration_s)
                            for s in plain_settings]
            chi = qpt_from_probabilities(tokens, plain_settings, probs)
            records = None
        else:
            records = []
            for j, token in enumerate(tokens):
                out = apply_superop(superop, tomo.qpt_prep_matrix(token))
                tagged = qst_settings(("q1", "q4"), prep=token)
                p = [s.probability(out) for s in tagged]
                records.extend(acquire_counts(tagged, p, cfg.noise, cfg.duration_s,
                                              derive_seed(cfg.seed, j)))
            chi = qpt_reconstruct(records)

        f_p = process_fidelity(chi, chi_cnot())
        f_avg = average_gate_fidelity(f_p)
        ptm = to_ptm(chi)
        _write_json(run_dir / "chi.json", chi.to_json_dict())
        _write_table_csv(run_dir / "ptm.csv", ptm, tomo.PAULI_LABELS_2Q)
        payload = {"process": f_p.to_json_dict(), "average_gate": f_avg.to_json_dict()}
        _write_json(run_dir / "fidelity.json", payload)
        artifacts = {"chi": "chi.json", "ptm": "ptm.csv", "fidelity": "fidelity.json"}
        if records is not None:
            persist_counts(records, run_dir / "counts.csv")
            artifacts["counts"] = "counts.csv"
        report = Report(experiment="qpt", directory=run_dir,
                        fidelities=payload, artifacts=artifacts)
        return _finish(report, cfg, lock, t0)
    except Exception:
        lock.unlink(missing_ok=True)
        raise


def run_characterization(cfg: ExperimentConfig, which: str) -> Report:
    t0 = time.perf_counter()
    if which not in ("chsh", "hom"):
        raise ConfigError(f"characterization must be 'chsh' or 'hom', got {which!r}")
    run_dir, lock = _open_run_dir(cfg, which)
    try:
        if which == "chsh":
            source = werner(cfg.noise.werner_p, ("q2", "q3"))
            result = chsh_scan(source, cfg=cfg.noise, duration_s=cfg.duration_s,
                               master_seed=cfg.seed, exact=cfg.exact)
            _write_json(run_dir / "chsh.json", result.to_json_dict())
            rows = []
            for k, counts4 in enumerate(result.counts):
                for c_idx, c in enumerate(counts4):
                    rows.append([k, c_idx, float(c)])
            _write_table_csv(run_dir / "chsh_counts.csv", np.array(rows),
                             ["pair_index", "combo_index", "counts"])
            payload = {"s_value": result.s_value, "s_raw": result.s_raw,
                       "sigma": result.sigma}
            report = Report(experiment="chsh", directory=run_dir, fidelities=payload,
                            artifacts={"result": "chsh.json",
                                       "counts": "chsh_counts.csv"})
        else:
            tau = cfg.hom_coherence_ps
            delays = np.linspace(-3 * tau, 3 * tau, 41)
            scan = hom_scan(delays, cfg.hom_visibility, tau, cfg.noise,
                            duration_s=cfg.duration_s, master_seed=cfg.seed,
                            exact=cfg.exact)
            _write_json(run_dir / "hom.json", scan.to_json_dict())
            plot = np.column_stack([scan.x_values, scan.counts, scan.fit_curve])
            _write_table_csv(run_dir / "hom_scan.csv", plot,
                             ["delay_ps", "counts", "fit"])
            payload = {"visibility": scan.visibility,
                       "visibility_raw": scan.visibility_raw}
            report = Report(experiment="hom", directory=run_dir, fidelities=payload,
                            artifacts={"result": "hom.json", "scan": "hom_scan.csv"})
        return _finish(report, cfg, lock, t0)
    except Exception:
        lock.unlink(missing_ok=True)
        raise


def run_calibrate(cfg: ExperimentConfig, targets: dict | None = None,
                  source_s_value: float | None = PAPER_SOURCE_S) -> Report:
    t0 = time.perf_counter()
    run_dir, lock = _open_run_dir(cfg, "calibrate")
    try:
        result = calibrate(targets, source_s_value=source_s_value,
                           pair_rate_hz=cfg.noise.pair_rate_hz)
        result.config.save(run_dir / "calibrated_noise.json")
        _write_json(run_dir / "calibration_report.json", result.to_json_dict())
        payload = {"rms_residual": result.rms_residual,
                   "achieved": {k: v for k, v in result.achieved.items()
                                if isinstance(v, float)}}
        report = Report(experiment="calibrate", directory=run_dir,
                        fidelities=payload,
                        artifacts={"noise": "calibrated_noise.json",
                                   "report": "calibration_report.json"})
        return _finish(report, cfg, lock, t0)
    except CalibrationError as exc:
        lock.unlink(missing_ok=True)
        raise NumericalError(str(exc)) from exc
    except Exception:
        lock.unlink(missing_ok=True)
        raise


def run_experiment(cfg: ExperimentConfig) -> Report:
    """Dispatch on cfg.experiment; raises ConfigError for unknown tokens."""
    name = cfg.experiment
    if name == "truth-table":
        return run_truth_table(cfg)
    if name == "qst":
        return run_qst(cfg)
    if name == "bell":
        return run_bell(cfg)
    if name == "qpt":
        return run_qpt(cfg)
    if name in ("chsh", "hom"):
        return run_characterization(cfg, name)
    if name == "calibrate":
        return run_calibrate(cfg)
    raise ConfigError(f"unknown experiment {name!r}; valid: {', '.join(EXPERIMENTS)}")
