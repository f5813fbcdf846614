import json

import numpy as np
import pytest

from teleportlab.qcore import DensityMatrix, bell_state
from teleportlab.noise import (
    CalibrationError, Channel, NoiseConfig, PAPER_SOURCE_S, PAPER_TARGETS,
    calibrate, dephase_pair, depolarizing_channel, leaky_cnot, werner,
)
from teleportlab.counting import chsh_scan
from teleportlab.tomography import state_fidelity, truth_table_fidelity, ideal_cnot_truth_table
from teleportlab.protocol import local_truth_table, teleported_superop

RNG = np.random.default_rng(31)


# ---------------------------------------------------------------------------
# NoiseConfig


def test_default_config_is_ideal():
    cfg = NoiseConfig()
    assert cfg.is_ideal
    assert cfg.werner_p == 1.0 and cfg.accidental_ratio == 0.0


@pytest.mark.parametrize("field,value", [
    ("werner_p", -0.1), ("werner_p", 1.1),
    ("extinction_eps", -0.01), ("extinction_eps", 0.6),
    ("visibility_v", 1.2), ("visibility_v", -0.2),
    ("accidental_ratio", -1.0),
    ("pair_rate_hz", 0.0),
])
def test_config_range_validation(field, value):
    with pytest.raises(ValueError):
        NoiseConfig(**{field: value})


def test_config_json_round_trip(tmp_path):
    cfg = NoiseConfig(werner_p=0.95, extinction_eps=0.021, visibility_v=0.86,
                      accidental_ratio=0.057, pair_rate_hz=200.0)
    path = tmp_path / "noise.json"
    cfg.save(path)
    data = json.loads(path.read_text())
    assert set(data) == {"werner_p", "extinction_eps", "visibility_v",
                         "accidental_ratio", "pair_rate_hz"}
    assert NoiseConfig.load(path) == cfg


# ---------------------------------------------------------------------------
# werner


def test_werner_endpoints():
    phi = bell_state("phi+", "standard", ("q2", "q3"))
    ideal = werner(1.0)
    assert np.allclose(ideal.matrix, np.outer(phi.amplitudes, phi.amplitudes.conj()),
                       atol=1e-12)
    mixed = werner(0.0)
    assert np.allclose(mixed.matrix, np.eye(4) / 4, atol=1e-12)


def test_werner_range_rejected():
    with pytest.raises(ValueError):
        werner(1.5)


@pytest.mark.parametrize("p", [0.0, 0.5, 0.9])
def test_werner_bell_fidelity_closed_form(p):
    # F_s(werner(p), |Φ⟩) = (1 + 3p)/4, checked through the fidelity machinery
    phi = bell_state("phi+", "standard", ("q2", "q3")).to_density()
    fid = state_fidelity(werner(p), phi)
    assert abs(fid.value - (1 + 3 * p) / 4) < 1e-9


def test_werner_fidelity_at_0p8():
    phi = bell_state("phi+", "standard", ("q2", "q3")).to_density()
    assert abs(state_fidelity(werner(0.8), phi).value - 0.85) < 1e-9


# ---------------------------------------------------------------------------
# leaky cnot


def test_leaky_cnot_zero_eps_is_unitary_cnot():
    ch = leaky_cnot(0.0)
    assert len(ch.kraus) == 1
    expect = np.zeros((4, 4))
    for r, c in ((0, 0), (1, 1), (2, 3), (3, 2)):
        expect[r, c] = 1.0
    assert np.allclose(ch.kraus[0], expect, atol=1e-12)


def test_leaky_cnot_direct_kraus_evaluation():
    ch = leaky_cnot(0.01)
    rho = np.zeros((4, 4), dtype=complex)
    rho[2, 2] = 1.0                       # |10⟩
    out = ch.apply_matrix(rho)
    assert abs(out[3, 3].real - 0.99) < 1e-12   # |11⟩
    assert abs(out[2, 2].real - 0.01) < 1e-12   # |10⟩
    assert abs(np.trace(out) - 1) < 1e-12


def test_leaky_cnot_range():
    with pytest.raises(ValueError):
        leaky_cnot(0.7)
    with pytest.raises(ValueError):
        leaky_cnot(-0.01)


def test_truth_table_fidelity_monotone_in_eps():
    ideal = ideal_cnot_truth_table()
    last = None
    for eps in np.arange(0.0, 0.0501, 0.005):
        table = local_truth_table("C12", NoiseConfig(extinction_eps=eps))
        fid = truth_table_fidelity(table, ideal).value
        if last is not None:
            assert fid < last + 1e-12
        last = fid


# ---------------------------------------------------------------------------
# dephasing


def test_dephase_identity_at_v1():
    ch = dephase_pair(1.0)
    rho = werner(0.8).matrix
    assert np.allclose(ch.apply_matrix(rho), rho, atol=1e-12)


def test_dephase_kills_coherence_at_v0():
    phi = bell_state("phi+", "standard", ("q2", "q3")).to_density()
    out = dephase_pair(0.0).apply_matrix(phi.matrix)
    expect = np.zeros((4, 4))
    expect[0, 0] = expect[3, 3] = 0.5
    assert np.allclose(out, expect, atol=1e-12)


@pytest.mark.parametrize("v", [1.0, 0.95, 0.8])
def test_dephased_chsh_matches_2sqrt2_v(v):
    # CHSH evaluation oracle: S = 2√2·v for the dephased pair
    phi = bell_state("phi+", "standard", ("q2", "q3")).to_density()
    rho = DensityMatrix(dephase_pair(v).apply_matrix(phi.matrix), ("q2", "q3"))
    result = chsh_scan(rho, exact=True)
    assert abs(result.s_value - 2 * np.sqrt(2) * v) < 1e-9


def test_dephase_range():
    with pytest.raises(ValueError):
        dephase_pair(1.01)


# ---------------------------------------------------------------------------
# channel laws


def almost_cptp(ch: Channel):
    dim = ch.dim
    acc = sum(k.conj().T @ k for k in ch.kraus)
    assert np.allclose(acc, np.eye(dim), atol=1e-10)
    assert ch.is_completely_positive(tol=1e-9)


def test_channels_are_cptp():
    almost_cptp(leaky_cnot(0.02))
    almost_cptp(dephase_pair(0.9))
    almost_cptp(depolarizing_channel(0.3, ("a", "b")))


def test_kraus_completeness_enforced():
    with pytest.raises(ValueError, match="trace preserving"):
        Channel((np.eye(2) * 0.5,), ("q",))


def test_depolarizing_full_strength():
    ch = depolarizing_channel(1.0, ("a", "b"))
    rho = RNG.normal(size=(4, 4))
    rho = rho @ rho.T
    rho = rho / np.trace(rho)
    assert np.allclose(ch.apply_matrix(rho.astype(complex)), np.eye(4) / 4, atol=1e-10)


def test_ideal_stages_change_nothing():
    # permuting in a no-op stage never changes the pipeline
    base = teleported_superop(NoiseConfig(werner_p=0.92))
    with_ideal_eps = teleported_superop(NoiseConfig(werner_p=0.92, extinction_eps=0.0,
                                                    visibility_v=1.0))
    assert np.allclose(base, with_ideal_eps, atol=0)


def test_ideal_knobs_reproduce_noiseless_bitwise():
    assert (teleported_superop(NoiseConfig.ideal())
            == teleported_superop(None)).all()


# ---------------------------------------------------------------------------
# calibration


def test_calibrate_perfect_targets_resolve_to_ideal():
    result = calibrate({k: 1.0 for k in PAPER_TARGETS})
    assert result.config.is_ideal
    assert result.rms_residual < 1e-12


def test_calibrate_infeasible_targets_error():
    bad = {"truth_table": 0.20, "state_mean14": 0.20, "bell_mean": 0.20,
           "process": 0.20, "local_gate": 0.20}
    with pytest.raises(CalibrationError) as err:
        calibrate(bad)
    assert err.value.result.rms_residual > 0.02


def test_calibrate_rejects_out_of_range_targets():
    with pytest.raises(ValueError, match="outside"):
        calibrate({"truth_table": 1.3})


def test_calibrate_paper_targets_reach_threshold():
    # full calibration is exercised in the acceptance suite through the
    # committed fixture; here a reduced deterministic grid shows the
    # mechanism lands within the residual budget
    grid = {
        "werner_p": (0.90, 1.00, 3),
        "visibility_v": (0.80, 0.95, 7),
        "accidental_ratio": (0.00, 0.12, 7),
    }
    result = calibrate(grid=grid, source_s_value=PAPER_SOURCE_S)
    assert result.rms_residual < 0.02
    assert result.config.extinction_eps == pytest.approx(0.021)
    assert result.config.werner_p == pytest.approx(PAPER_SOURCE_S / (2 * np.sqrt(2)))
    assert set(result.residuals) == set(PAPER_TARGETS)


def test_calibrate_is_deterministic():
    grid = {
        "werner_p": (0.90, 1.00, 2),
        "visibility_v": (0.82, 0.92, 4),
        "accidental_ratio": (0.02, 0.10, 4),
    }
    a = calibrate(grid=grid, source_s_value=PAPER_SOURCE_S)
    b = calibrate(grid=grid, source_s_value=PAPER_SOURCE_S)
    assert a.config == b.config
    assert a.rms_residual == b.rms_residual
