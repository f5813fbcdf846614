"""teleportlab: a numerical laboratory for a teleported two-qubit CNOT gate.

The package simulates the full protocol (shared pair, local gates,
measurement, classical bits, Pauli corrections) together with the
characterization pipeline used to grade it: truth tables, state and
process tomography with maximum-likelihood reconstruction, CHSH fringe
scans, and Hong-Ou-Mandel dips, all under a calibrated parametric noise
model and Poisson coincidence statistics.
"""

__version__ = "0.1.0"

from .qcore import (
    BasisKet, DensityMatrix, Gate, PureState,
    apply, apply_kraus, bell_state, cnot, hadamard, hwp, matrix_sqrt_psd,
    partial_trace, qwp, states_equal, tensor, x_gate, y_gate, z_gate,
)
from .noise import (
    CalibrationError, CalibrationResult, Channel, NoiseConfig,
    calibrate, dephase_pair, depolarizing_channel, leaky_cnot, werner,
)
from .protocol import (
    ClassicalMessage, EprResource, InputStatePrep, MeasurementOutcome,
    ProtocolRun, build_joint_state, classical_cost, correction_for,
    local_truth_table, run_protocol, state_teleportation_baseline_cost,
    teleported_superop, write_transcript,
)
from .counting import (
    ChshResult, CountRecord, MeasurementSetting, ScanResult,
    chsh_scan, expected_counts, hom_scan, load_counts, persist_counts,
    sample_counts,
)
from .tomography import (
    ChiMatrix, FidelityReport, average_gate_fidelity, chi_cnot,
    ideal_cnot_truth_table, process_fidelity, qpt_reconstruct,
    qst_reconstruct, state_fidelity, to_ptm, truth_table_fidelity,
)
from .experiments import (
    ConfigError, ExperimentConfig, NumericalError, Report,
    exact_headline_fidelities, load_fixture_noise, run_experiment,
)
