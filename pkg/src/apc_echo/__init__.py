"""Three-level Lambda-ensemble photon echo simulator with atom-phase-controlled
double rephasing (data pulse D, rephasing pulses R1/R2, control pulses C1/C2)."""

__version__ = "0.1.0"

from .bloch_core import (
    AtomParams,
    Channel,
    Pulse,
    Trajectory,
    bloch_vector,
    build_hamiltonian,
    evolve,
    ground_state,
    hard_pulse_rotation,
    master_rhs,
)
from .config import SimJob, job_hash, load_config, parse_config, serialize_job
from .ensemble import (
    DetuningGrid,
    EchoEvent,
    EnsembleResult,
    IntegratorConfig,
    build_grid,
    default_windows,
    detect_echoes,
    run_ensemble,
    scan_rephase_delay,
)
from .errors import (
    ConfigError,
    EchoHaltWarning,
    EchoSimError,
    InputError,
    NonIdealRephasingWarning,
    PhysicalityWarning,
    SequenceError,
)
from .output import ResultBundle, emit_results
from .protocol import (
    PulseSequence,
    make_apc_sequence,
    make_two_pulse_sequence,
    phase_match_e1,
    phase_match_e2,
    predict_e1_time,
    predict_e2_time,
    predict_timing,
    validate_sequence,
)
