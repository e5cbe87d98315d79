"""Density-matrix simulation of heat-bath and algorithmic cooling in 13C-labelled molecules."""

from .analysis import (
    CoolingReport,
    RelaxivityModel,
    apply_relaxivity,
    cooling_report,
    enhancement_factors,
    fit_relaxivity,
    fit_t1,
    ratio_table,
    stick_spectrum,
)
from .config import build_spin_system, load_experiment, load_molecule
from .cooling import (
    ac_ideal_limit,
    parse_schedule,
    run_ac,
    selective_reset,
    shannon_bound_check,
    spin_temperature,
    t1_ratio,
    three_bit_compression,
)
from .core import (
    SpinState,
    SpinSystem,
    nucleus,
    polarizations,
    state_from_polarizations,
    thermal_state,
)
from .dynamics import Delay, Pulse, apply_pulse, evolve_delay, free_hamiltonian
from .seqfile import format_sequence, parse_sequence
from .sequences import (
    SequenceProgram,
    compute_delays,
    hcc_relay,
    hcc_wait,
    inversion_recovery,
    optimize_d7,
    potent,
    refocused_inept,
    run_program,
)

__version__ = "0.1.0"
