"""Digital twin of a three-wafer cryogenic muon-tagging stack.

Monte Carlo of cosmic muons and ambient gamma rays through the wafer
stack, a synthetic DAQ that turns the deposits into triggered waveform
records, and the coincidence analysis that recovers rates, accidentals,
dead time, and tagging efficiency from them.
"""

__version__ = "1.0.0"

from .config import ConfigError, RunConfig, config_hash, load_config, paper_defaults
from .coincidence import (
    AnalysisError,
    CoincidenceWindow,
    DelayHistogram,
    analytic_accidentals,
    assemble_report,
    build_delay_histogram,
    dead_time_fraction,
    extract_muon_rate,
    fit_coincidence_window,
    sideband_accidentals,
    tagging_efficiency,
)
from .daq import run_daq, synthesize_stream
from .geometry import StackGeometry, build_geometry, geometric_tagging_fraction
from .pulses import MatchedFilter, estimate_noise_psd, matched_filter, select_pulses
from .transport import SimulationSummary, run_simulation, simulate_species

__all__ = [
    "AnalysisError",
    "CoincidenceWindow",
    "ConfigError",
    "DelayHistogram",
    "MatchedFilter",
    "RunConfig",
    "SimulationSummary",
    "StackGeometry",
    "analytic_accidentals",
    "assemble_report",
    "build_delay_histogram",
    "build_geometry",
    "config_hash",
    "dead_time_fraction",
    "estimate_noise_psd",
    "extract_muon_rate",
    "fit_coincidence_window",
    "geometric_tagging_fraction",
    "load_config",
    "matched_filter",
    "paper_defaults",
    "run_daq",
    "run_simulation",
    "select_pulses",
    "sideband_accidentals",
    "simulate_species",
    "synthesize_stream",
    "tagging_efficiency",
    "__version__",
]
