"""Mode-pairing QKD simulator and post-processing toolkit."""

__version__ = "0.1.0"

from .core import (ChannelModel, ConfigError, CountTable, Intensity,
                   ProtocolConfig, TimingConfig, binary_entropy, poisson_pmf,
                   validate_config)
from .bounds import ExpectationBounds, chernoff_bounds
from .decoylp import (DecoyEstimates, PosteriorMatrix, estimate,
                      lower_bound_M11, max_E11_X, phase_error_bound,
                      posterior_matrix, single_photon_basis_ratio, solve_lp)
from .keyrate import KeyRateReport, build_report, key_length, key_rates
from .pairing import (PairBasis, PairRecord, SideLabel, map_x_key, map_z_key,
                      pair_basis, pair_clicks, side_label, tally,
                      x_error_decision)
from .sim import (ReferenceClicks, RoundBlock, RoundRecord,
                  click_probabilities, simulate_reference_blocks,
                  simulate_rounds)
from .freqest import (ClickGroup, OmegaTrajectory, accumulated_phase,
                      estimate_group_omega, fit_trajectory, group_clicks,
                      prediction_error_rate)

__all__ = [
    "ChannelModel", "ClickGroup", "ConfigError", "CountTable",
    "DecoyEstimates", "ExpectationBounds", "Intensity", "KeyRateReport",
    "OmegaTrajectory", "PairBasis", "PairRecord", "PosteriorMatrix",
    "ProtocolConfig", "ReferenceClicks", "RoundBlock", "RoundRecord",
    "SideLabel", "TimingConfig", "accumulated_phase", "binary_entropy",
    "build_report", "chernoff_bounds", "click_probabilities", "estimate",
    "estimate_group_omega", "fit_trajectory", "group_clicks", "key_length",
    "key_rates", "lower_bound_M11", "map_x_key", "map_z_key", "max_E11_X",
    "pair_basis", "pair_clicks", "phase_error_bound", "poisson_pmf",
    "posterior_matrix", "prediction_error_rate", "side_label",
    "simulate_reference_blocks", "simulate_rounds",
    "single_photon_basis_ratio", "solve_lp", "tally", "validate_config",
    "x_error_decision",
]
