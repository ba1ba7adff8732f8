"""Production-function estimation with productivity spillovers between peer firms."""

from .panel import (PanelData, PanelValidationError, PriceSeries, lag_align, load_panel,
                    load_prices, log_share, write_panel, write_prices)
from .peers import PeerGrouping, PeerWeights, build_weights
from .dgp import DgpConfig, simulate_panel, simulate_survey_panel
from .estimation.sieve import SieveSpec
from .estimation.pipeline import EstimateOptions, EstimationResult, ProductionFit, estimate
from .alternatives import (alt1_regression, alt2_regression, alt_variant,
                           proxy_exogenous_markov)
from .inference import (bca_interval, bca_intervals, jackknife_acceleration,
                        jackknife_estimates, wild_block_bootstrap)
from .montecarlo import ExperimentSpec, run_experiment
from .io import load_fit, save_fit

__version__ = "0.1.0"
