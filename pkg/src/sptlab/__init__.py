"""Simulation, backtesting and strategy learning for weight-driven equity
portfolios: diversity-weighted and functionally generated rules, wealth
decomposition checks, exponent and investment-map posteriors, and a rolling
train/test experiment harness."""

__version__ = "0.1.0"

from .backtest import (BacktestConfig, ReturnsPanel, WealthSeries, annualize_return,
                       excess_return, run_backtest, sharpe_ratio)
from .errors import (DataError, DomainError, EvaluationError, InitializationError,
                     InvalidArgumentError, LookAheadError, MembershipError,
                     NoFeasiblePointError, NotLongOnlyError, NumericError,
                     ResourceError, SptlabError, UndefinedSharpeError, exit_code_for)
from .market import (MarketParams, MarketPath, RelativeCovariance,
                     arbitrage_horizon_bound, check_diversity, check_nondegeneracy,
                     coarsen_path, market_weights, relative_covariance, simulate_market)
from .master_equation import (FiniteVariationPath, MasterDecomposition,
                              decomposition_csv, drift_process, verify_extended_master,
                              verify_master)
from .portfolios import (ConstantGenerating, EntropyGenerating,
                         ExtendedGeneratingFunction, GeneratingFunction,
                         PowerMeanGenerating, dwp_weights, ewp_weights,
                         extended_fgp_weights, fgp_weights, fgp_weights_rows,
                         map_portfolio, parse_generator)
from .inference import (ExponentChain, GammaLikelihood, GridSearchResult,
                        gamma_log_density, grid_search_dwp, mh_sample_dwp,
                        random_walk_mh)
from .gp import (CharGrid, GPArtifact, GPPosterior, KronFactors, RQHypers,
                 artifact_from_json, artifact_to_json, blocked_gibbs, ess_step,
                 kron_factorize, kron_matvec, map_csv, map_lookup, rq_kernel)
from .panel_io import PanelBundle, characteristics_csv, ingest_panel, parse_returns_csv
from .synthetic import (bundle_from_path, gbm_bundle, planted_premium_bundle,
                        quarterly_known_frame)
from .strategies import StrategySpec, build_targets, dwp_targets, ewp_targets, \
    market_targets, parse_strategy
from .experiment import ExperimentPlan, ExperimentResult, build_folds, run_experiment
from .reports import fold_table_csv, histogram_csv, summary_csv

__all__ = [name for name in dir() if not name.startswith("_")]
