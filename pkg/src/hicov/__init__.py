"""High-dimensional realized-covariance inference.

Simulation of a one-factor stochastic-volatility market, realized covariance
with a lazy asymptotic-covariance oracle, an MA(1) wild multiplier bootstrap,
stepdown multiple testing with Holm and bootstrap critical values, Monte
Carlo tables, and a real-data analysis pipeline.
"""

from .simulate import (
    DEFAULT_HESTON,
    HestonParams,
    PathGrid,
    ResidualStructure,
    SimScenario,
    TrueQuantities,
    draw_residual_structure,
    make_scenario,
    sample_stationary_variance,
    simulate_paths,
    true_quantities,
)
from .estimators import (
    AsyCovOracle,
    IncrementMatrix,
    PairStat,
    TestStatistics,
    compute_entry_stats,
    compute_factor_stats,
    pair_stats,
    realized_cov,
    that,
    vhat,
    vhat_raw,
)
from .bootstrap import (
    BootstrapDraws,
    bootstrap_group_maxima,
    bootstrap_rc,
    gen_multipliers,
    multiplier_matrix,
    tstar,
)
from .multitest import (
    HolmProvider,
    HypothesisPartition,
    MonotonicityError,
    RomanoWolfProvider,
    StepdownResult,
    group_statistics,
    holm_critical,
    normal_quantile,
    pairwise_partition,
    rw_critical,
    sector_partition,
    stepdown,
)
from .harness import ExperimentSpec, ExperimentTable, run_experiment, run_replication
from .dataio import AnalysisReport, PricePanel, analyze, load_price_csv, write_report

__version__ = "0.1.0"
