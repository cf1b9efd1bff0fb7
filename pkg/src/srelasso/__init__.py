"""LASSO estimation and post-regularization inference for systems of
regression equations under temporal and cross-sectional dependence.

Subpackages follow the pipeline: :mod:`data_model` holds the panel
structures, :mod:`lasso` the weighted-l1 solver, :mod:`lrv` the long-run
variance estimators, :mod:`penalty` the multiplier-bootstrap tuning,
:mod:`debias` the de-biased target estimation, :mod:`inference` the bootstrap
confidence machinery, :mod:`dgp` the simulation harness, and :mod:`cli` the
command-line front end.
"""

from .data_model import (
    CoefVector,
    EquationSpec,
    PanelDataset,
    TargetSet,
    euclidean_norm,
    load_panel_csv,
    prediction_norm,
)
from .errors import ConfigurationError, DataError, NumericalError, SreLassoError
from .lasso import LassoFit, LassoProblem, SolverOptions, post_lasso_ols, solve_lasso, solve_lasso_path
from .lrv import BlockScheme, HacOptions, LoadingMatrix, block_sum_lrcov, compute_loadings, newey_west_lvar, omega_jk
from .penalty import (
    BootstrapDraws,
    PenaltyPlan,
    TuneConfig,
    bootstrap_penalty,
    fit_with_plan,
    lambda_gaussian_canonical,
    run_pilot_then_tune,
    scan_block_size,
)
from .debias import (
    DebiasConfig,
    DebiasedEstimate,
    InstrumentFit,
    double_selection_estimate,
    fit_instrument,
    lad_iv_estimate,
    ls_iv_estimate,
    run_algorithm,
)
from .inference import (
    BootCriticalValues,
    ConfidenceReport,
    bootstrap_pivots,
    build_report,
    stepdown_multiple_test,
)
from .dgp import (
    DependentScenario,
    ExperimentConfig,
    IidScenario,
    InferenceScenario,
    gen_dependent,
    gen_iid,
    gen_inference,
    run_experiment,
)

__version__ = "0.1.0"
