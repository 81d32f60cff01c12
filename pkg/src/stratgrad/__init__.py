"""Stratified mean/gradient estimation with per-stratum memory.

Library layout:

* :mod:`stratgrad.population` - stratified scalar populations and the
  synthetic drift families;
* :mod:`stratgrad.estimators` - the four estimators, mixing coefficients,
  and variance predictions/bounds;
* :mod:`stratgrad.mlp` - a plain-numpy feedforward classifier with exact
  hand-derived gradients;
* :mod:`stratgrad.trainer` - the memory-type stratified trainer and the
  baseline trainers;
* :mod:`stratgrad.dataio` - IDX ingestion and CSV/SVG/manifest emission;
* :mod:`stratgrad.cli` - the ``stratgrad`` experiment subcommands.
"""

__version__ = "0.1.0"

from .estimators import (
    Coefficients,
    Degenerate,
    EstimateTrace,
    MemoryState,
    batch_estimate,
    gmst_init,
    gmst_step,
    gst_estimate,
    optimal_coefficients,
    predicted_variance_vsp,
    sgd_estimate,
    stratified_variance,
    trace_estimators,
    unbiased_condition_holds,
    variance_bound,
)
from .population import (
    PopulationRound,
    StratifiedPopulation,
    Stratum,
    StratumStats,
    Trend,
    draw_stratified,
    gen_normal_rounds,
    gen_uniform_rounds,
    generate_family,
    population_mean,
    stratum_stats,
)

__all__ = [
    "__version__",
    "Coefficients", "Degenerate", "EstimateTrace", "MemoryState",
    "batch_estimate", "gmst_init", "gmst_step", "gst_estimate",
    "optimal_coefficients", "predicted_variance_vsp", "sgd_estimate",
    "stratified_variance", "trace_estimators", "unbiased_condition_holds",
    "variance_bound",
    "PopulationRound", "StratifiedPopulation", "Stratum", "StratumStats",
    "Trend", "draw_stratified", "gen_normal_rounds", "gen_uniform_rounds",
    "generate_family", "population_mean", "stratum_stats",
]
