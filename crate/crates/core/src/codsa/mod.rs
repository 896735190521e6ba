//! CoDSA: conditional synthesis, allocation of synthetic rows across regions,
//! and the indices that describe an augmented sample.

pub mod crossfit;
pub mod indices;
pub mod pipeline;
pub mod wasserstein;

pub use crossfit::{cross_fit_codsa, implied_ratio, stratified_folds, CrossFitModel, FoldContexts};
pub use indices::{
    allocate_optimal, domain_index, effective_proportions, generation_index, min_feasible_m, reserved_count, IndexReport,
};
pub use pipeline::{
    context_seed, estimate_tau, fit_baseline, region_proportions, run_codsa, uniform_weights, CodsaOptions, CodsaRun, LambdaConfig,
    SplitContext,
};
pub use wasserstein::{sliced_w1, w1_1d, N_PROJECTIONS};
