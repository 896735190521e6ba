//! Replicated comparison of augmentation methods on the simulation studies.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::largest_remainder;
use crate::baselines::{balancing_counts, Oversampler, DEFAULT_NEIGHBORS, SMOGN_SIGMAS};
use crate::codsa::{context_seed, region_proportions, uniform_weights, CodsaOptions, IndexReport, SplitContext};
use crate::dataset::Dataset;
use crate::dgp::{carve_balanced_eval, gen_classification, gen_regression, ClassifSimConfig, EvalSplit, RegressSimConfig};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, ForestConfig, MlpTrainConfig};
use crate::generator::{pretrain_transfer, AutoencoderConfig, AutoencoderModel, GeneratorConfig, GeneratorModel};
use crate::rng::SeedStream;
use crate::tuner::{
    default_grid, evaluate_codsa_grid, evaluate_crossfit_grid, synthetic_count, GridPoint, GridSpec, PointResult,
    Replicate, ReplicateOutcome, Task, TuneResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Baseline,
    Smote,
    Adasyn,
    Smogn,
    Codsa,
    CodsaTransfer,
    CodsaCrossfit,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Smote => "smote",
            Method::Adasyn => "adasyn",
            Method::Smogn => "smogn",
            Method::Codsa => "codsa",
            Method::CodsaTransfer => "codsa-transfer",
            Method::CodsaCrossfit => "codsa-crossfit",
        }
    }

    pub fn variant(&self) -> &'static str {
        match self {
            Method::Codsa => "non-transfer",
            Method::CodsaTransfer => "transfer",
            Method::CodsaCrossfit => "cross-fit",
            _ => "",
        }
    }
}

/// Simulation sizes and balanced carving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub n1: usize,
    pub n2: usize,
    /// Noise level of the regression study.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub val_per_region: usize,
    pub test_per_region: usize,
}

fn default_sigma() -> f64 {
    0.2
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec { n1: 1400, n2: 3800, sigma: 0.2, val_per_region: 200, test_per_region: 400 }
    }
}

/// Source data for the pretrained autoencoder: `size` rows from the same
/// simulation, split evenly between the regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSpec {
    pub source_size: usize,
    pub source_seed: u64,
}

impl Default for TransferSpec {
    fn default() -> Self {
        TransferSpec { source_size: 10_000, source_seed: 1_000_003 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub data: DataSpec,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub grid: GridSpec,
    /// Thin every grid axis to every other value.
    #[serde(default)]
    pub coarse: bool,
    pub generator: GeneratorConfig,
    pub estimator: EstimatorConfig,
    /// `alpha_1` values for SMOTE/ADASYN; the CoDSA grid's when empty.
    #[serde(default)]
    pub oversample_alpha1: Vec<f64>,
    /// `m/n` values for SMOTE/ADASYN; the CoDSA grid's when empty.
    #[serde(default)]
    pub oversample_m_over_n: Vec<f64>,
    #[serde(default = "default_neighbors")]
    pub k_neighbors: usize,
    #[serde(default = "default_smogn_sigmas")]
    pub smogn_sigmas: Vec<f64>,
    #[serde(default = "default_folds")]
    pub cross_fit_folds: usize,
    #[serde(default)]
    pub transfer: TransferSpec,
    /// Synthetic rows per region for the generator-error estimate (0 skips it).
    #[serde(default)]
    pub tau_samples: usize,
    /// Draw synthetic rows once per generator and share them by prefix.
    #[serde(default = "default_true")]
    pub cache: bool,
    /// Pretrained autoencoder to load instead of pretraining one.
    #[serde(default)]
    pub transfer_checkpoint: Option<PathBuf>,
    /// Source sizes for the pretraining-size ablation (skipped when empty).
    #[serde(default)]
    pub pretrain_sizes: Vec<usize>,
    /// Refit and save the generator behind each selected lambda.
    #[serde(default = "default_true")]
    pub save_generators: bool,
}

fn default_neighbors() -> usize {
    DEFAULT_NEIGHBORS
}

fn default_smogn_sigmas() -> Vec<f64> {
    SMOGN_SIGMAS.to_vec()
}

fn default_folds() -> usize {
    5
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// The full protocol of the classification study.
    pub fn classification() -> Self {
        ExperimentConfig {
            task: Task::Classification,
            data: DataSpec::default(),
            seeds: (0..10).collect(),
            methods: vec![Method::Baseline, Method::Smote, Method::Adasyn, Method::Codsa, Method::CodsaTransfer],
            grid: default_grid(Task::Classification),
            coarse: false,
            generator: GeneratorConfig::classification(),
            estimator: EstimatorConfig::Classifier(MlpTrainConfig::default()),
            oversample_alpha1: Vec::new(),
            oversample_m_over_n: Vec::new(),
            k_neighbors: DEFAULT_NEIGHBORS,
            smogn_sigmas: default_smogn_sigmas(),
            cross_fit_folds: 5,
            transfer: TransferSpec::default(),
            tau_samples: 0,
            cache: true,
            transfer_checkpoint: None,
            pretrain_sizes: Vec::new(),
            save_generators: true,
        }
    }

    /// The full protocol of the regression study.
    pub fn regression() -> Self {
        ExperimentConfig {
            task: Task::Regression,
            methods: vec![Method::Baseline, Method::Smogn, Method::Codsa, Method::CodsaTransfer],
            grid: default_grid(Task::Regression),
            generator: GeneratorConfig::regression(),
            estimator: EstimatorConfig::Forest(ForestConfig::default()),
            ..Self::classification()
        }
    }

    pub fn effective_grid(&self) -> GridSpec {
        if self.coarse {
            self.grid.coarse()
        } else {
            self.grid.clone()
        }
    }

    pub fn codsa_options(&self) -> CodsaOptions {
        CodsaOptions {
            generator: self.generator.clone(),
            estimator: self.estimator.clone(),
            q: None,
            tau_samples: self.tau_samples,
        }
    }

    /// Checks everything that can be checked without training.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("`seeds` is empty"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("`methods` is empty"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(m) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::config(format!("seed {m} is listed twice")));
        }
        self.effective_grid().validate(2)?;
        let classifier = matches!(self.estimator, EstimatorConfig::Classifier(_));
        if classifier != (self.task == Task::Classification) {
            return Err(Error::config(format!(
                "estimator `{}` does not fit the {:?} task",
                self.estimator.metric_name(),
                self.task
            )));
        }
        if self.data.n1 < self.data.val_per_region + self.data.test_per_region + 1
            || self.data.n2 < self.data.val_per_region + self.data.test_per_region + 1
        {
            return Err(Error::config("each region needs more rows than validation and test take"));
        }
        if self.task == Task::Classification && self.methods.contains(&Method::Smogn) {
            return Err(Error::config("SMOGN applies to the regression study only"));
        }
        if self.methods.contains(&Method::CodsaCrossfit) && self.cross_fit_folds < 2 {
            return Err(Error::config("cross_fit_folds must be at least 2"));
        }
        if self.smogn_sigmas.is_empty() || self.smogn_sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("smogn_sigmas must be non-empty and non-negative"));
        }
        if self.methods.contains(&Method::CodsaTransfer) && self.transfer.source_size < 2 {
            return Err(Error::config("transfer.source_size must be at least 2"));
        }
        Ok(())
    }
}

/// Simulated data for replicate `seed`: the study's DGP under `seed`, then
/// balanced carving with stream `SeedStream::new(seed).child("carve")`.
pub fn make_replicate(task: Task, data: &DataSpec, seed: u64) -> Result<Replicate> {
    let full = simulate(task, data.n1, data.n2, data.sigma, seed)?;
    let split = carve_balanced_eval(&full, data.val_per_region, data.test_per_region, SeedStream::new(seed).child("carve"))?;
    Ok(Replicate { seed, split })
}

pub fn simulate(task: Task, n1: usize, n2: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    match task {
        Task::Classification => gen_classification(&ClassifSimConfig { n1, n2, seed }),
        Task::Regression => gen_regression(&RegressSimConfig { n1, n2, sigma, seed }),
    }
}

/// Pretrains the transfer autoencoder on `spec.source_size` balanced rows.
pub fn pretrain_source(task: Task, sigma: f64, spec: &TransferSpec, cfg: &AutoencoderConfig) -> Result<AutoencoderModel> {
    let half = spec.source_size / 2;
    let source = simulate(task, half, spec.source_size - half, sigma, spec.source_seed)?;
    pretrain_transfer(&source, cfg, SeedStream::new(spec.source_seed).child("pretrain"))
}

fn point_result(
    point: GridPoint,
    est: &crate::estimators::FittedEstimator,
    split: &EvalSplit,
    p: &[f64],
) -> Result<PointResult> {
    let n = split.train.len();
    let k = split.train.n_regions();
    Ok(PointResult {
        validation: est.evaluate(&split.validation)?,
        test: est.evaluate(&split.test)?,
        report: IndexReport::new(&point.alpha, point.m, p, n, 0.0, &uniform_weights(k), vec![None; k])?,
        point,
    })
}

fn oversampled_grid(cfg: &ExperimentConfig, split: &EvalSplit, sampler: Oversampler, seed: SeedStream) -> Result<Vec<PointResult>> {
    let grid = cfg.effective_grid();
    let alphas: Vec<f64> = if cfg.oversample_alpha1.is_empty() { grid.alpha1_values.clone() } else { cfg.oversample_alpha1.clone() };
    let ratios: Vec<f64> =
        if cfg.oversample_m_over_n.is_empty() { grid.m_over_n_values.clone() } else { cfg.oversample_m_over_n.clone() };
    let train = &split.train;
    let n = train.len();
    let p = region_proportions(train);
    let points: Vec<GridPoint> = alphas
        .iter()
        .flat_map(|&a| {
            ratios.iter().map(move |&mn| GridPoint {
                alpha: vec![a, 1.0 - a],
                m_over_n: mn,
                m: synthetic_count(mn, n),
                r: 0.0,
                sigma: None,
            })
        })
        .collect();
    points
        .into_par_iter()
        .map(|pt| {
            let counts = largest_remainder(&pt.alpha, pt.m);
            let synth = sampler.oversample(train, &counts, seed.child(sampler.name()))?;
            let aug = train.concat(&synth)?;
            let est = cfg.estimator.fit(&aug, &split.validation, seed)?;
            point_result(pt, &est, split, &p)
        })
        .collect()
}

fn smogn_grid(cfg: &ExperimentConfig, split: &EvalSplit, seed: SeedStream) -> Result<Vec<PointResult>> {
    let train = &split.train;
    let n = train.len();
    let p = region_proportions(train);
    let counts = balancing_counts(train);
    let m: usize = counts.iter().sum();
    let alpha: Vec<f64> = if m == 0 { p.clone() } else { counts.iter().map(|&c| c as f64 / m as f64).collect() };
    cfg.smogn_sigmas
        .par_iter()
        .map(|&sigma| {
            let synth = Oversampler::Smogn { sigma }.oversample(train, &counts, seed.child("smogn"))?;
            let aug = train.concat(&synth)?;
            let est = cfg.estimator.fit(&aug, &split.validation, seed)?;
            let pt = GridPoint { alpha: alpha.clone(), m_over_n: m as f64 / n as f64, m, r: 0.0, sigma: Some(sigma) };
            point_result(pt, &est, split, &p)
        })
        .collect()
}

/// Every candidate of `method` on one replicate, evaluated on validation and
/// test. All methods share stream `SeedStream::new(seed).child("tuner")`, so
/// their estimators start from the same initialization.
pub fn evaluate_method(
    cfg: &ExperimentConfig,
    method: Method,
    rep: &Replicate,
    transfer: Option<&AutoencoderModel>,
) -> Result<Vec<PointResult>> {
    let seed = SeedStream::new(rep.seed).child("tuner");
    let split = &rep.split;
    let opts = cfg.codsa_options();
    match method {
        Method::Baseline => {
            let est = crate::codsa::fit_baseline(&split.train, &split.validation, &cfg.estimator, seed)?;
            let p = region_proportions(&split.train);
            let pt = GridPoint { alpha: p.clone(), m_over_n: 0.0, m: 0, r: 0.0, sigma: None };
            Ok(vec![point_result(pt, &est, split, &p)?])
        }
        Method::Smote => oversampled_grid(cfg, split, Oversampler::Smote { k_neighbors: cfg.k_neighbors }, seed),
        Method::Adasyn => oversampled_grid(cfg, split, Oversampler::Adasyn { k_neighbors: cfg.k_neighbors }, seed),
        Method::Smogn => smogn_grid(cfg, split, seed),
        Method::Codsa => evaluate_codsa_grid(split, &cfg.effective_grid(), &opts, None, seed, cfg.cache),
        Method::CodsaTransfer => {
            let ae = transfer.ok_or_else(|| Error::State("transfer CoDSA needs a pretrained autoencoder".into()))?;
            evaluate_codsa_grid(split, &cfg.effective_grid(), &opts, Some(ae), seed, cfg.cache)
        }
        Method::CodsaCrossfit => {
            evaluate_crossfit_grid(split, &cfg.effective_grid(), cfg.cross_fit_folds, &opts, None, seed, cfg.cache)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub result: TuneResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub metric: String,
    pub methods: Vec<MethodOutcome>,
}

impl ExperimentOutcome {
    pub fn get(&self, method: Method) -> Option<&TuneResult> {
        self.methods.iter().find(|m| m.method == method).map(|m| &m.result)
    }
}

/// The autoencoder for transfer CoDSA: loaded from `transfer_checkpoint`
/// when set, otherwise pretrained on source data. `None` when no configured
/// method needs one.
pub fn resolve_transfer(cfg: &ExperimentConfig) -> Result<Option<AutoencoderModel>> {
    if !cfg.methods.contains(&Method::CodsaTransfer) {
        return Ok(None);
    }
    match &cfg.transfer_checkpoint {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
            let mut ae: AutoencoderModel = serde_json::from_str(&text)?;
            ae.pretrained = true;
            Ok(Some(ae))
        }
        None => Ok(Some(pretrain_source(cfg.task, cfg.data.sigma, &cfg.transfer, &cfg.generator.autoencoder)?)),
    }
}

pub fn make_replicates(cfg: &ExperimentConfig) -> Result<Vec<Replicate>> {
    cfg.seeds.par_iter().map(|&s| make_replicate(cfg.task, &cfg.data, s)).collect()
}

/// Runs every configured method on every replicate.
pub fn run_methods(
    cfg: &ExperimentConfig,
    replicates: &[Replicate],
    transfer: Option<&AutoencoderModel>,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let methods = cfg
        .methods
        .iter()
        .map(|&method| {
            let outcomes = replicates
                .par_iter()
                .map(|rep| {
                    let results = evaluate_method(cfg, method, rep, transfer)?;
                    log::info!("{} seed {}: {} candidates", method.name(), rep.seed, results.len());
                    ReplicateOutcome::new(rep.seed, results, 0.5)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MethodOutcome { method, result: TuneResult::from_replicates(outcomes)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutcome { metric: cfg.estimator.metric_name().to_string(), methods })
}

/// Simulates the replicates, resolves the transfer autoencoder and runs
/// every method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let transfer = resolve_transfer(cfg)?;
    run_methods(cfg, &make_replicates(cfg)?, transfer.as_ref())
}

/// The generator behind a selected CoDSA point, refitted from its seed
/// stream (identical to the one used during tuning). `None` for methods
/// without a single generator or points without synthetic rows.
pub fn selected_generator(
    cfg: &ExperimentConfig,
    method: Method,
    rep: &Replicate,
    point: &GridPoint,
    transfer: Option<&AutoencoderModel>,
) -> Result<Option<GeneratorModel>> {
    let transfer = match method {
        Method::Codsa => None,
        Method::CodsaTransfer => transfer,
        _ => return Ok(None),
    };
    if point.m == 0 {
        return Ok(None);
    }
    let seed = SeedStream::new(rep.seed).child("tuner");
    let counts = largest_remainder(&point.alpha, point.m);
    let ctx = SplitContext::prepare(&rep.split.train, point.r, &counts, &cfg.generator, transfer, context_seed(seed, point.r), false)?;
    Ok(ctx.generator)
}

/// Transfer CoDSA at each pretraining source size.
pub fn pretraining_ablation(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<(usize, TuneResult)>> {
    let mut cfg = cfg.clone();
    cfg.methods = vec![Method::CodsaTransfer];
    cfg.transfer_checkpoint = None;
    let replicates = make_replicates(&cfg)?;
    sizes
        .iter()
        .map(|&size| {
            cfg.transfer.source_size = size;
            let ae = pretrain_source(cfg.task, cfg.data.sigma, &cfg.transfer, &cfg.generator.autoencoder)?;
            let out = run_methods(&cfg, &replicates, Some(&ae))?;
            Ok((size, out.methods.into_iter().next().expect("one method").result))
        })
        .collect()
}

/// Table rows `(method, variant, region|overall, metric, mean, se, seeds)`.
pub fn write_results<W: std::io::Write>(out: W, outcome: &ExperimentOutcome) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "variant", "region", "metric", "mean", "se", "seeds"])?;
    for m in &outcome.methods {
        let t = &m.result.test;
        let mut rows: Vec<(String, Option<crate::tuner::Summary>)> =
            t.per_region.iter().enumerate().map(|(i, s)| ((i + 1).to_string(), *s)).collect();
        rows.push(("overall".to_string(), t.overall));
        for (region, s) in rows {
            let (mean, se) = s.map_or((String::new(), String::new()), |s| (s.mean.to_string(), s.se.to_string()));
            w.write_record([
                m.method.name(),
                m.method.variant(),
                &region,
                &outcome.metric,
                &mean,
                &se,
                &t.seeds.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pretraining-size ablation rows `(source_size, region|overall, metric, mean, se, seeds)`.
pub fn write_ablation<W: std::io::Write>(out: W, metric: &str, rows: &[(usize, TuneResult)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source_size", "region", "metric", "mean", "se", "seeds"])?;
    for (size, res) in rows {
        let t = &res.test;
        let mut cells: Vec<(String, Option<crate::tuner::Summary>)> =
            t.per_region.iter().enumerate().map(|(i, s)| ((i + 1).to_string(), *s)).collect();
        cells.push(("overall".to_string(), t.overall));
        for (region, s) in cells {
            let (mean, se) = s.map_or((String::new(), String::new()), |s| (s.mean.to_string(), s.se.to_string()));
            w.write_record([&size.to_string(), &region, metric, &mean, &se, &t.seeds.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
