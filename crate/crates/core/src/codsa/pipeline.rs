use serde::{Deserialize, Serialize};

use super::indices::{reserved_count, IndexReport};
use super::wasserstein::{sliced_w1, N_PROJECTIONS};
use crate::allocation::{check_simplex, largest_remainder};
use crate::dataset::{mix, stratified_split, AugmentedDataset, Dataset, Provenance};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, FittedEstimator};
use crate::generator::{synthesize, synthesize_counts, AutoencoderModel, GeneratorConfig, GeneratorModel};
use crate::metrics::RegionMetric;
use crate::rng::SeedStream;

/// `lambda = (alpha, m, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaConfig {
    pub alpha: Vec<f64>,
    pub m: usize,
    pub r: f64,
}

impl LambdaConfig {
    /// The no-augmentation point `(p, 0, 0)`.
    pub fn baseline(p: Vec<f64>) -> Self {
        LambdaConfig { alpha: p, m: 0, r: 0.0 }
    }

    pub fn validate(&self, n_regions: usize) -> Result<()> {
        check_simplex(&self.alpha, n_regions)?;
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::config(format!("split ratio {} outside [0, 1]", self.r)));
        }
        Ok(())
    }

    /// Per-region synthetic counts (largest remainder).
    pub fn counts(&self) -> Vec<usize> {
        largest_remainder(&self.alpha, self.m)
    }
}

/// Region proportions of a dataset.
pub fn region_proportions(data: &Dataset) -> Vec<f64> {
    let n = data.len().max(1) as f64;
    data.region_counts().iter().map(|&c| c as f64 / n).collect()
}

/// Stream for the split and generator at ratio `r`; every lambda with the
/// same `r` and root seed shares it.
pub fn context_seed(seed: SeedStream, r: f64) -> SeedStream {
    seed.child("split-ratio").index((r * 1e6).round() as u64)
}

/// Equal weight on every region.
pub fn uniform_weights(n_regions: usize) -> Vec<f64> {
    vec![1.0 / n_regions as f64; n_regions]
}

/// The stratified split at one `r`, the generator trained on `Z_g` (when any
/// synthetic rows are needed) and, optionally, per-region synthetic pools
/// whose prefixes serve every smaller request.
#[derive(Debug, Clone)]
pub struct SplitContext {
    pub r: f64,
    pub z_g: Dataset,
    pub z_r: Dataset,
    pub generator: Option<GeneratorModel>,
    pools: Option<Vec<Dataset>>,
    synth_seed: SeedStream,
}

impl SplitContext {
    /// Splits `train` at `r` with stream `seed.child("split")` and fits the
    /// generator with `seed.child("generator")` when `max_counts` asks for
    /// any synthetic rows. With `cache`, region pools of `max_counts` rows are
    /// drawn up front.
    pub fn prepare(
        train: &Dataset,
        r: f64,
        max_counts: &[usize],
        gen_cfg: &GeneratorConfig,
        transfer: Option<&AutoencoderModel>,
        seed: SeedStream,
        cache: bool,
    ) -> Result<SplitContext> {
        let split = stratified_split(train, r, seed.child("split"))?;
        Self::build(split.generator_part, split.reserved_part, r, max_counts, gen_cfg, transfer, seed, cache)
    }

    /// Context over an explicit `(Z_g, Z_r)` pair.
    pub fn from_parts(
        z_g: Dataset,
        z_r: Dataset,
        max_counts: &[usize],
        gen_cfg: &GeneratorConfig,
        transfer: Option<&AutoencoderModel>,
        seed: SeedStream,
        cache: bool,
    ) -> Result<SplitContext> {
        let n = (z_g.len() + z_r.len()).max(1);
        let r = z_g.len() as f64 / n as f64;
        Self::build(z_g, z_r, r, max_counts, gen_cfg, transfer, seed, cache)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        z_g: Dataset,
        z_r: Dataset,
        r: f64,
        max_counts: &[usize],
        gen_cfg: &GeneratorConfig,
        transfer: Option<&AutoencoderModel>,
        seed: SeedStream,
        cache: bool,
    ) -> Result<SplitContext> {
        if max_counts.len() != z_r.n_regions() {
            return Err(Error::config("one synthetic count per region is required"));
        }
        let synth_seed = seed.child("synthesis");
        let generator = if max_counts.iter().any(|&c| c > 0) {
            if z_g.is_empty() {
                return Err(Error::config(format!("split ratio {r} leaves no rows to train the generator")));
            }
            Some(GeneratorModel::fit(&z_g, gen_cfg, transfer, seed.child("generator"))?)
        } else {
            None
        };
        let pools = match (&generator, cache) {
            (Some(g), true) => Some(
                (0..max_counts.len())
                    .map(|i| {
                        let mut only = vec![0; max_counts.len()];
                        only[i] = max_counts[i];
                        synthesize_counts(g, &only, synth_seed)
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        Ok(SplitContext { r, z_g, z_r, generator, pools, synth_seed })
    }

    /// Synthetic rows for `(alpha, m)`, identical whether served from the
    /// pools or drawn afresh.
    pub fn synthetic(&self, alpha: &[f64], m: usize) -> Result<Dataset> {
        let schema = self.z_r.schema();
        check_simplex(alpha, schema.n_regions)?;
        if m == 0 {
            return Ok(Dataset::empty(schema));
        }
        let generator = self
            .generator
            .as_ref()
            .ok_or_else(|| Error::State("no generator was trained for this split".into()))?;
        let counts = largest_remainder(alpha, m);
        match &self.pools {
            Some(pools) => {
                let mut out = Dataset::empty(schema);
                for (pool, &c) in pools.iter().zip(&counts) {
                    if c > pool.len() {
                        return Err(Error::State(format!("synthetic pool holds {} rows, {c} requested", pool.len())));
                    }
                    out = out.concat(&pool.head(c))?;
                }
                Ok(out)
            }
            None => synthesize(generator, alpha, m, self.synth_seed),
        }
    }

    pub fn augmented(&self, alpha: &[f64], m: usize) -> Result<AugmentedDataset> {
        mix(&self.z_r, &self.synthetic(alpha, m)?)
    }

    /// Fits the estimator on `Z_r` plus the synthetic rows for `(alpha, m)`,
    /// with stream `seed.child("estimator")`.
    pub fn fit(&self, alpha: &[f64], m: usize, val: &Dataset, est_cfg: &EstimatorConfig, seed: SeedStream) -> Result<FittedEstimator> {
        let train = self.augmented(alpha, m)?;
        if train.is_empty() {
            return Err(Error::config(format!("lambda (m = {m}, r = {}) leaves no training rows", self.r)));
        }
        est_cfg.fit(&train, val, seed.child("estimator"))
    }
}

/// Options shared by every CoDSA fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodsaOptions {
    pub generator: GeneratorConfig,
    pub estimator: EstimatorConfig,
    /// Evaluation weights `q`; uniform when absent.
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    /// Synthetic rows per region for the generator-error proxy (0 skips it).
    #[serde(default)]
    pub tau_samples: usize,
}

#[derive(Debug, Clone)]
pub struct CodsaRun {
    pub estimator: FittedEstimator,
    pub report: IndexReport,
    pub validation: RegionMetric,
    pub n_generator: usize,
    pub n_reserved: usize,
    pub n_synthetic: usize,
}

/// Algorithm 1: split at `r`, train the generator on `Z_g`, draw `m`
/// synthetic rows by `alpha`, mix with `Z_r` and fit the estimator. The
/// split and generator use [`context_seed`], the estimator `seed.child("estimator")`.
pub fn run_codsa(
    train: &Dataset,
    val: &Dataset,
    lambda: &LambdaConfig,
    opts: &CodsaOptions,
    transfer: Option<&AutoencoderModel>,
    seed: SeedStream,
) -> Result<CodsaRun> {
    lambda.validate(train.n_regions())?;
    let ctx_seed = context_seed(seed, lambda.r);
    let ctx = SplitContext::prepare(train, lambda.r, &lambda.counts(), &opts.generator, transfer, ctx_seed, false)?;
    let estimator = ctx.fit(&lambda.alpha, lambda.m, val, &opts.estimator, seed)?;
    let tau_hat = match (&ctx.generator, opts.tau_samples) {
        (Some(g), s) if s > 0 => estimate_tau(g, &ctx.z_r, s, ctx_seed.child("tau"))?,
        _ => vec![None; train.n_regions()],
    };
    let q = opts.q.clone().unwrap_or_else(|| uniform_weights(train.n_regions()));
    let p = region_proportions(train);
    let report = IndexReport::new(&lambda.alpha, lambda.m, &p, train.len(), lambda.r, &q, tau_hat)?;
    let validation = estimator.evaluate(val)?;
    Ok(CodsaRun {
        estimator,
        report,
        validation,
        n_generator: ctx.z_g.len(),
        n_reserved: ctx.z_r.len(),
        n_synthetic: lambda.m,
    })
}

/// Per-region sliced-W1 distance between real `holdout` rows and `per_region`
/// generated rows, measured in the generator's standardized row space.
/// Regions absent from the holdout give `None`.
pub fn estimate_tau(generator: &GeneratorModel, holdout: &Dataset, per_region: usize, seed: SeedStream) -> Result<Vec<Option<f64>>> {
    if holdout.provenance().contains(&Provenance::Synthetic) {
        return Err(Error::config("the real side of the generator error estimate contains synthetic rows"));
    }
    if per_region == 0 {
        return Err(Error::config("at least one synthetic row per region is required"));
    }
    let ae = &generator.autoencoder;
    (1..=holdout.n_regions())
        .map(|k| {
            let rows = holdout.region_rows(k);
            if rows.is_empty() {
                return Ok(None);
            }
            let real = ae.codec.encode_rows(&holdout.select(&rows))?;
            let fake = generator.sample_region_rows(k, per_region, seed.child("samples").index(k as u64))?;
            let real = ae.scaler.transform(real.view())?;
            let fake = ae.scaler.transform(fake.view())?;
            Ok(Some(sliced_w1(real.view(), fake.view(), N_PROJECTIONS, seed.child("projections").index(k as u64))?))
        })
        .collect()
}

/// Fits the estimator on `train` unchanged (the `lambda = (p, 0, 0)` case).
pub fn fit_baseline(train: &Dataset, val: &Dataset, est_cfg: &EstimatorConfig, seed: SeedStream) -> Result<FittedEstimator> {
    est_cfg.fit(train, val, seed.child("estimator"))
}

/// Total real rows used for estimation at `r`.
pub fn n_reserved(n: usize, r: f64) -> usize {
    reserved_count(n, r)
}
