//! Simulation data-generating processes and balanced evaluation carving.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Target};
use crate::error::{Error, Result};
use crate::rng::{Rng64, SeedStream};

/// Imbalanced binary classification: `n1` rows of the minority class
/// `Y = 0` (region 1) and `n2` rows of `Y = 1` (region 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifSimConfig {
    pub n1: usize,
    pub n2: usize,
    pub seed: u64,
}

impl Default for ClassifSimConfig {
    fn default() -> Self {
        ClassifSimConfig { n1: 1400, n2: 3800, seed: 0 }
    }
}

/// Regime-switching regression: `n1` rows in the undersampled region
/// `u1 ~ U(0, 0.5)` and `n2` rows in `u1 ~ U(0.5, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressSimConfig {
    pub n1: usize,
    pub n2: usize,
    /// Observation noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for RegressSimConfig {
    fn default() -> Self {
        RegressSimConfig { n1: 1400, n2: 3800, sigma: 0.2, seed: 0 }
    }
}

pub const REGRESSION_BETA: [f64; 5] = [3.0, 2.0, -1.0, 0.5, 1.0];

/// `n` points evenly spaced on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// The ten nonlinear classification features of latents `(u1, u2, u3)`.
pub fn classification_features(u: [f64; 3]) -> [f64; 10] {
    let [u1, u2, u3] = u;
    [
        u1 * u2,
        u1 * u3,
        u2 * u3,
        u1 * u1,
        u2 * u2,
        u3 * u3,
        u1 * u2 * u3,
        u1 * u1 * u1,
        u2 * u2 * u2,
        u3 * u3 * u3,
    ]
}

/// `sin^2(2 pi a/(1+|a|)) - cos^2(3 pi b/(1+|b|))` with `a = x[0..5].w`, `b = x[5..10].w`.
pub fn decision_score(x: &[f64], w: &[f64]) -> Result<f64> {
    if x.len() != 10 || w.len() != 5 {
        return Err(Error::dim("decision score needs a 10-vector and a 5-vector"));
    }
    let a: f64 = x[..5].iter().zip(w).map(|(x, w)| x * w).sum();
    let b: f64 = x[5..].iter().zip(w).map(|(x, w)| x * w).sum();
    let pi = std::f64::consts::PI;
    let s1 = (2.0 * pi * a / (1.0 + a.abs())).sin();
    let c2 = (3.0 * pi * b / (1.0 + b.abs())).cos();
    Ok(s1 * s1 - c2 * c2)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn draw_classification_latents(rng: &mut Rng64) -> [f64; 3] {
    let centre = if rng.random::<bool>() { 2.0 } else { -2.0 };
    let z: f64 = StandardNormal.sample(rng);
    let u1 = centre + z;
    let base = if rng.random::<bool>() { 2.0 } else { 0.0 };
    let u2 = base + rng.random::<f64>();
    let e: f64 = Exp1.sample(rng);
    let u3 = e - 1.0;
    [u1, u2, u3]
}

/// Band thresholds `(tau, delta)` of the classification labelling rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelBand {
    pub tau: f64,
    pub delta: f64,
}

impl LabelBand {
    /// `Y = 1` iff `|s - tau| < delta`.
    pub fn label(&self, s: f64) -> u32 {
        u32::from((s - self.tau).abs() < self.delta)
    }

    /// Thresholds from the quantiles `n1/(2n)` and `1 - n1/(2n)` of a pool of scores.
    pub fn from_scores(scores: &[f64], n1: usize, n: usize) -> Result<Self> {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.is_empty() || sorted[0] == sorted[sorted.len() - 1] {
            return Err(Error::Generation("decision scores are degenerate".into()));
        }
        let level = n1 as f64 / (2.0 * n as f64);
        let lo = quantile_linear(&sorted, level);
        let hi = quantile_linear(&sorted, 1.0 - level);
        Ok(LabelBand { tau: 0.5 * (lo + hi), delta: 0.5 * (hi - lo) })
    }
}

pub fn classification_weights() -> Vec<f64> {
    linspace(-1.0, 1.0, 5)
}

/// Draws a labelled pool of `n1 + n2` rows, freezes the label band from its
/// scores, then accepts rows per class (drawing further batches under the
/// same band if needed) until both quotas are met.
pub fn gen_classification(cfg: &ClassifSimConfig) -> Result<Dataset> {
    if cfg.n1 == 0 || cfg.n2 == 0 {
        return Err(Error::config("class counts must be at least 1"));
    }
    let n = cfg.n1 + cfg.n2;
    let w = classification_weights();
    let mut rng = SeedStream::new(cfg.seed).child("dgp-classification").rng();

    let draw_batch = |rng: &mut Rng64| -> Result<Vec<([f64; 10], f64)>> {
        (0..n)
            .map(|_| {
                let x = classification_features(draw_classification_latents(rng));
                decision_score(&x, &w).map(|s| (x, s))
            })
            .collect()
    };

    let mut batch = draw_batch(&mut rng)?;
    let scores: Vec<f64> = batch.iter().map(|(_, s)| *s).collect();
    let band = LabelBand::from_scores(&scores, cfg.n1, n)?;

    let quota = [cfg.n1, cfg.n2];
    let mut filled = [0usize; 2];
    let mut rows: Vec<[f64; 10]> = Vec::with_capacity(n);
    let mut labels: Vec<u32> = Vec::with_capacity(n);
    for round in 0..1000 {
        for (x, s) in batch.drain(..) {
            let y = band.label(s);
            let c = y as usize;
            if filled[c] < quota[c] {
                filled[c] += 1;
                rows.push(x);
                labels.push(y);
            }
        }
        if filled == quota {
            break;
        }
        if round == 999 {
            return Err(Error::Generation("class quotas could not be filled".into()));
        }
        batch = draw_batch(&mut rng)?;
    }

    let features = Array2::from_shape_fn((n, 10), |(i, j)| rows[i][j]);
    let region = labels.iter().map(|&y| if y == 0 { 1 } else { 2 }).collect();
    Dataset::new(features, Target::Class(labels), region, 2)
}

/// Regression features of `(u1, u2)`.
pub fn regression_features(u1: f64, u2: f64) -> [f64; 5] {
    let ind = if u1 > 0.5 { 1.0 } else { 0.0 };
    [u1, ind * u1 + u2, ind * u2 + (1.0 + u2.abs()).ln(), u2.abs(), u1 - u2]
}

/// Noise-free regression function; region 1 adds the linear term, region 2 subtracts it.
pub fn regression_mean(x: &[f64], region: usize) -> f64 {
    let xb: f64 = x.iter().zip(REGRESSION_BETA.iter()).map(|(x, b)| x * b).sum();
    if region == 1 {
        2.0 * xb * xb + xb
    } else {
        2.0 * xb * xb - xb
    }
}

pub fn gen_regression(cfg: &RegressSimConfig) -> Result<Dataset> {
    if !(cfg.sigma >= 0.0) || !cfg.sigma.is_finite() {
        return Err(Error::config("sigma must be a finite non-negative number"));
    }
    let n = cfg.n1 + cfg.n2;
    let mut rng = SeedStream::new(cfg.seed).child("dgp-regression").rng();
    let mut features = Array2::zeros((n, 5));
    let mut y = Array1::zeros(n);
    let mut region = Vec::with_capacity(n);
    for i in 0..n {
        let k = if i < cfg.n1 { 1 } else { 2 };
        let u1 = if k == 1 { rng.random_range(0.0..0.5) } else { rng.random_range(0.5..1.0) };
        let eps: f64 = StandardNormal.sample(&mut rng);
        let u2 = u1 * u1 + eps;
        let x = regression_features(u1, u2);
        let noise: f64 = StandardNormal.sample(&mut rng);
        y[i] = regression_mean(&x, k) + cfg.sigma * noise;
        features.row_mut(i).assign(&ndarray::ArrayView1::from(&x[..]));
        region.push(k);
    }
    Dataset::new(features, Target::Continuous(y), region, 2)
}

/// Train / validation / test parts from balanced carving.
#[derive(Debug, Clone)]
pub struct EvalSplit {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Samples `val_per_region` and `test_per_region` rows of every region without
/// replacement; the rest is the (imbalanced) training set.
pub fn carve_balanced_eval(
    data: &Dataset,
    val_per_region: usize,
    test_per_region: usize,
    seed: SeedStream,
) -> Result<EvalSplit> {
    let mut role = vec![0u8; data.len()];
    for k in 1..=data.n_regions() {
        let mut rows = data.region_rows(k);
        if rows.len() < val_per_region + test_per_region {
            return Err(Error::Capacity(format!(
                "region {k} has {} rows, carving needs {}",
                rows.len(),
                val_per_region + test_per_region
            )));
        }
        rows.shuffle(&mut seed.index(k as u64).rng());
        for &i in &rows[..val_per_region] {
            role[i] = 1;
        }
        for &i in &rows[val_per_region..val_per_region + test_per_region] {
            role[i] = 2;
        }
    }
    let pick = |r: u8| -> Vec<usize> { (0..data.len()).filter(|&i| role[i] == r).collect() };
    Ok(EvalSplit { train: data.select(&pick(0)), validation: data.select(&pick(1)), test: data.select(&pick(2)) })
}
