use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::pipeline::{CodsaOptions, LambdaConfig, SplitContext};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{evaluate_predictions, FittedEstimator};
use crate::generator::AutoencoderModel;
use crate::metrics::RegionMetric;
use crate::rng::SeedStream;

/// Stratified K-fold partition: each region is shuffled and dealt round-robin.
/// Every fold is returned in ascending row order.
pub fn stratified_folds(data: &Dataset, k_folds: usize, seed: SeedStream) -> Result<Vec<Vec<usize>>> {
    if k_folds < 2 {
        return Err(Error::config(format!("cross-fitting needs at least 2 folds, got {k_folds}")));
    }
    let mut folds = vec![Vec::new(); k_folds];
    for k in 1..=data.n_regions() {
        let mut rows = data.region_rows(k);
        rows.shuffle(&mut seed.index(k as u64).rng());
        for (j, i) in rows.into_iter().enumerate() {
            folds[j % k_folds].push(i);
        }
    }
    for (f, fold) in folds.iter_mut().enumerate() {
        if fold.is_empty() {
            return Err(Error::Capacity(format!("fold {} of {k_folds} is empty", f + 1)));
        }
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Average of the K fold estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFitModel {
    pub members: Vec<FittedEstimator>,
}

impl CrossFitModel {
    /// Mean probability (classifier) or mean value (regressor).
    pub fn predict(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
        let mut sum = vec![0.0; rows.nrows()];
        for m in &self.members {
            for (s, p) in sum.iter_mut().zip(m.predict(rows)?) {
                *s += p;
            }
        }
        let k = self.members.len() as f64;
        Ok(sum.into_iter().map(|s| s / k).collect())
    }

    pub fn is_classifier(&self) -> bool {
        self.members.first().is_some_and(FittedEstimator::is_classifier)
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<RegionMetric> {
        let preds = self.predict(data.features().view())?;
        evaluate_predictions(self.is_classifier(), &preds, data)
    }
}

/// One generator/reserved-fold pair per fold, reusable across `(alpha, m)`.
#[derive(Debug, Clone)]
pub struct FoldContexts {
    pub folds: Vec<SplitContext>,
    seeds: Vec<SeedStream>,
}

impl FoldContexts {
    /// Fold `f` trains its generator on the other `K - 1` folds and keeps
    /// fold `f` as the reserved part.
    pub fn prepare(
        train: &Dataset,
        k_folds: usize,
        max_counts: &[usize],
        opts: &CodsaOptions,
        transfer: Option<&AutoencoderModel>,
        seed: SeedStream,
        cache: bool,
    ) -> Result<FoldContexts> {
        let parts = stratified_folds(train, k_folds, seed.child("folds"))?;
        let seeds: Vec<SeedStream> = (0..k_folds).map(|f| seed.child("fold").index(f as u64)).collect();
        let folds = parts
            .iter()
            .enumerate()
            .map(|(f, held)| {
                let rest: Vec<usize> =
                    parts.iter().enumerate().filter(|&(g, _)| g != f).flat_map(|(_, v)| v.iter().copied()).collect();
                SplitContext::from_parts(train.select(&rest), train.select(held), max_counts, &opts.generator, transfer, seeds[f], cache)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FoldContexts { folds, seeds })
    }

    pub fn fit(&self, alpha: &[f64], m: usize, val: &Dataset, opts: &CodsaOptions) -> Result<CrossFitModel> {
        let members = self
            .folds
            .iter()
            .zip(&self.seeds)
            .map(|(ctx, &s)| ctx.fit(alpha, m, val, &opts.estimator, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(CrossFitModel { members })
    }
}

/// Split ratio implied by `K`-fold cross-fitting.
pub fn implied_ratio(k_folds: usize) -> f64 {
    1.0 - 1.0 / k_folds.max(1) as f64
}

/// K-fold CoDSA. Fold `f` trains the generator on the other `K - 1` folds
/// and the estimator on fold `f` plus `m` synthetic rows allocated by
/// `alpha`; predictions are averaged over folds. The split ratio is implied
/// by the fold count, so `lambda.r` must equal `1 - 1/K`.
pub fn cross_fit_codsa(
    train: &Dataset,
    val: &Dataset,
    lambda: &LambdaConfig,
    k_folds: usize,
    opts: &CodsaOptions,
    transfer: Option<&AutoencoderModel>,
    seed: SeedStream,
) -> Result<CrossFitModel> {
    lambda.validate(train.n_regions())?;
    let implied = implied_ratio(k_folds);
    if (lambda.r - implied).abs() > 1e-9 {
        return Err(Error::config(format!(
            "{k_folds}-fold cross-fitting uses split ratio {implied}, but lambda has r = {}",
            lambda.r
        )));
    }
    let ctx = FoldContexts::prepare(train, k_folds, &lambda.counts(), opts, transfer, seed, false)?;
    ctx.fit(&lambda.alpha, lambda.m, val, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Target;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn toy(counts: &[usize]) -> Dataset {
        let n: usize = counts.iter().sum();
        let region: Vec<usize> = counts.iter().enumerate().flat_map(|(k, &c)| std::iter::repeat_n(k + 1, c)).collect();
        Dataset::new(Array2::zeros((n, 1)), Target::None, region, counts.len()).unwrap()
    }

    proptest! {
        #[test]
        fn folds_partition_rows(a in 1usize..60, b in 1usize..60, k in 2usize..6, s in any::<u64>()) {
            prop_assume!(a.min(b) >= k);
            let data = toy(&[a, b]);
            let folds = stratified_folds(&data, k, SeedStream::new(s)).unwrap();
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..a + b).collect::<Vec<_>>());
            for fold in &folds {
                let c = data.select(fold).region_counts();
                prop_assert!(c[0] >= a / k && c[0] <= a.div_ceil(k));
                prop_assert!(c[1] >= b / k && c[1] <= b.div_ceil(k));
            }
        }
    }

    #[test]
    fn too_few_rows_for_folds() {
        assert!(stratified_folds(&toy(&[1, 1]), 3, SeedStream::new(0)).is_err());
        assert!(stratified_folds(&toy(&[5, 5]), 1, SeedStream::new(0)).is_err());
    }
}
