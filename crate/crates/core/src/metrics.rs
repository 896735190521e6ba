//! Evaluation under the balanced distribution: per-region and overall
//! cross-entropy and RMSE, Cohen's kappa, replicate aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::PROB_CLIP;

/// Per-region values (`None` where a region has no evaluation rows) and an overall value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMetric {
    pub per_region: Vec<Option<f64>>,
    pub overall: Option<f64>,
}

impl RegionMetric {
    pub fn region(&self, k: usize) -> Option<f64> {
        self.per_region.get(k.wrapping_sub(1)).copied().flatten()
    }
}

fn check_lengths(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::dim(format!("metric inputs have lengths {a}, {b}, {c}")));
    }
    Ok(())
}

fn region_of(k: usize, n_regions: usize) -> Result<usize> {
    if k == 0 || k > n_regions {
        return Err(Error::config(format!("region {k} outside 1..={n_regions}")));
    }
    Ok(k - 1)
}

/// Logistic loss of one prediction, with the probability clipped away from 0 and 1.
pub fn logistic_loss(p: f64, label: u32) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean logistic loss per region; overall is the unweighted mean of the
/// available region means.
pub fn cross_entropy_by_region(probs: &[f64], labels: &[u32], regions: &[usize], n_regions: usize) -> Result<RegionMetric> {
    check_lengths(probs.len(), labels.len(), regions.len())?;
    let mut sums = vec![0.0; n_regions];
    let mut counts = vec![0usize; n_regions];
    for ((&p, &y), &k) in probs.iter().zip(labels).zip(regions) {
        let i = region_of(k, n_regions)?;
        sums[i] += logistic_loss(p, y);
        counts[i] += 1;
    }
    let per_region: Vec<Option<f64>> =
        sums.iter().zip(&counts).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect();
    let present: Vec<f64> = per_region.iter().flatten().copied().collect();
    let overall = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok(RegionMetric { per_region, overall })
}

/// Root mean squared error per region; overall is pooled over all rows.
pub fn rmse_by_region(preds: &[f64], targets: &[f64], regions: &[usize], n_regions: usize) -> Result<RegionMetric> {
    check_lengths(preds.len(), targets.len(), regions.len())?;
    let mut sums = vec![0.0; n_regions];
    let mut counts = vec![0usize; n_regions];
    for ((&p, &y), &k) in preds.iter().zip(targets).zip(regions) {
        let i = region_of(k, n_regions)?;
        sums[i] += (p - y).powi(2);
        counts[i] += 1;
    }
    let per_region = sums.iter().zip(&counts).map(|(&s, &c)| (c > 0).then(|| (s / c as f64).sqrt())).collect();
    let n: usize = counts.iter().sum();
    let overall = (n > 0).then(|| (sums.iter().sum::<f64>() / n as f64).sqrt());
    Ok(RegionMetric { per_region, overall })
}

/// Cohen's kappa; `None` when chance agreement is 1.
pub fn cohen_kappa(pred: &[u32], truth: &[u32]) -> Result<Option<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::dim("prediction and truth lengths differ"));
    }
    if pred.is_empty() {
        return Ok(None);
    }
    let n = pred.len() as f64;
    let labels: std::collections::BTreeSet<u32> = pred.iter().chain(truth).copied().collect();
    let p_o = pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / n;
    let p_e: f64 = labels
        .iter()
        .map(|l| {
            let a = pred.iter().filter(|&&x| x == *l).count() as f64 / n;
            let b = truth.iter().filter(|&&x| x == *l).count() as f64 / n;
            a * b
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(None);
    }
    Ok(Some((p_o - p_e) / (1.0 - p_e)))
}

/// Mean and standard error (sample sd over sqrt(R); 0 for a single value).
pub fn aggregate_replicates(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Undefined("no replicate values to aggregate".into()));
    }
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok((mean, (var / r).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cross_entropy_examples() {
        let ce = cross_entropy_by_region(&[0.0, 1.0], &[0, 1], &[1, 2], 2).unwrap();
        assert!(ce.overall.unwrap() < 1e-6);
        let ce = cross_entropy_by_region(&[0.5; 4], &[0, 0, 1, 1], &[1, 1, 2, 2], 2).unwrap();
        assert_abs_diff_eq!(ce.region(1).unwrap(), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ce.overall.unwrap(), 2f64.ln(), epsilon = 1e-12);
        let missing = cross_entropy_by_region(&[0.5], &[0], &[1], 2).unwrap();
        assert_eq!(missing.region(2), None);
        assert!(cross_entropy_by_region(&[0.5], &[0], &[3], 2).is_err());
        assert!(cross_entropy_by_region(&[0.5, 0.2], &[0], &[1], 2).is_err());
    }

    #[test]
    fn overall_is_mean_of_region_means() {
        let probs = [0.9, 0.2, 0.7, 0.4, 0.6, 0.1];
        let labels = [1, 0, 1, 0, 0, 1];
        let regions = [1, 1, 1, 2, 2, 2];
        let ce = cross_entropy_by_region(&probs, &labels, &regions, 2).unwrap();
        let mean = |r: std::ops::Range<usize>| r.clone().map(|i| logistic_loss(probs[i], labels[i])).sum::<f64>() / r.len() as f64;
        let pooled = (0..6).map(|i| logistic_loss(probs[i], labels[i])).sum::<f64>() / 6.0;
        assert_abs_diff_eq!(ce.overall.unwrap(), (mean(0..3) + mean(3..6)) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ce.overall.unwrap(), pooled, epsilon = 1e-12);
    }

    #[test]
    fn rmse_examples() {
        let z = rmse_by_region(&[1.0, 2.0], &[1.0, 2.0], &[1, 2], 2).unwrap();
        assert_eq!(z.overall, Some(0.0));
        let r = rmse_by_region(&[3.0, 4.0], &[0.0, 0.0], &[1, 1], 1).unwrap();
        assert_abs_diff_eq!(r.overall.unwrap(), 12.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.overall.unwrap(), 3.53553, epsilon = 1e-5);
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(cohen_kappa(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), Some(1.0));
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for (t, p, c) in [(0, 0, 40), (0, 1, 10), (1, 0, 20), (1, 1, 30)] {
            truth.extend(std::iter::repeat_n(t, c));
            pred.extend(std::iter::repeat_n(p, c));
        }
        assert_abs_diff_eq!(cohen_kappa(&pred, &truth).unwrap().unwrap(), 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(cohen_kappa(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap().unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(cohen_kappa(&[1, 1], &[1, 1]).unwrap(), None);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_replicates(&[2.5]).unwrap(), (2.5, 0.0));
        let (m, se) = aggregate_replicates(&[1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(m, 2.0);
        assert_abs_diff_eq!(se, 1.0, epsilon = 1e-12);
        assert_eq!(aggregate_replicates(&[3.0, 1.0]).unwrap(), (m, se));
        assert!(aggregate_replicates(&[]).is_err());
    }
}
