//! Integer allocation on the simplex.

use crate::error::{Error, Result};

/// Checks that `alpha` is a probability vector of length `k` (sum within 1e-9).
pub fn check_simplex(alpha: &[f64], k: usize) -> Result<()> {
    if alpha.len() != k {
        return Err(Error::config(format!("allocation has {} entries, expected {k}", alpha.len())));
    }
    if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::config("allocation entries must be non-negative"));
    }
    let sum: f64 = alpha.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("allocation sums to {sum}, not 1")));
    }
    Ok(())
}

/// Hamilton apportionment of `total` items by `shares`: floors first, then
/// one extra item to each of the largest remainders, ties to the lower index.
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    if shares.is_empty() || total == 0 || !(sum > 0.0) {
        return vec![0; shares.len()];
    }
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(largest_remainder(&[0.6, 0.4], 10), vec![6, 4]);
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[1.0, 0.0], 10), vec![10, 0]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 10), vec![0, 0]);
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 0), vec![0, 0, 0]);
        assert!(check_simplex(&[0.6, 0.4], 2).is_ok());
        assert!(check_simplex(&[0.6, 0.5], 2).is_err());
        assert!(check_simplex(&[1.2, -0.2], 2).is_err());
        assert!(check_simplex(&[1.0], 2).is_err());
    }

    proptest! {
        #[test]
        fn counts_sum_to_total(shares in prop::collection::vec(0.0f64..1.0, 1..6), total in 0usize..5000) {
            let c = largest_remainder(&shares, total);
            let sum: f64 = shares.iter().sum();
            if sum > 0.0 {
                prop_assert_eq!(c.iter().sum::<usize>(), total);
                for (ci, s) in c.iter().zip(&shares) {
                    prop_assert!((*ci as f64 - s / sum * total as f64).abs() < 1.0 + 1e-9);
                }
            }
        }
    }
}
