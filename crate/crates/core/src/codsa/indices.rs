use serde::{Deserialize, Serialize};

use crate::dataset::floor_fraction;
use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-12;

/// Number of real rows kept for estimation at split ratio `r`.
pub fn reserved_count(n: usize, r: f64) -> usize {
    n - floor_fraction(r, n)
}

fn check_pair(q: &[f64], p: &[f64]) -> Result<()> {
    if q.len() != p.len() || q.is_empty() {
        return Err(Error::dim("q and p must be non-empty and of equal length"));
    }
    for v in q.iter().chain(p) {
        if !(0.0..=1.0).contains(v) {
            return Err(Error::config(format!("proportion {v} outside [0, 1]")));
        }
    }
    for (name, v) in [("q", q), ("p", p)] {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("{name} sums to {s}, not 1")));
        }
    }
    Ok(())
}

/// Smallest synthetic count `m` for which the zero-shift allocation lies in
/// `[0, 1]^K`: `ceil(max_k n_r (q_k - p_k) / (I(q_k >= p_k) - q_k))`.
pub fn min_feasible_m(q: &[f64], p: &[f64], n: usize, r: f64) -> Result<usize> {
    check_pair(q, p)?;
    let n_r = reserved_count(n, r) as f64;
    let mut bound: f64 = 0.0;
    for (k, (&qk, &pk)) in q.iter().zip(p).enumerate() {
        let shift = qk - pk;
        if shift == 0.0 || n_r == 0.0 {
            continue;
        }
        let denom = if shift > 0.0 { 1.0 - qk } else { -qk };
        if denom == 0.0 {
            return Err(Error::Unbounded(format!(
                "region {} has q = {qk} with p = {pk}; no finite m reaches it",
                k + 1
            )));
        }
        bound = bound.max(n_r * shift / denom);
    }
    let mut m = (bound - 1e-9).ceil().max(0.0) as usize;
    while !zero_shift_alpha(q, p, n_r, m).iter().all(|a| (-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(a)) {
        m += 1;
    }
    Ok(m)
}

fn zero_shift_alpha(q: &[f64], p: &[f64], n_r: f64, m: usize) -> Vec<f64> {
    if m == 0 {
        return q.iter().zip(p).map(|(&qk, &pk)| if qk == pk || n_r == 0.0 { qk } else { f64::NAN }).collect();
    }
    q.iter().zip(p).map(|(&qk, &pk)| qk + n_r / m as f64 * (qk - pk)).collect()
}

/// `alpha^o_k = q_k + (n_r / m)(q_k - p_k)`, the allocation that makes the
/// augmented sample's region proportions equal `q`.
pub fn allocate_optimal(q: &[f64], p: &[f64], n: usize, m: usize, r: f64) -> Result<Vec<f64>> {
    let bound = min_feasible_m(q, p, n, r)?;
    if m < bound {
        return Err(Error::Infeasible { m, bound });
    }
    let n_r = reserved_count(n, r) as f64;
    let alpha = zero_shift_alpha(q, p, n_r, m);
    Ok(alpha.into_iter().map(|a| a.clamp(0.0, 1.0)).collect())
}

/// `alpha~_k = (alpha_k m + p_k n_r) / (m + n_r)`.
pub fn effective_proportions(alpha: &[f64], m: usize, p: &[f64], n: usize, r: f64) -> Result<Vec<f64>> {
    if alpha.len() != p.len() {
        return Err(Error::dim("alpha and p lengths differ"));
    }
    let n_r = reserved_count(n, r) as f64;
    let total = m as f64 + n_r;
    if total == 0.0 {
        return Err(Error::Undefined("no real or synthetic rows in the augmented sample".into()));
    }
    Ok(alpha.iter().zip(p).map(|(&a, &pk)| (a * m as f64 + pk * n_r) / total).collect())
}

/// Domain adaptation index `D = sum_k |alpha~_k - q_k|`.
pub fn domain_index(alpha: &[f64], m: usize, p: &[f64], n: usize, r: f64, q: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::dim("q and p lengths differ"));
    }
    let tilde = effective_proportions(alpha, m, p, n, r)?;
    Ok(tilde.iter().zip(q).map(|(a, b)| (a - b).abs()).sum())
}

/// Generation index `G = m / (m + n_r) * sum_k alpha_k tau_k`.
pub fn generation_index(alpha: &[f64], m: usize, n_r: usize, tau: &[f64]) -> Result<f64> {
    if alpha.len() != tau.len() {
        return Err(Error::dim("alpha and tau lengths differ"));
    }
    if tau.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::config("tau values must be non-negative"));
    }
    if m == 0 {
        return Ok(0.0);
    }
    let w = m as f64 / (m + n_r) as f64;
    Ok(w * alpha.iter().zip(tau).map(|(a, t)| a * t).sum::<f64>())
}

/// Theory-facing diagnostics of one `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub d: f64,
    /// Absent when no generator error estimate is available.
    pub g: Option<f64>,
    pub alpha_tilde: Vec<f64>,
    pub tau_hat: Vec<Option<f64>>,
}

impl IndexReport {
    pub fn new(alpha: &[f64], m: usize, p: &[f64], n: usize, r: f64, q: &[f64], tau_hat: Vec<Option<f64>>) -> Result<Self> {
        let alpha_tilde = effective_proportions(alpha, m, p, n, r)?;
        let d = domain_index(alpha, m, p, n, r, q)?;
        let g = if m == 0 {
            Some(0.0)
        } else if tau_hat.len() == alpha.len() && tau_hat.iter().all(Option::is_some) {
            let tau: Vec<f64> = tau_hat.iter().map(|t| t.unwrap_or(0.0)).collect();
            Some(generation_index(alpha, m, reserved_count(n, r), &tau)?)
        } else {
            None
        };
        Ok(IndexReport { d, g, alpha_tilde, tau_hat })
    }
}
