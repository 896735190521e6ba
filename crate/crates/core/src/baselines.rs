//! Classical oversamplers: SMOTE, ADASYN and a Gaussian-perturbation SMOGN.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::allocation::largest_remainder;
use crate::dataset::{Dataset, Provenance, Target};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Default neighbor count for SMOTE and ADASYN.
pub const DEFAULT_NEIGHBORS: usize = 5;

/// Perturbation sizes searched for SMOGN.
pub const SMOGN_SIGMAS: [f64; 3] = [0.02, 0.04, 0.06];

/// Synthetic rows together with the source rows each one was built from
/// (indices into the input dataset; `a == b` for perturbed replicas).
#[derive(Debug, Clone, PartialEq)]
pub struct Oversampled {
    pub data: Dataset,
    pub parents: Vec<(usize, usize)>,
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Indices of the `k` rows of `points` closest to row `query` (itself
/// excluded), by Euclidean distance with ties going to the lower index.
pub fn nearest_neighbors(points: ArrayView2<f64>, query: usize, k: usize) -> Vec<usize> {
    let q = points.row(query);
    let mut dists: Vec<(f64, usize)> = (0..points.nrows())
        .filter(|&j| j != query)
        .map(|j| (squared_distance(q, points.row(j)), j))
        .collect();
    let k = k.min(dists.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    dists.select_nth_unstable_by(k - 1, cmp);
    dists.truncate(k);
    dists.sort_by(cmp);
    dists.into_iter().map(|(_, j)| j).collect()
}

fn region_members(data: &Dataset, k: usize, k_neighbors: usize) -> Result<Vec<usize>> {
    if k == 0 || k > data.n_regions() {
        return Err(Error::config(format!("region {k} outside 1..={}", data.n_regions())));
    }
    let rows = data.region_rows(k);
    if rows.len() <= k_neighbors {
        return Err(Error::Capacity(format!(
            "region {k} has {} rows; interpolation with {k_neighbors} neighbors needs more",
            rows.len()
        )));
    }
    Ok(rows)
}

/// Builds `a + lambda (b - a)` for each `(a, b, lambda)`, interpolating a
/// continuous target too and copying a class label from `a`.
fn interpolate(data: &Dataset, k: usize, triples: &[(usize, usize, f64)]) -> Result<Oversampled> {
    let d = data.n_features();
    let x = data.features();
    let mut out = Array2::zeros((triples.len(), d));
    for (i, &(a, b, lam)) in triples.iter().enumerate() {
        for j in 0..d {
            out[[i, j]] = x[[a, j]] + lam * (x[[b, j]] - x[[a, j]]);
        }
    }
    let target = match data.target() {
        Target::None => Target::None,
        Target::Continuous(y) => Target::Continuous(triples.iter().map(|&(a, b, lam)| y[a] + lam * (y[b] - y[a])).collect()),
        Target::Class(y) => Target::Class(triples.iter().map(|&(a, _, _)| y[a]).collect()),
    };
    let n = triples.len();
    Ok(Oversampled {
        data: Dataset::with_provenance(out, target, vec![k; n], vec![Provenance::Synthetic; n], data.n_regions())?,
        parents: triples.iter().map(|&(a, b, _)| (a, b)).collect(),
    })
}

/// Interpolates `quotas[i]` new rows from minority row `members[i]` toward
/// random picks among its `k_neighbors` nearest minority rows.
fn interpolate_from_quotas(
    data: &Dataset,
    k: usize,
    members: &[usize],
    quotas: &[usize],
    k_neighbors: usize,
    seed: SeedStream,
) -> Result<Oversampled> {
    let local = data.features().select(ndarray::Axis(0), members);
    let mut rng = seed.rng();
    let mut triples = Vec::with_capacity(quotas.iter().sum());
    for (i, &quota) in quotas.iter().enumerate() {
        if quota == 0 {
            continue;
        }
        let nn = nearest_neighbors(local.view(), i, k_neighbors);
        for _ in 0..quota {
            let b = nn[rng.random_range(0..nn.len())];
            let lam: f64 = rng.random();
            triples.push((members[i], members[b], lam));
        }
    }
    interpolate(data, k, &triples)
}

/// SMOTE: `n_new` rows spread evenly over the rows of region `k`
/// (largest remainder, extras to earlier rows), each interpolated toward one
/// of that row's `k_neighbors` nearest neighbors within the region.
pub fn smote(data: &Dataset, k: usize, n_new: usize, k_neighbors: usize, seed: SeedStream) -> Result<Oversampled> {
    if n_new == 0 {
        return interpolate(data, k, &[]);
    }
    let members = region_members(data, k, k_neighbors)?;
    let quotas = largest_remainder(&vec![1.0; members.len()], n_new);
    interpolate_from_quotas(data, k, &members, &quotas, k_neighbors, seed)
}

/// Per-row ADASYN quotas: proportional to `ratios`, summing to `n_new`;
/// uniform when every ratio is zero.
pub fn adasyn_quotas(ratios: &[f64], n_new: usize) -> Vec<usize> {
    if ratios.iter().all(|&r| r <= 0.0) {
        largest_remainder(&vec![1.0; ratios.len()], n_new)
    } else {
        largest_remainder(ratios, n_new)
    }
}

/// Fraction of each region-`k` row's `k_neighbors` nearest neighbors (over
/// all rows) that lie outside region `k`.
pub fn adasyn_ratios(data: &Dataset, k: usize, members: &[usize], k_neighbors: usize) -> Vec<f64> {
    let x = data.features().view();
    let regions = data.regions();
    members
        .iter()
        .map(|&i| {
            let nn = nearest_neighbors(x, i, k_neighbors);
            nn.iter().filter(|&&j| regions[j] != k).count() as f64 / k_neighbors as f64
        })
        .collect()
}

/// ADASYN: like [`smote`], but each row's share is proportional to the
/// fraction of other-region rows among its nearest neighbors.
pub fn adasyn(data: &Dataset, k: usize, n_new: usize, k_neighbors: usize, seed: SeedStream) -> Result<Oversampled> {
    if n_new == 0 {
        return interpolate(data, k, &[]);
    }
    let members = region_members(data, k, k_neighbors)?;
    let ratios = adasyn_ratios(data, k, &members, k_neighbors);
    let quotas = adasyn_quotas(&ratios, n_new);
    interpolate_from_quotas(data, k, &members, &quotas, k_neighbors, seed)
}

/// Sample standard deviation (n - 1 denominator) of each column; zero for a single row.
fn column_sd(x: ArrayView2<f64>) -> Array1<f64> {
    let n = x.nrows();
    if n < 2 {
        return Array1::zeros(x.ncols());
    }
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let mut var = Array1::zeros(x.ncols());
    for row in x.rows() {
        var.zip_mut_with(&(&row - &mean), |v, d| *v += d * d);
    }
    var.mapv(|v: f64| (v / (n - 1) as f64).sqrt())
}

/// SMOGN as Gaussian-perturbed replicas: rows of region `k` drawn uniformly
/// with replacement, each column (and a continuous target) jittered by
/// `sigma` times that column's standard deviation within the region.
pub fn smogn(data: &Dataset, k: usize, n_new: usize, sigma: f64, seed: SeedStream) -> Result<Oversampled> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::config("perturbation size must be non-negative"));
    }
    if n_new == 0 {
        return interpolate(data, k, &[]);
    }
    let members = region_members(data, k, 0)?;
    let x = data.features();
    let local = x.select(ndarray::Axis(0), &members);
    let x_scale = column_sd(local.view());
    let y_scale = match data.target() {
        Target::Continuous(y) => {
            let ys = Array2::from_shape_fn((members.len(), 1), |(i, _)| y[members[i]]);
            column_sd(ys.view())[0]
        }
        _ => 0.0,
    };
    let mut rng = seed.rng();
    let d = data.n_features();
    let mut out = Array2::zeros((n_new, d));
    let mut ys = Vec::with_capacity(n_new);
    let mut parents = Vec::with_capacity(n_new);
    for i in 0..n_new {
        let src = members[rng.random_range(0..members.len())];
        for j in 0..d {
            let eta: f64 = StandardNormal.sample(&mut rng);
            out[[i, j]] = x[[src, j]] + sigma * eta * x_scale[j];
        }
        if let Target::Continuous(y) = data.target() {
            let eta: f64 = StandardNormal.sample(&mut rng);
            ys.push(y[src] + sigma * eta * y_scale);
        }
        parents.push((src, src));
    }
    let target = match data.target() {
        Target::None => Target::None,
        Target::Continuous(_) => Target::Continuous(Array1::from(ys)),
        Target::Class(y) => Target::Class(parents.iter().map(|&(a, _)| y[a]).collect()),
    };
    Ok(Oversampled {
        data: Dataset::with_provenance(out, target, vec![k; n_new], vec![Provenance::Synthetic; n_new], data.n_regions())?,
        parents,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Oversampler {
    Smote { k_neighbors: usize },
    Adasyn { k_neighbors: usize },
    Smogn { sigma: f64 },
}

impl Oversampler {
    pub fn name(&self) -> &'static str {
        match self {
            Oversampler::Smote { .. } => "smote",
            Oversampler::Adasyn { .. } => "adasyn",
            Oversampler::Smogn { .. } => "smogn",
        }
    }

    pub fn for_region(&self, data: &Dataset, k: usize, n_new: usize, seed: SeedStream) -> Result<Oversampled> {
        match *self {
            Oversampler::Smote { k_neighbors } => smote(data, k, n_new, k_neighbors, seed),
            Oversampler::Adasyn { k_neighbors } => adasyn(data, k, n_new, k_neighbors, seed),
            Oversampler::Smogn { sigma } => smogn(data, k, n_new, sigma, seed),
        }
    }

    /// Synthetic rows for every region, `counts[k - 1]` of them for region
    /// `k`, using stream `seed.index(k)` per region.
    pub fn oversample(&self, data: &Dataset, counts: &[usize], seed: SeedStream) -> Result<Dataset> {
        if counts.len() != data.n_regions() {
            return Err(Error::config(format!("{} region counts for {} regions", counts.len(), data.n_regions())));
        }
        let mut out = Dataset::empty(data.schema());
        for (i, &c) in counts.iter().enumerate() {
            if c > 0 {
                let part = self.for_region(data, i + 1, c, seed.index(i as u64 + 1))?;
                out = out.concat(&part.data)?;
            }
        }
        Ok(out)
    }
}

/// Per-region counts that bring every region up to the largest one.
pub fn balancing_counts(data: &Dataset) -> Vec<usize> {
    let counts = data.region_counts();
    let top = counts.iter().copied().max().unwrap_or(0);
    counts.iter().map(|&c| top - c).collect()
}
