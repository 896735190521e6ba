use ndarray::{Array1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Number of random directions in the sliced distance.
pub const N_PROJECTIONS: usize = 64;

/// Wasserstein-1 distance between two 1-D empirical distributions,
/// `integral |F_a(x) - F_b(x)| dx`. Reduces to the mean absolute difference
/// of sorted values when the sizes agree.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Undefined("W1 needs two non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Random unit directions in `R^d`, from stream `seed`.
pub fn random_directions(d: usize, count: usize, seed: SeedStream) -> Vec<Array1<f64>> {
    let mut rng = seed.rng();
    (0..count)
        .map(|_| loop {
            let v: Array1<f64> = Array1::from_shape_simple_fn(d, || StandardNormal.sample(&mut rng));
            let norm = v.dot(&v).sqrt();
            if norm > 1e-12 {
                break v / norm;
            }
        })
        .collect()
}

/// Sliced W1: the mean of [`w1_1d`] over `n_proj` random projections.
pub fn sliced_w1(a: ArrayView2<f64>, b: ArrayView2<f64>, n_proj: usize, seed: SeedStream) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::dim("samples have different widths"));
    }
    if n_proj == 0 {
        return Err(Error::config("at least one projection is required"));
    }
    let dirs = random_directions(a.ncols(), n_proj, seed);
    let mut total = 0.0;
    for dir in &dirs {
        let pa = a.dot(dir);
        let pb = b.dot(dir);
        total += w1_1d(pa.as_slice().expect("contiguous"), pb.as_slice().expect("contiguous"))?;
    }
    Ok(total / n_proj as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn one_dimensional_cases() {
        assert_eq!(w1_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(w1_1d(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(w1_1d(&[0.0, 2.0], &[1.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w1_1d(&[0.0, 0.0, 3.0], &[0.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert!(w1_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn unequal_sizes_match_replicated_coupling() {
        let a = [0.3, -1.0, 2.5];
        let b = [0.0, 1.0, 4.0, -2.0, 0.5, 0.7];
        let a2: Vec<f64> = a.iter().flat_map(|&v| [v, v]).collect();
        assert_abs_diff_eq!(w1_1d(&a, &b).unwrap(), w1_1d(&a2, &b).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn sliced_distance_of_identical_samples_is_zero() {
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.0, 0.5]];
        assert_eq!(sliced_w1(x.view(), x.view(), 16, SeedStream::new(1)).unwrap(), 0.0);
        let dirs = random_directions(3, 5, SeedStream::new(2));
        assert!(dirs.iter().all(|d| (d.dot(d) - 1.0).abs() < 1e-12));
    }
}
