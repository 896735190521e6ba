//! Grid search over `lambda = (alpha, m, r)` on validation performance.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codsa::{
    context_seed, fit_baseline, implied_ratio, region_proportions, uniform_weights, CodsaOptions, CrossFitModel, FoldContexts,
    IndexReport, SplitContext,
};
use crate::codsa::pipeline::estimate_tau;
use crate::allocation::largest_remainder;
use crate::dgp::EvalSplit;
use crate::error::{Error, Result};
use crate::generator::AutoencoderModel;
use crate::metrics::{aggregate_replicates, RegionMetric};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub r_values: Vec<f64>,
    /// First allocation coordinate for two-region problems.
    #[serde(default)]
    pub alpha1_values: Vec<f64>,
    /// Full allocation vectors; used instead of `alpha1_values` when non-empty.
    #[serde(default)]
    pub alpha_vectors: Vec<Vec<f64>>,
    pub m_over_n_values: Vec<f64>,
    /// Adds the no-augmentation point `(p, 0, 0)`.
    #[serde(default = "default_true")]
    pub include_baseline: bool,
}

fn default_true() -> bool {
    true
}

fn tenths(lo: usize, hi: usize) -> Vec<f64> {
    (lo..=hi).map(|i| i as f64 / 10.0).collect()
}

/// Every other value, always keeping the last.
fn thin(v: &[f64]) -> Vec<f64> {
    let keep = (v.len() + 1) % 2;
    v.iter().enumerate().filter(|(i, _)| i % 2 == keep).map(|(_, &x)| x).collect()
}

/// `r` in {0.1, ..., 1}, `alpha_1` in {0.1, ..., 0.9}, `m/n` in {0.1, ..., 2}:
/// 1800 points plus the baseline. Both studies share the grid.
pub fn default_grid(_task: Task) -> GridSpec {
    GridSpec {
        r_values: tenths(1, 10),
        alpha1_values: tenths(1, 9),
        alpha_vectors: Vec::new(),
        m_over_n_values: tenths(1, 20),
        include_baseline: true,
    }
}

/// A single point of the grid with its realized synthetic count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: Vec<f64>,
    pub m_over_n: f64,
    pub m: usize,
    pub r: f64,
    /// Perturbation size, for oversamplers that take one.
    #[serde(default)]
    pub sigma: Option<f64>,
}

impl GridPoint {
    pub fn is_baseline(&self) -> bool {
        self.m == 0 && self.r == 0.0
    }
}

impl GridSpec {
    /// Every other value along each axis (the last value is always kept).
    pub fn coarse(&self) -> GridSpec {
        GridSpec {
            r_values: thin(&self.r_values),
            alpha1_values: thin(&self.alpha1_values),
            alpha_vectors: self.alpha_vectors.iter().step_by(2).cloned().collect(),
            m_over_n_values: thin(&self.m_over_n_values),
            include_baseline: self.include_baseline,
        }
    }

    pub fn alphas(&self) -> Vec<Vec<f64>> {
        if self.alpha_vectors.is_empty() {
            self.alpha1_values.iter().map(|&a| vec![a, 1.0 - a]).collect()
        } else {
            self.alpha_vectors.clone()
        }
    }

    pub fn validate(&self, n_regions: usize) -> Result<()> {
        if self.r_values.is_empty() || self.m_over_n_values.is_empty() || self.alphas().is_empty() {
            return Err(Error::config("grid axes must be non-empty"));
        }
        if let Some(r) = self.r_values.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::config(format!("grid split ratio {r} outside [0, 1]")));
        }
        if let Some(v) = self.m_over_n_values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::config(format!("grid m/n value {v} is not a non-negative number")));
        }
        if self.alpha_vectors.is_empty() && n_regions != 2 {
            return Err(Error::config(format!("alpha1_values only describe two regions; {n_regions} need alpha_vectors")));
        }
        for a in self.alphas() {
            crate::allocation::check_simplex(&a, n_regions)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.r_values.len() * self.alphas().len() * self.m_over_n_values.len() + usize::from(self.include_baseline)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points for a training set of `n` rows with region proportions
    /// `p`; the baseline (when included) comes last.
    pub fn points(&self, n: usize, p: &[f64]) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &r in &self.r_values {
            for alpha in self.alphas() {
                for &mn in &self.m_over_n_values {
                    out.push(GridPoint { alpha: alpha.clone(), m_over_n: mn, m: synthetic_count(mn, n), r, sigma: None });
                }
            }
        }
        if self.include_baseline {
            out.push(GridPoint { alpha: p.to_vec(), m_over_n: 0.0, m: 0, r: 0.0, sigma: None });
        }
        out
    }
}

/// `round(ratio * n)`.
pub fn synthetic_count(m_over_n: f64, n: usize) -> usize {
    (m_over_n * n as f64).round() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point: GridPoint,
    pub validation: RegionMetric,
    pub test: RegionMetric,
    pub report: IndexReport,
}

impl PointResult {
    fn objective(&self) -> f64 {
        self.validation.overall.filter(|v| v.is_finite()).unwrap_or(f64::INFINITY)
    }
}

/// Index of the point with the lowest overall validation metric. Ties go to
/// the smaller `m`, then the smaller `r`, then `alpha_1` closest to `q1`.
pub fn best_index(results: &[PointResult], q1: f64) -> Result<usize> {
    if results.is_empty() {
        return Err(Error::config("empty grid"));
    }
    let key = |p: &PointResult| (p.objective(), p.point.m, p.point.r, (p.point.alpha[0] - q1).abs());
    let mut best = 0;
    for i in 1..results.len() {
        let (a, b) = (key(&results[i]), key(&results[best]));
        let better = a.0 < b.0
            || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && (a.2 < b.2 || (a.2 == b.2 && a.3 < b.3)))));
        if better {
            best = i;
        }
    }
    Ok(best)
}

fn q_of(opts: &CodsaOptions, n_regions: usize) -> Vec<f64> {
    opts.q.clone().unwrap_or_else(|| uniform_weights(n_regions))
}

fn max_counts(points: &[&GridPoint], n_regions: usize) -> Vec<usize> {
    let mut out = vec![0; n_regions];
    for p in points {
        for (o, c) in out.iter_mut().zip(largest_remainder(&p.alpha, p.m)) {
            *o = (*o).max(c);
        }
    }
    out
}

/// Validation and test metrics of every grid point on one replicate. The
/// generator at each `r` is fitted once; with `cache` its synthetic rows are
/// drawn once per region and shared by prefix. Results follow
/// [`GridSpec::points`] order.
pub fn evaluate_codsa_grid(
    split: &EvalSplit,
    grid: &GridSpec,
    opts: &CodsaOptions,
    transfer: Option<&AutoencoderModel>,
    seed: SeedStream,
    cache: bool,
) -> Result<Vec<PointResult>> {
    let train = &split.train;
    let k = train.n_regions();
    grid.validate(k)?;
    let n = train.len();
    let p = region_proportions(train);
    let q = q_of(opts, k);
    let points = grid.points(n, &p);
    let ratios: Vec<f64> = grid.r_values.clone();

    let by_ratio: Vec<Vec<PointResult>> = ratios
        .par_iter()
        .map(|&r| {
            let members: Vec<&GridPoint> = points.iter().filter(|pt| !pt.is_baseline() && pt.r == r).collect();
            let ctx = SplitContext::prepare(train, r, &max_counts(&members, k), &opts.generator, transfer, context_seed(seed, r), cache)?;
            let tau = match (&ctx.generator, opts.tau_samples) {
                (Some(g), s) if s > 0 => estimate_tau(g, &ctx.z_r, s, context_seed(seed, r).child("tau"))?,
                _ => vec![None; k],
            };
            members
                .par_iter()
                .map(|pt| {
                    let est = ctx.fit(&pt.alpha, pt.m, &split.validation, &opts.estimator, seed)?;
                    Ok(PointResult {
                        point: (*pt).clone(),
                        validation: est.evaluate(&split.validation)?,
                        test: est.evaluate(&split.test)?,
                        report: IndexReport::new(&pt.alpha, pt.m, &p, n, r, &q, tau.clone())?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out: Vec<PointResult> = by_ratio.into_iter().flatten().collect();
    if grid.include_baseline {
        let base = points.last().expect("baseline point").clone();
        let est = fit_baseline(train, &split.validation, &opts.estimator, seed)?;
        out.push(PointResult {
            validation: est.evaluate(&split.validation)?,
            test: est.evaluate(&split.test)?,
            report: IndexReport::new(&base.alpha, 0, &p, n, 0.0, &q, vec![None; k])?,
            point: base,
        });
    }
    Ok(out)
}

/// Cross-fitted counterpart of [`evaluate_codsa_grid`]: `r` is fixed by the
/// fold count and the grid's `r_values` and baseline are ignored.
pub fn evaluate_crossfit_grid(
    split: &EvalSplit,
    grid: &GridSpec,
    k_folds: usize,
    opts: &CodsaOptions,
    transfer: Option<&AutoencoderModel>,
    seed: SeedStream,
    cache: bool,
) -> Result<Vec<PointResult>> {
    let train = &split.train;
    let k = train.n_regions();
    let r = implied_ratio(k_folds);
    let fixed = GridSpec { r_values: vec![r], include_baseline: false, ..grid.clone() };
    fixed.validate(k)?;
    let n = train.len();
    let p = region_proportions(train);
    let q = q_of(opts, k);
    let points = fixed.points(n, &p);
    let refs: Vec<&GridPoint> = points.iter().collect();
    let folds = FoldContexts::prepare(train, k_folds, &max_counts(&refs, k), opts, transfer, context_seed(seed, r), cache)?;
    points
        .par_iter()
        .map(|pt| {
            let model: CrossFitModel = folds.fit(&pt.alpha, pt.m, &split.validation, opts)?;
            Ok(PointResult {
                point: pt.clone(),
                validation: model.evaluate(&split.validation)?,
                test: model.evaluate(&split.test)?,
                report: IndexReport::new(&pt.alpha, pt.m, &p, n, r, &q, vec![None; k])?,
            })
        })
        .collect()
}

/// Per-replicate grid with the selected point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub seed: u64,
    pub results: Vec<PointResult>,
    pub best: usize,
}

impl ReplicateOutcome {
    pub fn new(seed: u64, results: Vec<PointResult>, q1: f64) -> Result<Self> {
        let best = best_index(&results, q1)?;
        Ok(ReplicateOutcome { seed, results, best })
    }

    pub fn selected(&self) -> &PointResult {
        &self.results[self.best]
    }
}

/// Mean and standard error across replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub per_region: Vec<Option<Summary>>,
    pub overall: Option<Summary>,
    pub seeds: usize,
}

fn summarize(values: &[Option<f64>]) -> Result<Option<Summary>> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Ok(None);
    }
    let (mean, se) = aggregate_replicates(&present)?;
    Ok(Some(Summary { mean, se }))
}

/// Mean/SE of per-replicate metrics.
pub fn summarize_metrics(metrics: &[&RegionMetric]) -> Result<MetricSummary> {
    let k = metrics.iter().map(|m| m.per_region.len()).max().unwrap_or(0);
    let per_region = (1..=k)
        .map(|r| summarize(&metrics.iter().map(|m| m.region(r)).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let overall = summarize(&metrics.iter().map(|m| m.overall).collect::<Vec<_>>())?;
    Ok(MetricSummary { per_region, overall, seeds: metrics.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub replicates: Vec<ReplicateOutcome>,
    /// Test metric at the selected point.
    pub test: MetricSummary,
}

impl TuneResult {
    pub fn from_replicates(replicates: Vec<ReplicateOutcome>) -> Result<Self> {
        let tests: Vec<&RegionMetric> = replicates.iter().map(|r| &r.selected().test).collect();
        let test = summarize_metrics(&tests)?;
        Ok(TuneResult { replicates, test })
    }
}

/// One replicate of the tuning protocol.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub seed: u64,
    pub split: EvalSplit,
}

/// Evaluates the grid on every replicate, picks the validation minimizer and
/// aggregates its test metric. Replicate `i` uses stream
/// `SeedStream::new(seed_i).child("tuner")`.
pub fn tune(
    replicates: &[Replicate],
    grid: &GridSpec,
    opts: &CodsaOptions,
    transfer: Option<&AutoencoderModel>,
    cache: bool,
) -> Result<TuneResult> {
    if grid.is_empty() || replicates.is_empty() {
        return Err(Error::config("empty grid or no replicates"));
    }
    let outcomes = replicates
        .iter()
        .map(|rep| {
            let k = rep.split.train.n_regions();
            let q1 = q_of(opts, k)[0];
            let results =
                evaluate_codsa_grid(&rep.split, grid, opts, transfer, SeedStream::new(rep.seed).child("tuner"), cache)?;
            ReplicateOutcome::new(rep.seed, results, q1)
        })
        .collect::<Result<Vec<_>>>()?;
    TuneResult::from_replicates(outcomes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    MOverN,
    Alpha1,
    R,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::MOverN => "m_over_n",
            SweepParam::Alpha1 => "alpha1",
            SweepParam::R => "r",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "m_over_n" => Ok(SweepParam::MOverN),
            "alpha1" => Ok(SweepParam::Alpha1),
            "r" => Ok(SweepParam::R),
            _ => Err(Error::config(format!("unknown sweep parameter `{s}` (expected m_over_n, alpha1 or r)"))),
        }
    }

    pub fn value(&self, p: &GridPoint) -> f64 {
        match self {
            SweepParam::MOverN => p.m_over_n,
            SweepParam::Alpha1 => p.alpha[0],
            SweepParam::R => p.r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub test: Summary,
    pub validation: Summary,
    pub seeds: usize,
}

/// For each value of `param`, the other two coordinates are chosen on
/// validation per replicate; the resulting test metrics are aggregated.
/// The baseline point is excluded.
pub fn marginal_sweep(replicates: &[ReplicateOutcome], param: SweepParam, q1: f64) -> Result<Vec<SweepRow>> {
    let mut values: Vec<f64> = replicates
        .iter()
        .flat_map(|r| r.results.iter().filter(|p| !p.point.is_baseline()).map(|p| param.value(&p.point)))
        .collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
        .into_iter()
        .map(|v| {
            let mut tests = Vec::new();
            let mut vals = Vec::new();
            for rep in replicates {
                let slice: Vec<PointResult> = rep
                    .results
                    .iter()
                    .filter(|p| !p.point.is_baseline() && param.value(&p.point) == v)
                    .cloned()
                    .collect();
                if slice.is_empty() {
                    continue;
                }
                let best = &slice[best_index(&slice, q1)?];
                tests.push(best.test.overall);
                vals.push(best.validation.overall);
            }
            let test = summarize(&tests)?.ok_or_else(|| Error::Undefined(format!("no test metric at {} = {v}", param.name())))?;
            let validation =
                summarize(&vals)?.ok_or_else(|| Error::Undefined(format!("no validation metric at {} = {v}", param.name())))?;
            Ok(SweepRow { param, value: v, test, validation, seeds: tests.len() })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// `tuning_table.csv`: one row per (replicate, grid point).
pub fn write_tuning_table<W: Write>(out: W, method: &str, replicates: &[ReplicateOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method", "seed", "alpha", "m_over_n", "m", "r", "sigma", "validation", "test", "test_by_region", "d", "g", "selected",
    ])?;
    for rep in replicates {
        for (i, res) in rep.results.iter().enumerate() {
            let by_region: Vec<String> = res.test.per_region.iter().map(|v| fmt_opt(*v)).collect();
            w.write_record([
                method.to_string(),
                rep.seed.to_string(),
                join(&res.point.alpha),
                res.point.m_over_n.to_string(),
                res.point.m.to_string(),
                res.point.r.to_string(),
                fmt_opt(res.point.sigma),
                fmt_opt(res.validation.overall),
                fmt_opt(res.test.overall),
                by_region.join(";"),
                res.report.d.to_string(),
                fmt_opt(res.report.g),
                u8::from(i == rep.best).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `sweep_<param>.csv`.
pub fn write_sweep<W: Write>(out: W, method: &str, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "param", "value", "test_mean", "test_se", "validation_mean", "seeds"])?;
    for row in rows {
        w.write_record([
            method.to_string(),
            row.param.name().to_string(),
            row.value.to_string(),
            row.test.mean.to_string(),
            row.test.se.to_string(),
            row.validation.mean.to_string(),
            row.seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(val: f64, alpha1: f64, m: usize, r: f64) -> PointResult {
        let metric = RegionMetric { per_region: vec![Some(val), Some(val)], overall: Some(val) };
        PointResult {
            point: GridPoint { alpha: vec![alpha1, 1.0 - alpha1], m_over_n: m as f64 / 100.0, m, r, sigma: None },
            validation: metric.clone(),
            test: metric,
            report: IndexReport { d: 0.0, g: None, alpha_tilde: vec![0.5, 0.5], tau_hat: vec![None, None] },
        }
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid(Task::Classification);
        assert_eq!(g.len(), 1801);
        assert_eq!(*g.r_values.last().unwrap(), 1.0);
        assert!(g.alpha1_values.iter().all(|&a| a > 0.0 && a < 1.0));
        assert_eq!(g.m_over_n_values.len(), 20);
        assert_eq!(g.points(1000, &[0.3, 0.7]).len(), 1801);
        let c = g.coarse();
        assert_eq!(c.r_values, vec![0.2, 0.4, 0.6, 0.8, 1.0]);
        assert_eq!(c.alpha1_values, vec![0.1, 0.3, 0.5, 0.7, 0.9]);
        assert_eq!(c.m_over_n_values.len(), 10);
        assert_eq!(*c.m_over_n_values.last().unwrap(), 2.0);
        g.validate(2).unwrap();
        assert!(g.validate(3).is_err());
    }

    #[test]
    fn tie_breaking() {
        let rs = vec![result(0.5, 0.5, 10, 0.5), result(0.5, 0.5, 5, 0.7), result(0.5, 0.7, 5, 0.3), result(0.5, 0.6, 5, 0.3)];
        assert_eq!(best_index(&rs, 0.5).unwrap(), 3);
        let rs = vec![result(0.4, 0.9, 100, 1.0), result(0.5, 0.5, 0, 0.0)];
        assert_eq!(best_index(&rs, 0.5).unwrap(), 0);
        let mut nan = result(f64::NAN, 0.5, 0, 0.0);
        nan.validation.overall = None;
        assert_eq!(best_index(&[nan, result(9.0, 0.5, 50, 0.5)], 0.5).unwrap(), 1);
        assert!(best_index(&[], 0.5).is_err());
    }

    #[test]
    fn sweep_picks_best_of_the_rest() {
        let rep = |seed, shift: f64| {
            ReplicateOutcome::new(
                seed,
                vec![
                    result(0.3 + shift, 0.5, 10, 0.5),
                    result(0.2 + shift, 0.5, 20, 0.5),
                    result(0.4 + shift, 0.9, 10, 0.5),
                    result(0.1, 0.3, 0, 0.0),
                ],
                0.5,
            )
            .unwrap()
        };
        let reps = vec![rep(1, 0.0), rep(2, 0.2)];
        let rows = marginal_sweep(&reps, SweepParam::Alpha1, 0.5).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].value, 0.5);
        assert!((rows[0].test.mean - 0.3).abs() < 1e-12);
        assert!((rows[0].test.se - 0.1).abs() < 1e-12);
        assert!((rows[1].test.mean - 0.5).abs() < 1e-12);
        let by_m = marginal_sweep(&reps, SweepParam::MOverN, 0.5).unwrap();
        assert_eq!(by_m.iter().map(|r| r.value).collect::<Vec<_>>(), vec![0.1, 0.2]);
        assert_eq!(reps[0].best, 3);
    }

    #[test]
    fn tables_are_plain_csv() {
        let reps = vec![ReplicateOutcome::new(7, vec![result(0.3, 0.5, 10, 0.5), result(0.2, 0.6, 20, 0.4)], 0.5).unwrap()];
        let mut buf = Vec::new();
        write_tuning_table(&mut buf, "codsa", &reps).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], "codsa,7,0.6;0.4,0.2,20,0.4,,0.2,0.2,0.2;0.2,0,,1");
        assert!(SweepParam::parse("gamma").is_err());
        assert_eq!(SweepParam::parse("m_over_n").unwrap(), SweepParam::MOverN);
    }
}
