//! Tabular samples with a region partition, provenance flags and CSV I/O.
//!
//! CSV layout: header `f0,...,f{d-1}[,y],region[,provenance]`. Regions are
//! 1-based. A `y` column whose cells are all plain integers is read as class
//! labels; continuous targets are always written with a decimal point or an
//! exponent so they survive the round trip as continuous.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

impl Provenance {
    fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    None,
    Continuous(Array1<f64>),
    Class(Vec<u32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    None,
    Continuous,
    Class,
}

impl Target {
    pub fn kind(&self) -> TargetKind {
        match self {
            Target::None => TargetKind::None,
            Target::Continuous(_) => TargetKind::Continuous,
            Target::Class(_) => TargetKind::Class,
        }
    }

    fn len(&self) -> Option<usize> {
        match self {
            Target::None => None,
            Target::Continuous(v) => Some(v.len()),
            Target::Class(v) => Some(v.len()),
        }
    }

    fn select(&self, rows: &[usize]) -> Target {
        match self {
            Target::None => Target::None,
            Target::Continuous(v) => Target::Continuous(rows.iter().map(|&i| v[i]).collect()),
            Target::Class(v) => Target::Class(rows.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Column count, target kind and region count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub n_features: usize,
    pub target: TargetKind,
    pub n_regions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    target: Target,
    region: Vec<usize>,
    provenance: Vec<Provenance>,
    n_regions: usize,
}

impl Dataset {
    /// Real-provenance dataset.
    pub fn new(features: Array2<f64>, target: Target, region: Vec<usize>, n_regions: usize) -> Result<Self> {
        let n = features.nrows();
        Self::with_provenance(features, target, region, vec![Provenance::Real; n], n_regions)
    }

    pub fn with_provenance(
        features: Array2<f64>,
        target: Target,
        region: Vec<usize>,
        provenance: Vec<Provenance>,
        n_regions: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if region.len() != n || provenance.len() != n || target.len().is_some_and(|l| l != n) {
            return Err(Error::dim("feature, target, region and provenance lengths differ"));
        }
        if n_regions == 0 {
            return Err(Error::config("at least one region is required"));
        }
        if let Some(&k) = region.iter().find(|&&k| k == 0 || k > n_regions) {
            return Err(Error::config(format!("region index {k} outside 1..={n_regions}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("features must be finite"));
        }
        if let Target::Continuous(y) = &target {
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("targets must be finite"));
            }
        }
        Ok(Dataset { features, target, region, provenance, n_regions })
    }

    pub fn empty(schema: Schema) -> Self {
        let target = match schema.target {
            TargetKind::None => Target::None,
            TargetKind::Continuous => Target::Continuous(Array1::zeros(0)),
            TargetKind::Class => Target::Class(Vec::new()),
        };
        Dataset {
            features: Array2::zeros((0, schema.n_features)),
            target,
            region: Vec::new(),
            provenance: Vec::new(),
            n_regions: schema.n_regions,
        }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn schema(&self) -> Schema {
        Schema { n_features: self.n_features(), target: self.target.kind(), n_regions: self.n_regions }
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn regions(&self) -> &[usize] {
        &self.region
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Continuous target, or an error for other target kinds.
    pub fn continuous_target(&self) -> Result<&Array1<f64>> {
        match &self.target {
            Target::Continuous(y) => Ok(y),
            _ => Err(Error::Schema("a continuous target is required".into())),
        }
    }

    pub fn class_target(&self) -> Result<&[u32]> {
        match &self.target {
            Target::Class(y) => Ok(y),
            _ => Err(Error::Schema("a class target is required".into())),
        }
    }

    /// Rows of region `k` (1-based), in order.
    pub fn region_rows(&self, k: usize) -> Vec<usize> {
        self.region.iter().enumerate().filter(|(_, &r)| r == k).map(|(i, _)| i).collect()
    }

    pub fn region_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_regions];
        for &k in &self.region {
            counts[k - 1] += 1;
        }
        counts
    }

    pub fn count_provenance(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&q| q == p).count()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            target: self.target.select(rows),
            region: rows.iter().map(|&i| self.region[i]).collect(),
            provenance: rows.iter().map(|&i| self.provenance[i]).collect(),
            n_regions: self.n_regions,
        }
    }

    pub fn head(&self, n: usize) -> Dataset {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&rows)
    }

    /// Stable concatenation; both parts must share a schema.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.schema() != other.schema() {
            return Err(Error::Schema(format!("{:?} vs {:?}", self.schema(), other.schema())));
        }
        let features = ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
            .map_err(|e| Error::dim(e.to_string()))?;
        let target = match (&self.target, &other.target) {
            (Target::None, Target::None) => Target::None,
            (Target::Continuous(a), Target::Continuous(b)) => {
                Target::Continuous(a.iter().chain(b.iter()).copied().collect())
            }
            (Target::Class(a), Target::Class(b)) => Target::Class(a.iter().chain(b).copied().collect()),
            _ => unreachable!("schema equality implies target kind equality"),
        };
        Ok(Dataset {
            features,
            target,
            region: self.region.iter().chain(&other.region).copied().collect(),
            provenance: self.provenance.iter().chain(&other.provenance).copied().collect(),
            n_regions: self.n_regions,
        })
    }

    pub fn mark_synthetic(mut self) -> Dataset {
        self.provenance.iter_mut().for_each(|p| *p = Provenance::Synthetic);
        self
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
        let layout = CsvLayout::from_header(&headers)?;

        let mut feats: Vec<f64> = Vec::new();
        let mut y_text: Vec<String> = Vec::new();
        let mut region = Vec::new();
        let mut provenance = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != headers.len() {
                return Err(Error::Parse { line, msg: format!("expected {} cells, found {}", headers.len(), rec.len()) });
            }
            for j in 0..layout.n_features {
                feats.push(parse_f64(&rec[j], line)?);
            }
            if let Some(c) = layout.y {
                parse_f64(&rec[c], line)?;
                y_text.push(rec[c].trim().to_string());
            }
            let k: usize = rec[layout.region]
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("region '{}' is not a positive integer", &rec[layout.region]) })?;
            if k == 0 {
                return Err(Error::Parse { line, msg: "regions are 1-based".into() });
            }
            region.push(k);
            provenance.push(match layout.provenance {
                None => Provenance::Real,
                Some(c) => match rec[c].trim() {
                    "real" => Provenance::Real,
                    "synthetic" => Provenance::Synthetic,
                    other => return Err(Error::Parse { line, msg: format!("unknown provenance '{other}'") }),
                },
            });
        }
        let n = region.len();
        let features = Array2::from_shape_vec((n, layout.n_features), feats).map_err(|e| Error::dim(e.to_string()))?;
        let target = if layout.y.is_none() {
            Target::None
        } else if y_text.iter().all(|s| is_plain_integer(s)) && !y_text.is_empty() {
            Target::Class(y_text.iter().map(|s| s.parse().expect("checked integer")).collect())
        } else {
            Target::Continuous(y_text.iter().map(|s| s.parse().expect("checked float")).collect())
        };
        let n_regions = region.iter().copied().max().unwrap_or(1);
        Dataset::with_provenance(features, target, region, provenance, n_regions)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv_writer(file)
    }

    pub fn to_csv_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.n_features()).map(|j| format!("f{j}")).collect();
        if self.target.kind() != TargetKind::None {
            header.push("y".into());
        }
        header.push("region".into());
        header.push("provenance".into());
        w.write_record(&header).map_err(csv_io)?;
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            rec.clear();
            rec.extend(self.features.row(i).iter().map(|v| fmt_f64(*v)));
            match &self.target {
                Target::None => {}
                Target::Continuous(y) => rec.push(fmt_f64(y[i])),
                Target::Class(y) => rec.push(y[i].to_string()),
            }
            rec.push(self.region[i].to_string());
            rec.push(self.provenance[i].as_str().to_string());
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Shortest round-trip representation; always contains `.` or an exponent.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn is_plain_integer(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

fn parse_f64(cell: &str, line: u64) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("'{cell}' is not a number") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("'{cell}' is not finite") });
    }
    Ok(v)
}

struct CsvLayout {
    n_features: usize,
    y: Option<usize>,
    region: usize,
    provenance: Option<usize>,
}

impl CsvLayout {
    fn from_header(h: &csv::StringRecord) -> Result<Self> {
        let mut n_features = 0;
        let mut y = None;
        let mut region = None;
        let mut provenance = None;
        for (c, name) in h.iter().enumerate() {
            let name = name.trim();
            if name == format!("f{n_features}") && y.is_none() && region.is_none() {
                n_features += 1;
            } else if name == "y" && y.is_none() && region.is_none() {
                y = Some(c);
            } else if name == "region" && region.is_none() {
                region = Some(c);
            } else if name == "provenance" && region.is_some() && provenance.is_none() {
                provenance = Some(c);
            } else {
                return Err(Error::Parse { line: 1, msg: format!("unexpected column '{name}'") });
            }
        }
        let region = region.ok_or_else(|| Error::Parse { line: 1, msg: "missing 'region' column".into() })?;
        Ok(CsvLayout { n_features, y, region, provenance })
    }
}

/// Per-region counts `n_k` and proportions `p_k = n_k / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub counts: Vec<usize>,
    pub proportions: Vec<f64>,
}

pub fn region_stats(data: &Dataset) -> Result<RegionStats> {
    if data.is_empty() {
        return Err(Error::Undefined("region proportions of an empty dataset".into()));
    }
    let counts = data.region_counts();
    let n = data.len() as f64;
    let proportions = counts.iter().map(|&c| c as f64 / n).collect();
    Ok(RegionStats { counts, proportions })
}

/// Generator-training part `Z_g` and reserved part `Z_r`.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub generator_part: Dataset,
    pub reserved_part: Dataset,
}

/// `floor(r * n)` with a guard against representation error such as
/// `0.7 * 10 = 7.000000000000001` or `0.29 * 100 = 28.999999999999996`.
pub fn floor_fraction(r: f64, n: usize) -> usize {
    let x = r * n as f64;
    let rounded = x.round();
    if (x - rounded).abs() < 1e-9 * (1.0 + x.abs()) {
        rounded as usize
    } else {
        x.floor() as usize
    }
}

/// Per-region split sending `floor(r * n_k)` rows of every region to `Z_g`.
/// Both parts keep the parent's row order.
pub fn stratified_split(data: &Dataset, r: f64, seed: SeedStream) -> Result<SplitResult> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::config(format!("split ratio {r} outside [0, 1]")));
    }
    let mut in_gen = vec![false; data.len()];
    for k in 1..=data.n_regions() {
        let mut rows = data.region_rows(k);
        let take = floor_fraction(r, rows.len());
        rows.shuffle(&mut seed.index(k as u64).rng());
        for &i in &rows[..take] {
            in_gen[i] = true;
        }
    }
    let (g, rest): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| in_gen[i]);
    Ok(SplitResult { generator_part: data.select(&g), reserved_part: data.select(&rest) })
}

/// `Z_r` plus synthetic rows, real rows first.
#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    data: Dataset,
    n_real: usize,
}

impl AugmentedDataset {
    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn into_inner(self) -> Dataset {
        self.data
    }

    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn n_synthetic(&self) -> usize {
        self.data.len() - self.n_real
    }
}

impl std::ops::Deref for AugmentedDataset {
    type Target = Dataset;

    fn deref(&self) -> &Dataset {
        &self.data
    }
}

pub fn mix(reserved: &Dataset, synthetic: &Dataset) -> Result<AugmentedDataset> {
    let data = reserved.concat(synthetic)?;
    Ok(AugmentedDataset { data, n_real: reserved.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::collections::HashSet;

    fn toy(counts: &[usize]) -> Dataset {
        let n: usize = counts.iter().sum();
        let mut region = Vec::new();
        for (k, &c) in counts.iter().enumerate() {
            region.extend(std::iter::repeat(k + 1).take(c));
        }
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let y = Target::Continuous((0..n).map(|i| i as f64 * 0.5).collect());
        Dataset::new(features, y, region, counts.len()).unwrap()
    }

    #[test]
    fn split_extremes() {
        let d = toy(&[6, 4]);
        let s = stratified_split(&d, 1.0, SeedStream::new(1)).unwrap();
        assert!(s.reserved_part.is_empty());
        assert_eq!(s.generator_part, d);
        let s = stratified_split(&d, 0.0, SeedStream::new(1)).unwrap();
        assert!(s.generator_part.is_empty());
        assert_eq!(s.reserved_part, d);
    }

    #[test]
    fn split_floors_per_region() {
        let d = toy(&[6, 4]);
        let s = stratified_split(&d, 0.5, SeedStream::new(3)).unwrap();
        assert_eq!(s.generator_part.region_counts(), vec![3, 2]);
        assert_eq!(s.reserved_part.region_counts(), vec![3, 2]);
        let d = toy(&[7, 5]);
        let s = stratified_split(&d, 0.5, SeedStream::new(3)).unwrap();
        assert_eq!(s.generator_part.region_counts(), vec![3, 2]);
        assert!(stratified_split(&d, 1.5, SeedStream::new(3)).is_err());
    }

    #[test]
    fn split_is_disjoint_cover_and_deterministic() {
        let d = toy(&[13, 29]);
        let a = stratified_split(&d, 0.37, SeedStream::new(5)).unwrap();
        let b = stratified_split(&d, 0.37, SeedStream::new(5)).unwrap();
        assert_eq!(a.generator_part, b.generator_part);
        let ids = |x: &Dataset| -> HashSet<u64> { x.features().column(0).iter().map(|v| *v as u64).collect() };
        let (g, r) = (ids(&a.generator_part), ids(&a.reserved_part));
        assert!(g.is_disjoint(&r));
        assert_eq!(g.len() + r.len(), d.len());
    }

    #[test]
    fn floor_fraction_guards_representation_error() {
        assert_eq!(floor_fraction(0.7, 10), 7);
        assert_eq!(floor_fraction(0.29, 100), 29);
        assert_eq!(floor_fraction(0.5, 7), 3);
        assert_eq!(floor_fraction(1.0, 7), 7);
    }

    #[test]
    fn stats() {
        let d = toy(&[1400, 3800]);
        let s = region_stats(&d).unwrap();
        assert_eq!(s.counts, vec![1400, 3800]);
        assert!((s.proportions[0] - 1400.0 / 5200.0).abs() < 1e-15);
        assert!((s.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let single = toy(&[5]);
        assert_eq!(region_stats(&single).unwrap().proportions, vec![1.0]);
        let empty = Dataset::empty(d.schema());
        assert!(matches!(region_stats(&empty), Err(Error::Undefined(_))));
    }

    #[test]
    fn mix_preserves_order_and_provenance() {
        let real = toy(&[60, 40]);
        let synth = toy(&[150, 100]).mark_synthetic();
        let z = mix(&real, &synth).unwrap();
        assert_eq!(z.len(), 350);
        assert_eq!(z.count_provenance(Provenance::Real), 100);
        assert_eq!(z.count_provenance(Provenance::Synthetic), 250);
        assert_eq!(z.data().select(&(0..100).collect::<Vec<_>>()), real);
        let z = mix(&real, &Dataset::empty(real.schema())).unwrap();
        assert_eq!(*z.data(), real);
        let other = Dataset::new(Array2::zeros((1, 3)), Target::None, vec![1], 2).unwrap();
        assert!(matches!(mix(&real, &other), Err(Error::Schema(_))));
    }

    #[test]
    fn csv_round_trip() {
        let mut d = toy(&[3, 2]);
        d.features[[0, 1]] = 0.1 + 0.2;
        d.features[[1, 0]] = -1.5e-300;
        d.provenance[4] = Provenance::Synthetic;
        let mut buf = Vec::new();
        d.to_csv_writer(&mut buf).unwrap();
        let back = Dataset::from_csv_reader(&buf[..]).unwrap();
        assert_eq!(back, d);

        let c = Dataset::new(array![[1.0], [2.0]], Target::Class(vec![0, 1]), vec![1, 2], 2).unwrap();
        let mut buf = Vec::new();
        c.to_csv_writer(&mut buf).unwrap();
        assert_eq!(Dataset::from_csv_reader(&buf[..]).unwrap(), c);
    }

    #[test]
    fn csv_fixture_matches_hand_built() {
        let text = "f0,f1,y,region\n1.5,2,3.25,1\n-4,0.5,1e-3,2\n7,8,9.0,2\n";
        let got = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        let want = Dataset::new(
            array![[1.5, 2.0], [-4.0, 0.5], [7.0, 8.0]],
            Target::Continuous(array![3.25, 1e-3, 9.0]),
            vec![1, 2, 2],
            2,
        )
        .unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn csv_errors() {
        let missing = "f0,f1,y\n1,2,3\n";
        assert!(matches!(Dataset::from_csv_reader(missing.as_bytes()), Err(Error::Parse { .. })));
        let bad = "f0,region\n1,1\nabc,2\n";
        match Dataset::from_csv_reader(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let unknown = "f0,z,region\n1,2,1\n";
        assert!(Dataset::from_csv_reader(unknown.as_bytes()).is_err());
        let zero_region = "f0,region\n1,0\n";
        assert!(Dataset::from_csv_reader(zero_region.as_bytes()).is_err());
    }
}
