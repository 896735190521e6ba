//! Subcommands of the `codsa` binary.
//!
//! Every command reads one strict JSON config, writes its outputs plus a
//! `manifest.json` into the output directory, and never touches its inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use codsa_core::codsa::{allocate_optimal, estimate_tau, region_proportions, reserved_count, uniform_weights, IndexReport};
use codsa_core::dataset::Dataset;
use codsa_core::experiment::{
    make_replicate, make_replicates, pretrain_source, pretraining_ablation, resolve_transfer, run_methods,
    selected_generator, write_ablation, write_results, DataSpec, ExperimentConfig, Method, TransferSpec,
};
use codsa_core::generator::{AutoencoderConfig, GeneratorModel};
use codsa_core::rng::SeedStream;
use codsa_core::tuner::{marginal_sweep, write_sweep, write_tuning_table, SweepParam, Task};

/// Output-root environment variable.
pub const OUT_ENV: &str = "CODSA_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Pretrain,
    Run,
    Sweep,
    Diagnose,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Pretrain => "pretrain",
            Command::Run => "run",
            Command::Sweep => "sweep",
            Command::Diagnose => "diagnose",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    pub config: PathBuf,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub dry_run: bool,
    /// Sweep only: restrict to one parameter.
    pub param: Option<SweepParam>,
}

/// What a command wrote (empty on a dry run).
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub plan: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub task: Task,
    #[serde(default)]
    pub data: DataSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub task: Task,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub transfer: TransferSpec,
    pub autoencoder: AutoencoderConfig,
    /// Write one checkpoint per size instead of one at `transfer.source_size`.
    #[serde(default)]
    pub source_sizes: Vec<usize>,
}

fn default_sigma() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Training CSV; gives `n` and the region proportions `p`.
    pub train: PathBuf,
    /// Allocation; the zero-shift allocation for `q` when absent.
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    pub m: usize,
    pub r: f64,
    /// Evaluation weights; uniform when absent.
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    /// Generator checkpoint for the per-region error estimate.
    #[serde(default)]
    pub generator: Option<PathBuf>,
    /// Real rows the generator never saw.
    #[serde(default)]
    pub holdout: Option<PathBuf>,
    #[serde(default = "default_tau_samples")]
    pub tau_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_tau_samples() -> usize {
    500
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    config: &'a C,
    seeds: Vec<u64>,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct Diagnosis {
    alpha: Vec<f64>,
    m: usize,
    r: f64,
    n: usize,
    n_reserved: usize,
    p: Vec<f64>,
    q: Vec<f64>,
    report: IndexReport,
}

#[derive(Debug, Serialize)]
struct SelectedReport<'a> {
    method: &'a str,
    seed: u64,
    alpha: &'a [f64],
    m: usize,
    r: f64,
    sigma: Option<f64>,
    validation: Option<f64>,
    test: Option<f64>,
    report: &'a IndexReport,
}

fn read_config<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Paths in a config are relative to the config file.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Outputs { dir: dir.to_path_buf(), files: BTreeMap::new(), written: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        self.written.push(path);
        Ok(())
    }

    fn finish<C: Serialize>(mut self, command: Command, config: &C, seeds: Vec<u64>) -> Result<Report> {
        let canonical = serde_json::to_vec(config)?;
        let manifest = Manifest {
            command: command.name(),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: sha256_hex(&canonical),
            config,
            seeds,
            files: std::mem::take(&mut self.files),
        };
        let text = serde_json::to_vec_pretty(&manifest)?;
        let path = self.dir.join("manifest.json");
        fs::write(&path, text)?;
        self.written.push(path);
        Ok(Report { files: self.written, plan: String::new() })
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> codsa_core::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn dataset_bytes(d: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    d.to_csv_writer(&mut buf)?;
    Ok(buf)
}

/// Runs `command` inside a pool of `opts.workers` threads.
pub fn execute(command: Command, opts: &Options) -> Result<Report> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("cannot start worker pool")?;
    pool.install(|| match command {
        Command::Simulate => simulate(opts),
        Command::Pretrain => pretrain(opts),
        Command::Run => run(opts),
        Command::Sweep => sweep(opts),
        Command::Diagnose => diagnose(opts),
    })
    .with_context(|| format!("{} failed for config {}", command.name(), opts.config.display()))
}

fn simulate(opts: &Options) -> Result<Report> {
    let mut cfg: SimulateConfig = read_config(&opts.config)?;
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let rep = make_replicate(cfg.task, &cfg.data, cfg.seed)?;
    if opts.dry_run {
        return Ok(Report {
            files: vec![],
            plan: format!(
                "simulate {:?}: train {} rows, validation {} rows, test {} rows",
                cfg.task,
                rep.split.train.len(),
                rep.split.validation.len(),
                rep.split.test.len()
            ),
        });
    }
    let mut out = Outputs::new(&opts.out)?;
    out.write("train.csv", &dataset_bytes(&rep.split.train)?)?;
    out.write("validation.csv", &dataset_bytes(&rep.split.validation)?)?;
    out.write("test.csv", &dataset_bytes(&rep.split.test)?)?;
    out.finish(Command::Simulate, &cfg, vec![cfg.seed])
}

fn pretrain(opts: &Options) -> Result<Report> {
    let mut cfg: PretrainConfig = read_config(&opts.config)?;
    if let Some(s) = opts.seed {
        cfg.transfer.source_seed = s;
    }
    let sizes: Vec<(usize, String)> = if cfg.source_sizes.is_empty() {
        vec![(cfg.transfer.source_size, "autoencoder.json".to_string())]
    } else {
        cfg.source_sizes.iter().map(|&s| (s, format!("autoencoder_{s}.json"))).collect()
    };
    if let Some((s, _)) = sizes.iter().find(|(s, _)| *s < 2) {
        bail!("source size {s} is too small to pretrain on");
    }
    if opts.dry_run {
        let list: Vec<String> = sizes.iter().map(|(s, _)| s.to_string()).collect();
        return Ok(Report { files: vec![], plan: format!("pretrain {:?} on source sizes {}", cfg.task, list.join(", ")) });
    }
    let mut out = Outputs::new(&opts.out)?;
    for (size, name) in &sizes {
        let spec = TransferSpec { source_size: *size, ..cfg.transfer.clone() };
        log::info!("pretraining on {size} source rows");
        let ae = pretrain_source(cfg.task, cfg.sigma, &spec, &cfg.autoencoder)?;
        out.write(name, serde_json::to_string(&ae)?.as_bytes())?;
    }
    out.finish(Command::Pretrain, &cfg, vec![cfg.transfer.source_seed])
}

fn load_experiment(opts: &Options) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = read_config(&opts.config)?;
    if let Some(s) = opts.seed {
        cfg.seeds = vec![s];
    }
    if let Some(p) = &cfg.transfer_checkpoint {
        let full = resolve(&opts.config, p);
        if !full.exists() {
            bail!("transfer checkpoint {} does not exist", full.display());
        }
        cfg.transfer_checkpoint = Some(full);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn plan(cfg: &ExperimentConfig) -> String {
    let grid = cfg.effective_grid();
    let methods: Vec<&str> = cfg.methods.iter().map(Method::name).collect();
    format!(
        "{:?}: methods [{}], {} seeds, {} grid points ({} split ratios)",
        cfg.task,
        methods.join(", "),
        cfg.seeds.len(),
        grid.len(),
        grid.r_values.len()
    )
}

fn run(opts: &Options) -> Result<Report> {
    let cfg = load_experiment(opts)?;
    if opts.dry_run {
        return Ok(Report { files: vec![], plan: plan(&cfg) });
    }
    log::info!("{}", plan(&cfg));
    let transfer = resolve_transfer(&cfg)?;
    let replicates = make_replicates(&cfg)?;
    let outcome = run_methods(&cfg, &replicates, transfer.as_ref())?;

    let mut out = Outputs::new(&opts.out)?;
    out.write("results.csv", &csv_bytes(|b| write_results(b, &outcome))?)?;
    let mut table = Vec::new();
    for (i, m) in outcome.methods.iter().enumerate() {
        let mut part = csv_bytes(|b| write_tuning_table(b, m.method.name(), &m.result.replicates))?;
        if i > 0 {
            let header_end = part.iter().position(|&c| c == b'\n').map_or(part.len(), |p| p + 1);
            part.drain(..header_end);
        }
        table.extend(part);
    }
    out.write("tuning_table.csv", &table)?;

    let mut selected = Vec::new();
    for m in &outcome.methods {
        for rep in &m.result.replicates {
            let s = rep.selected();
            selected.push(SelectedReport {
                method: m.method.name(),
                seed: rep.seed,
                alpha: &s.point.alpha,
                m: s.point.m,
                r: s.point.r,
                sigma: s.point.sigma,
                validation: s.validation.overall,
                test: s.test.overall,
                report: &s.report,
            });
        }
    }
    out.write("index_reports.json", &serde_json::to_vec_pretty(&selected)?)?;

    if cfg.save_generators {
        for m in &outcome.methods {
            for (rep, res) in replicates.iter().zip(&m.result.replicates) {
                if let Some(g) = selected_generator(&cfg, m.method, rep, &res.selected().point, transfer.as_ref())? {
                    out.write(&format!("generators/{}-seed{}.json", m.method.name(), rep.seed), g.to_json()?.as_bytes())?;
                }
            }
        }
    }
    if !cfg.pretrain_sizes.is_empty() {
        let rows = pretraining_ablation(&cfg, &cfg.pretrain_sizes)?;
        out.write("ablation.csv", &csv_bytes(|b| write_ablation(b, &outcome.metric, &rows))?)?;
    }
    let seeds = cfg.seeds.clone();
    out.finish(Command::Run, &cfg, seeds)
}

fn sweep(opts: &Options) -> Result<Report> {
    let mut cfg = load_experiment(opts)?;
    cfg.methods.retain(|m| !matches!(m, Method::Baseline | Method::Smogn));
    if cfg.methods.is_empty() {
        bail!("no configured method has a grid to sweep");
    }
    let params = match opts.param {
        Some(p) => vec![p],
        None => vec![SweepParam::MOverN, SweepParam::Alpha1, SweepParam::R],
    };
    if opts.dry_run {
        let names: Vec<&str> = params.iter().map(SweepParam::name).collect();
        return Ok(Report { files: vec![], plan: format!("sweep {} over {}", names.join(", "), plan(&cfg)) });
    }
    log::info!("sweep over {}", plan(&cfg));
    let transfer = resolve_transfer(&cfg)?;
    let outcome = run_methods(&cfg, &make_replicates(&cfg)?, transfer.as_ref())?;
    let mut out = Outputs::new(&opts.out)?;
    for param in params {
        let mut rows_all = Vec::new();
        for (i, m) in outcome.methods.iter().enumerate() {
            let rows = marginal_sweep(&m.result.replicates, param, 0.5)?;
            let mut part = csv_bytes(|b| write_sweep(b, m.method.name(), &rows))?;
            if i > 0 {
                let header_end = part.iter().position(|&c| c == b'\n').map_or(part.len(), |p| p + 1);
                part.drain(..header_end);
            }
            rows_all.extend(part);
        }
        out.write(&format!("sweep_{}.csv", param.name()), &rows_all)?;
    }
    let seeds = cfg.seeds.clone();
    out.finish(Command::Sweep, &cfg, seeds)
}

fn diagnose(opts: &Options) -> Result<Report> {
    let mut cfg: DiagnoseConfig = read_config(&opts.config)?;
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let train_path = resolve(&opts.config, &cfg.train);
    let train = Dataset::read_csv(&train_path).with_context(|| format!("cannot read training data {}", train_path.display()))?;
    let k = train.n_regions();
    let n = train.len();
    let p = region_proportions(&train);
    let q = cfg.q.clone().unwrap_or_else(|| uniform_weights(k));
    let alpha = match &cfg.alpha {
        Some(a) => a.clone(),
        None => allocate_optimal(&q, &p, n, cfg.m, cfg.r)?,
    };
    let generator = match &cfg.generator {
        Some(g) => {
            let path = resolve(&opts.config, g);
            if !path.exists() {
                bail!("generator checkpoint {} does not exist", path.display());
            }
            Some(GeneratorModel::load(&path).with_context(|| format!("cannot load generator {}", path.display()))?)
        }
        None => None,
    };
    if opts.dry_run {
        return Ok(Report { files: vec![], plan: format!("diagnose lambda (alpha {alpha:?}, m {}, r {}) on {n} rows", cfg.m, cfg.r) });
    }
    let tau = match (&generator, &cfg.holdout) {
        (Some(g), Some(h)) => {
            let path = resolve(&opts.config, h);
            let holdout = Dataset::read_csv(&path).with_context(|| format!("cannot read holdout {}", path.display()))?;
            estimate_tau(g, &holdout, cfg.tau_samples, SeedStream::new(cfg.seed).child("tau"))?
        }
        (Some(_), None) => bail!("a generator checkpoint needs `holdout` rows to estimate its error"),
        _ => vec![None; k],
    };
    let report = IndexReport::new(&alpha, cfg.m, &p, n, cfg.r, &q, tau)?;
    let diag = Diagnosis { alpha, m: cfg.m, r: cfg.r, n, n_reserved: reserved_count(n, cfg.r), p, q, report };
    let mut out = Outputs::new(&opts.out)?;
    out.write("index_report.json", &serde_json::to_vec_pretty(&diag)?)?;
    let seed = cfg.seed;
    out.finish(Command::Diagnose, &cfg, vec![seed])
}
