//! Discrete-time latent diffusion with a region-conditioned noise predictor.
//!
//! The forward marginal is `u_t = sqrt(abar_t) u_0 + sqrt(1 - abar_t) eps`.
//! The network predicts `eps` from `(u_t, onehot(region), embed(t / T))`; the
//! score is `-eps_hat / sqrt(1 - abar_t)`. Sampling is ancestral, from
//! `u_T ~ N(0, I)` down to `u_0`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{loss_mse, shuffled_batches, Adam, Head, Mlp, MlpSpec};
use crate::rng::{Rng64, SeedStream};
use crate::scaling::Standardizer;

/// Rows per sampling chunk. Every chunk is drawn at full size from its own
/// stream and then truncated, so a smaller request is always a prefix of a
/// larger one under the same seed.
pub const SAMPLE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams { timesteps: 1000, beta_min: 1e-4, beta_max: 0.02 }
    }
}

/// Linear beta grid and cumulative products; steps are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleParams", into = "ScheduleParams")]
pub struct NoiseSchedule {
    params: ScheduleParams,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl TryFrom<ScheduleParams> for NoiseSchedule {
    type Error = Error;

    fn try_from(p: ScheduleParams) -> Result<Self> {
        make_schedule(p.timesteps, p.beta_min, p.beta_max)
    }
}

impl From<NoiseSchedule> for ScheduleParams {
    fn from(s: NoiseSchedule) -> Self {
        s.params
    }
}

pub fn make_schedule(timesteps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if timesteps == 0 {
        return Err(Error::config("schedule needs at least one step"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::config(format!("need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")));
    }
    let betas = crate::dgp::linspace(beta_min, beta_max, timesteps);
    let mut alpha_bars = Vec::with_capacity(timesteps);
    let mut acc = 1.0;
    for &b in &betas {
        acc *= 1.0 - b;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule { params: ScheduleParams { timesteps, beta_min, beta_max }, betas, alpha_bars })
}

impl NoiseSchedule {
    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `abar_t`, with `abar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 { 1.0 } else { self.alpha_bars[t - 1] }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            return Err(Error::config(format!("step {t} outside 1..={}", self.timesteps())));
        }
        Ok(())
    }
}

/// Closed-form noisy latent at step `t`.
pub fn forward_diffuse(
    schedule: &NoiseSchedule,
    u0: ArrayView2<f64>,
    t: usize,
    noise: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    schedule.check_t(t)?;
    if u0.dim() != noise.dim() {
        return Err(Error::dim("latent and noise shapes differ"));
    }
    let ab = schedule.alpha_bar(t);
    Ok(&u0 * ab.sqrt() + &noise * (1.0 - ab).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub hidden: usize,
    /// Number of hidden layers in the noise predictor.
    pub depth: usize,
    pub embed_dim: usize,
    pub schedule: ScheduleParams,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Decay of the weight average used for sampling; 0 keeps the last iterate.
    #[serde(default = "default_ema_decay")]
    pub ema_decay: f64,
}

fn default_ema_decay() -> f64 {
    0.999
}

impl DiffusionConfig {
    /// 10 x 1024 noise predictor, 128-dimensional time embedding.
    pub fn classification() -> Self {
        DiffusionConfig {
            hidden: 1024,
            depth: 10,
            embed_dim: 128,
            schedule: ScheduleParams::default(),
            epochs: 5000,
            lr: 1e-4,
            batch_size: 128,
            ema_decay: default_ema_decay(),
        }
    }

    /// 5 x 512 noise predictor, 64-dimensional time embedding.
    pub fn regression() -> Self {
        DiffusionConfig {
            hidden: 512,
            depth: 5,
            embed_dim: 64,
            schedule: ScheduleParams::default(),
            epochs: 5000,
            lr: 1e-4,
            batch_size: 128,
            ema_decay: default_ema_decay(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionModel {
    pub score_net: Mlp,
    pub time_embed: Mlp,
    pub schedule: NoiseSchedule,
    pub n_regions: usize,
    pub latent_dim: usize,
    /// Latents are z-scored before diffusion and restored after sampling.
    pub latent_scaler: Standardizer,
    pub trained: bool,
}

impl DiffusionModel {
    pub fn embed_dim(&self) -> usize {
        self.time_embed.spec().output_dim()
    }

    fn time_input(&self, t: usize) -> f64 {
        t as f64 / self.schedule.timesteps() as f64
    }

    /// Predicted noise for a batch of standardized latents at per-row steps.
    pub fn predict_noise(&self, u_t: ArrayView2<f64>, regions: &[usize], steps: &[usize]) -> Result<Array2<f64>> {
        let n = u_t.nrows();
        if regions.len() != n || steps.len() != n || u_t.ncols() != self.latent_dim {
            return Err(Error::dim("noise prediction inputs disagree"));
        }
        let t_in = Array2::from_shape_fn((n, 1), |(i, _)| self.time_input(steps[i]));
        let emb = self.time_embed.forward(t_in.view())?;
        let input = self.assemble_input(u_t, regions, emb.view());
        self.score_net.forward(input.view())
    }

    fn assemble_input(&self, u_t: ArrayView2<f64>, regions: &[usize], emb: ArrayView2<f64>) -> Array2<f64> {
        let (n, du, k) = (u_t.nrows(), self.latent_dim, self.n_regions);
        let mut input = Array2::zeros((n, du + k + emb.ncols()));
        input.slice_mut(s![.., ..du]).assign(&u_t);
        for (i, &r) in regions.iter().enumerate() {
            input[[i, du + r - 1]] = 1.0;
        }
        input.slice_mut(s![.., du + k..]).assign(&emb);
        input
    }

    /// `count` latents for region `k`, in the encoder's latent space.
    pub fn sample_latents(&self, k: usize, count: usize, seed: SeedStream) -> Result<Array2<f64>> {
        if !self.trained {
            return Err(Error::State("diffusion model has not been trained".into()));
        }
        if k == 0 || k > self.n_regions {
            return Err(Error::config(format!("region {k} outside 1..={}", self.n_regions)));
        }
        if count == 0 {
            return Ok(Array2::zeros((0, self.latent_dim)));
        }
        let chunks = self.sample_chunks(k, count.div_ceil(SAMPLE_CHUNK), seed)?;
        let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
        let all = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        Ok(all.slice(s![..count, ..]).to_owned())
    }

    /// Full chunks of [`SAMPLE_CHUNK`] latents for region `k`; chunk `c` uses
    /// its own stream, so the result does not depend on scheduling.
    pub fn sample_chunks(&self, k: usize, n_chunks: usize, seed: SeedStream) -> Result<Vec<Array2<f64>>> {
        if !self.trained {
            return Err(Error::State("diffusion model has not been trained".into()));
        }
        if k == 0 || k > self.n_regions {
            return Err(Error::config(format!("region {k} outside 1..={}", self.n_regions)));
        }
        let embeds = self.step_embeddings()?;
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let z = self.sample_chunk(k, &embeds, &mut seed.index(k as u64).index(c as u64).rng())?;
                self.latent_scaler.inverse(z.view())
            })
            .collect()
    }

    fn step_embeddings(&self) -> Result<Array2<f64>> {
        let t_in = Array2::from_shape_fn((self.schedule.timesteps(), 1), |(i, _)| self.time_input(i + 1));
        self.time_embed.forward(t_in.view())
    }

    fn sample_chunk(&self, k: usize, embeds: &Array2<f64>, rng: &mut Rng64) -> Result<Array2<f64>> {
        let du = self.latent_dim;
        let mut u = Array2::from_shape_simple_fn((SAMPLE_CHUNK, du), || StandardNormal.sample(&mut *rng));
        let mut fixed = vec![0.0; self.n_regions + self.embed_dim()];
        fixed[k - 1] = 1.0;
        for t in (1..=self.schedule.timesteps()).rev() {
            for (dst, src) in fixed[self.n_regions..].iter_mut().zip(embeds.row(t - 1)) {
                *dst = *src;
            }
            let eps = self.score_net.logits_with_fixed_suffix(u.view(), &fixed)?;
            let beta = self.schedule.beta(t);
            let ab = self.schedule.alpha_bar(t);
            let coef = beta / (1.0 - ab).sqrt();
            let inv_sqrt_alpha = 1.0 / (1.0 - beta).sqrt();
            u.zip_mut_with(&eps, |u, &e| *u = (*u - coef * e) * inv_sqrt_alpha);
            if t > 1 {
                let var = beta * (1.0 - self.schedule.alpha_bar(t - 1)) / (1.0 - ab);
                let sd = var.sqrt();
                u.mapv_inplace(|v| v + sd * Distribution::<f64>::sample(&StandardNormal, &mut *rng));
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("sampler produced non-finite latents".into()));
        }
        Ok(u)
    }
}

/// Denoising score matching in the noise-prediction form:
/// minimize `E || eps - eps_hat(u_t, region, t) ||^2` with `t` uniform on `1..=T`.
pub fn train_score_network(
    latents: ArrayView2<f64>,
    regions: &[usize],
    n_regions: usize,
    cfg: &DiffusionConfig,
    seed: SeedStream,
) -> Result<DiffusionModel> {
    let (n, du) = latents.dim();
    if regions.len() != n {
        return Err(Error::dim("one region per latent row is required"));
    }
    if n == 0 {
        return Err(Error::Capacity("score network needs at least one latent".into()));
    }
    if latents.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("latents must be finite"));
    }
    if let Some(&k) = regions.iter().find(|&&k| k == 0 || k > n_regions) {
        return Err(Error::config(format!("region {k} outside 1..={n_regions}")));
    }
    if !(0.0..1.0).contains(&cfg.ema_decay) {
        return Err(Error::config("ema_decay must lie in [0, 1)"));
    }
    let schedule = NoiseSchedule::try_from(cfg.schedule)?;
    let latent_scaler = Standardizer::fit(latents);
    let z = latent_scaler.transform(latents)?;

    let mut init = seed.child("init").rng();
    let embed_spec = MlpSpec::new(vec![1, cfg.embed_dim, cfg.embed_dim], Head::Identity)?;
    let net_spec = MlpSpec::uniform(du + n_regions + cfg.embed_dim, cfg.hidden, cfg.depth, du, Head::Identity);
    let mut model = DiffusionModel {
        time_embed: Mlp::new(embed_spec, &mut init)?,
        score_net: Mlp::new(net_spec, &mut init)?,
        schedule,
        n_regions,
        latent_dim: du,
        latent_scaler,
        trained: false,
    };
    let mut opt_net = Adam::new(&model.score_net, cfg.lr);
    let mut opt_emb = Adam::new(&model.time_embed, cfg.lr);
    let mut rng = seed.child("train").rng();
    let big_t = model.schedule.timesteps();
    let mut avg_net = model.score_net.clone();
    let mut avg_emb = model.time_embed.clone();
    let mut updates = 0usize;
    for epoch in 0..cfg.epochs {
        for batch in shuffled_batches(n, cfg.batch_size, &mut rng) {
            let b = batch.len();
            let u0 = z.select(Axis(0), &batch);
            let steps: Vec<usize> = (0..b).map(|_| rng.random_range(1..=big_t)).collect();
            let eps = Array2::from_shape_simple_fn((b, du), || StandardNormal.sample(&mut rng));
            let mut u_t = Array2::zeros((b, du));
            for i in 0..b {
                let ab = model.schedule.alpha_bar(steps[i]);
                let (a, c) = (ab.sqrt(), (1.0 - ab).sqrt());
                for j in 0..du {
                    u_t[[i, j]] = a * u0[[i, j]] + c * eps[[i, j]];
                }
            }
            let t_in = Array2::from_shape_fn((b, 1), |(i, _)| model.time_input(steps[i]));
            let emb_cache = model.time_embed.forward_cached(t_in.view())?;
            let batch_regions: Vec<usize> = batch.iter().map(|&i| regions[i]).collect();
            let input = model.assemble_input(u_t.view(), &batch_regions, emb_cache.output().view());
            let net_cache = model.score_net.forward_cached(input.view())?;
            let (loss, g) = loss_mse(net_cache.output(), &eps)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("score-matching loss is {loss} at epoch {epoch}")));
            }
            let (g_net, g_in) = model.score_net.backward_logits(&net_cache, &g, true)?;
            let g_emb = g_in.expect("requested").slice(s![.., du + n_regions..]).to_owned();
            let (g_time, _) = model.time_embed.backward_logits(&emb_cache, &g_emb, false)?;
            opt_net.step(&mut model.score_net, &g_net)?;
            opt_emb.step(&mut model.time_embed, &g_time)?;
            updates += 1;
            let decay = cfg.ema_decay.min((1.0 + updates as f64) / (10.0 + updates as f64));
            avg_net.blend_toward(&model.score_net, decay)?;
            avg_emb.blend_toward(&model.time_embed, decay)?;
        }
    }
    model.score_net = avg_net;
    model.time_embed = avg_emb;
    model.trained = true;
    Ok(model)
}

/// Mean score-matching loss at fixed draws, for monitoring.
pub fn score_matching_loss(
    model: &DiffusionModel,
    latents: ArrayView2<f64>,
    regions: &[usize],
    draws: usize,
    seed: SeedStream,
) -> Result<f64> {
    let z = model.latent_scaler.transform(latents)?;
    let mut rng = seed.rng();
    let mut total = 0.0;
    for _ in 0..draws {
        let n = z.nrows();
        let steps: Vec<usize> = (0..n).map(|_| rng.random_range(1..=model.schedule.timesteps())).collect();
        let eps = Array2::from_shape_simple_fn(z.raw_dim(), || StandardNormal.sample(&mut rng));
        let mut u_t = z.clone();
        for i in 0..n {
            let ab = model.schedule.alpha_bar(steps[i]);
            let mut row = u_t.row_mut(i);
            row *= ab.sqrt();
            row.scaled_add((1.0 - ab).sqrt(), &eps.row(i));
        }
        let pred = model.predict_noise(u_t.view(), regions, &steps)?;
        total += loss_mse(&pred, &eps)?.0;
    }
    Ok(total / draws.max(1) as f64)
}

/// Per-column mean and variance, used by the sampler checks.
pub fn column_moments(x: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
    let var = x.var_axis(Axis(0), 0.0);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn schedule_values() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_abs_diff_eq!(s.beta(1000), 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(s.alpha_bar(1), 0.9999, epsilon = 1e-15);
        assert!(s.alpha_bar(1000) < 1e-4);
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..1000 {
            assert!(s.alpha_bar(t + 1) < s.alpha_bar(t));
            assert!(s.beta(t + 1) >= s.beta(t));
        }
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 0.03, 0.02).is_err());
        assert!(make_schedule(10, 0.01, 1.0).is_err());
    }

    #[test]
    fn forward_diffuse_edge_cases() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        let u0 = ndarray::array![[1.0, -2.0]];
        let zero = Array2::zeros((1, 2));
        let ut = forward_diffuse(&s, u0.view(), 500, zero.view()).unwrap();
        assert_abs_diff_eq!(ut[[0, 1]], -2.0 * s.alpha_bar(500).sqrt(), epsilon = 1e-15);
        assert!(s.alpha_bar(1000).sqrt() < 0.01);
        assert!(forward_diffuse(&s, u0.view(), 0, zero.view()).is_err());
        assert!(forward_diffuse(&s, u0.view(), 1001, zero.view()).is_err());
    }

    #[test]
    fn schedule_serializes_as_parameters() {
        let s = make_schedule(50, 1e-3, 0.05).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, r#"{"timesteps":50,"beta_min":0.001,"beta_max":0.05}"#);
        let back: NoiseSchedule = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    fn tiny_cfg() -> DiffusionConfig {
        DiffusionConfig {
            hidden: 16,
            depth: 2,
            embed_dim: 8,
            schedule: ScheduleParams { timesteps: 50, beta_min: 1e-3, beta_max: 0.2 },
            epochs: 2,
            lr: 1e-3,
            batch_size: 32,
            ema_decay: 0.9,
        }
    }

    #[test]
    fn untrained_and_empty_sampling() {
        let lat = Array2::from_shape_fn((40, 2), |(i, j)| (i as f64 * 0.1).sin() + j as f64);
        let regions: Vec<usize> = (0..40).map(|i| 1 + i % 2).collect();
        let mut m = train_score_network(lat.view(), &regions, 2, &tiny_cfg(), SeedStream::new(1)).unwrap();
        assert_eq!(m.sample_latents(1, 0, SeedStream::new(2)).unwrap().nrows(), 0);
        assert!(m.sample_latents(3, 5, SeedStream::new(2)).is_err());
        let a = m.sample_latents(2, 300, SeedStream::new(2)).unwrap();
        let b = m.sample_latents(2, 300, SeedStream::new(2)).unwrap();
        assert_eq!(a, b);
        let prefix = m.sample_latents(2, 17, SeedStream::new(2)).unwrap();
        assert_eq!(prefix, a.slice(s![..17, ..]).to_owned());
        m.trained = false;
        assert!(matches!(m.sample_latents(1, 5, SeedStream::new(2)), Err(Error::State(_))));
    }

    #[test]
    fn training_lowers_score_matching_loss() {
        let mut rng = SeedStream::new(5).rng();
        let lat = Array2::from_shape_simple_fn((400, 2), || StandardNormal.sample(&mut rng));
        let regions = vec![1; 400];
        let mut cfg = tiny_cfg();
        cfg.epochs = 0;
        let before = train_score_network(lat.view(), &regions, 1, &cfg, SeedStream::new(6)).unwrap();
        cfg.epochs = 40;
        let after = train_score_network(lat.view(), &regions, 1, &cfg, SeedStream::new(6)).unwrap();
        let l0 = score_matching_loss(&before, lat.view(), &regions, 3, SeedStream::new(7)).unwrap();
        let l1 = score_matching_loss(&after, lat.view(), &regions, 3, SeedStream::new(7)).unwrap();
        assert!(l1 < l0, "{l1} !< {l0}");
    }
}
