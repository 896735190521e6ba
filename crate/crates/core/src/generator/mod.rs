//! Conditional latent diffusion generator: an autoencoder to a small latent
//! space plus a region-conditioned diffusion model over the latents.

pub mod autoencoder;
pub mod diffusion;

use std::path::Path;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

pub use autoencoder::{fit_autoencoder, pretrain_transfer, train_autoencoder, AutoencoderConfig, AutoencoderModel, RowCodec};
pub use diffusion::{
    forward_diffuse, make_schedule, score_matching_loss, train_score_network, DiffusionConfig, DiffusionModel,
    NoiseSchedule, ScheduleParams, SAMPLE_CHUNK,
};

use crate::allocation::{check_simplex, largest_remainder};
use crate::dataset::{Dataset, Provenance, Schema, Target};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub autoencoder: AutoencoderConfig,
    pub diffusion: DiffusionConfig,
}

impl GeneratorConfig {
    pub fn classification() -> Self {
        GeneratorConfig { autoencoder: AutoencoderConfig::classification(), diffusion: DiffusionConfig::classification() }
    }

    pub fn regression() -> Self {
        GeneratorConfig { autoencoder: AutoencoderConfig::regression(), diffusion: DiffusionConfig::regression() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferTag {
    None,
    PretrainedAutoencoder,
}

/// How synthetic rows get their target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetRule {
    None,
    /// Decoded from the last generated column.
    Continuous,
    /// One label per region, `labels[k - 1]`.
    Class(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub autoencoder_epochs: usize,
    pub autoencoder_lr: f64,
    pub diffusion_epochs: usize,
    pub diffusion_lr: f64,
    pub seed: u64,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub autoencoder: AutoencoderModel,
    pub diffusion: DiffusionModel,
    pub transfer_tag: TransferTag,
    pub schema: Schema,
    pub target_rule: TargetRule,
    pub meta: TrainingMeta,
}

impl GeneratorModel {
    /// Trains on `z_g`. With `transfer`, the given autoencoder is reused
    /// unchanged and only the diffusion model sees `z_g`.
    pub fn fit(
        z_g: &Dataset,
        cfg: &GeneratorConfig,
        transfer: Option<&AutoencoderModel>,
        seed: SeedStream,
    ) -> Result<GeneratorModel> {
        let schema = z_g.schema();
        let codec = RowCodec::for_schema(schema);
        if z_g.is_empty() {
            return Err(Error::Capacity("generator needs at least one training row".into()));
        }
        let counts = z_g.region_counts();
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Capacity(format!("region {} has no generator training rows", k + 1)));
        }
        let (autoencoder, transfer_tag) = match transfer {
            Some(ae) => {
                if ae.codec != codec {
                    return Err(Error::Schema(format!(
                        "pretrained autoencoder expects {:?}, data has {:?}",
                        ae.codec, codec
                    )));
                }
                (ae.clone(), TransferTag::PretrainedAutoencoder)
            }
            None => (train_autoencoder(z_g, &cfg.autoencoder, seed.child("autoencoder"))?, TransferTag::None),
        };
        let rows = codec.encode_rows(z_g)?;
        let latents = autoencoder.encode(rows.view())?;
        let diffusion =
            train_score_network(latents.view(), z_g.regions(), schema.n_regions, &cfg.diffusion, seed.child("diffusion"))?;
        let target_rule = match z_g.target() {
            Target::None => TargetRule::None,
            Target::Continuous(_) => TargetRule::Continuous,
            Target::Class(y) => TargetRule::Class(region_labels(y, z_g.regions(), schema.n_regions)),
        };
        Ok(GeneratorModel {
            autoencoder,
            diffusion,
            transfer_tag,
            schema,
            target_rule,
            meta: TrainingMeta {
                autoencoder_epochs: if transfer.is_some() { 0 } else { cfg.autoencoder.epochs },
                autoencoder_lr: cfg.autoencoder.lr,
                diffusion_epochs: cfg.diffusion.epochs,
                diffusion_lr: cfg.diffusion.lr,
                seed: seed.seed(),
                n_train: z_g.len(),
            },
        })
    }

    /// The first `count` decoded rows for region `k` under `seed`. Chunks are
    /// decoded at full size, so results are prefix-consistent in `count`.
    pub fn sample_region_rows(&self, k: usize, count: usize, seed: SeedStream) -> Result<Array2<f64>> {
        let width = self.autoencoder.input_dim();
        if count == 0 {
            if k == 0 || k > self.schema.n_regions {
                return Err(Error::config(format!("region {k} outside 1..={}", self.schema.n_regions)));
            }
            return Ok(Array2::zeros((0, width)));
        }
        let chunks = self.diffusion.sample_chunks(k, count.div_ceil(SAMPLE_CHUNK), seed)?;
        let decoded = chunks.iter().map(|c| self.autoencoder.decode(c.view())).collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = decoded.iter().map(|d| d.view()).collect();
        let all = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        Ok(all.slice(s![..count, ..]).to_owned())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<GeneratorModel> {
        let model: GeneratorModel = serde_json::from_str(s)?;
        if model.autoencoder.latent_dim != model.diffusion.latent_dim {
            return Err(Error::Schema("autoencoder and diffusion latent dimensions differ".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GeneratorModel> {
        GeneratorModel::from_json(&std::fs::read_to_string(path)?)
    }
}

fn region_labels(y: &[u32], regions: &[usize], n_regions: usize) -> Vec<u32> {
    (1..=n_regions)
        .map(|k| {
            let mut tally = std::collections::BTreeMap::new();
            for (&label, _) in y.iter().zip(regions).filter(|(_, &r)| r == k) {
                *tally.entry(label).or_insert(0usize) += 1;
            }
            tally.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map_or(k as u32 - 1, |(l, _)| l)
        })
        .collect()
}

/// Draws `m` synthetic rows split across regions by `alpha`
/// (largest-remainder rounding). Region `k` uses stream `seed.index(k)`.
pub fn synthesize(generator: &GeneratorModel, alpha: &[f64], m: usize, seed: SeedStream) -> Result<Dataset> {
    let k_total = generator.schema.n_regions;
    check_simplex(alpha, k_total)?;
    let counts = largest_remainder(alpha, m);
    synthesize_counts(generator, &counts, seed)
}

/// Like [`synthesize`] with explicit per-region counts.
pub fn synthesize_counts(generator: &GeneratorModel, counts: &[usize], seed: SeedStream) -> Result<Dataset> {
    let schema = generator.schema;
    if counts.len() != schema.n_regions {
        return Err(Error::config(format!("{} region counts for {} regions", counts.len(), schema.n_regions)));
    }
    let mut blocks = Vec::with_capacity(counts.len());
    let mut regions = Vec::with_capacity(counts.iter().sum());
    for (i, &c) in counts.iter().enumerate() {
        let k = i + 1;
        blocks.push(generator.sample_region_rows(k, c, seed.index(k as u64))?);
        regions.extend(std::iter::repeat_n(k, c));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let rows = ndarray::concatenate(Axis(0), &views).expect("equal widths");
    let d = schema.n_features;
    let features = rows.slice(s![.., ..d]).to_owned();
    let target = match &generator.target_rule {
        TargetRule::None => Target::None,
        TargetRule::Continuous => Target::Continuous(rows.column(d).to_owned()),
        TargetRule::Class(labels) => Target::Class(regions.iter().map(|&k| labels[k - 1]).collect()),
    };
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Generation("decoded rows contain non-finite values".into()));
    }
    let n = regions.len();
    Dataset::with_provenance(features, target, regions, vec![Provenance::Synthetic; n], schema.n_regions)
}
