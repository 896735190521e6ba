use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Schema, Target, TargetKind};
use crate::error::{Error, Result};
use crate::nncore::{loss_mse, shuffled_batches, Adam, Head, Mlp, MlpSpec};
use crate::rng::SeedStream;
use crate::scaling::Standardizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderConfig {
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl AutoencoderConfig {
    /// Three 256-unit ReLU layers with a 3-dimensional latent (classification study).
    pub fn classification() -> Self {
        AutoencoderConfig { hidden: vec![256, 256, 256], latent_dim: 3, epochs: 200, lr: 1e-3, batch_size: 128 }
    }

    /// 128-unit ReLU layer with a 3-dimensional latent (regression study).
    pub fn regression() -> Self {
        AutoencoderConfig { hidden: vec![128], latent_dim: 3, epochs: 200, lr: 1e-3, batch_size: 128 }
    }
}

/// Which columns of a row the autoencoder sees: the features, plus the
/// target when it is continuous. Class targets are implied by the region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCodec {
    pub n_features: usize,
    pub target: TargetKind,
}

impl RowCodec {
    pub fn for_schema(schema: Schema) -> Self {
        RowCodec { n_features: schema.n_features, target: schema.target }
    }

    pub fn width(&self) -> usize {
        self.n_features + usize::from(self.target == TargetKind::Continuous)
    }

    pub fn encode_rows(&self, data: &Dataset) -> Result<Array2<f64>> {
        if data.n_features() != self.n_features || data.target().kind() != self.target {
            return Err(Error::Schema(format!(
                "rows with {} features / {:?} target do not match codec {:?}",
                data.n_features(),
                data.target().kind(),
                self
            )));
        }
        match data.target() {
            Target::Continuous(y) => {
                let y = y.view().insert_axis(Axis(1));
                Ok(ndarray::concatenate(Axis(1), &[data.features().view(), y]).expect("row counts agree"))
            }
            _ => Ok(data.features().clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_dim: usize,
    pub codec: RowCodec,
    pub scaler: Standardizer,
    /// Mean squared reconstruction error on the (standardized) training rows.
    pub recon_error: f64,
    pub pretrained: bool,
}

impl AutoencoderModel {
    pub fn input_dim(&self) -> usize {
        self.codec.width()
    }

    pub fn encode(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.scaler.transform(rows)?;
        self.encoder.forward(z.view())
    }

    /// Latents back to raw row space.
    pub fn decode(&self, latents: ArrayView2<f64>) -> Result<Array2<f64>> {
        let x = self.decoder.forward(latents)?;
        self.scaler.inverse(x.view())
    }

    pub fn reconstruct(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decode(self.encode(rows)?.view())
    }

    fn standardized_loss(&self, z: ArrayView2<f64>) -> Result<f64> {
        if z.nrows() == 0 {
            return Ok(0.0);
        }
        let u = self.encoder.forward(z)?;
        let out = self.decoder.forward(u.view())?;
        Ok(loss_mse(&out, &z.to_owned())?.0)
    }
}

pub fn train_autoencoder(data: &Dataset, cfg: &AutoencoderConfig, seed: SeedStream) -> Result<AutoencoderModel> {
    let codec = RowCodec::for_schema(data.schema());
    let rows = codec.encode_rows(data)?;
    fit_autoencoder(rows.view(), codec, cfg, seed)
}

/// Squared-loss training of the encoder/decoder pair on raw rows.
pub fn fit_autoencoder(
    rows: ArrayView2<f64>,
    codec: RowCodec,
    cfg: &AutoencoderConfig,
    seed: SeedStream,
) -> Result<AutoencoderModel> {
    if rows.nrows() == 0 {
        return Err(Error::Capacity("autoencoder needs at least one row".into()));
    }
    let d = rows.ncols();
    if d != codec.width() {
        return Err(Error::dim("row width does not match codec"));
    }
    if cfg.latent_dim == 0 || cfg.latent_dim >= d {
        return Err(Error::config(format!("latent dimension {} must be in 1..{d}", cfg.latent_dim)));
    }
    let scaler = Standardizer::fit(rows);
    let z = scaler.transform(rows)?;

    let mut enc_sizes = vec![d];
    enc_sizes.extend(&cfg.hidden);
    enc_sizes.push(cfg.latent_dim);
    let mut dec_sizes = enc_sizes.clone();
    dec_sizes.reverse();
    let mut init = seed.child("init").rng();
    let encoder = Mlp::new(MlpSpec::new(enc_sizes, Head::Identity)?, &mut init)?;
    let decoder = Mlp::new(MlpSpec::new(dec_sizes, Head::Identity)?, &mut init)?;

    let mut model = AutoencoderModel {
        encoder,
        decoder,
        latent_dim: cfg.latent_dim,
        codec,
        scaler,
        recon_error: f64::NAN,
        pretrained: false,
    };
    let mut opt_e = Adam::new(&model.encoder, cfg.lr);
    let mut opt_d = Adam::new(&model.decoder, cfg.lr);
    let mut rng = seed.child("batches").rng();
    for epoch in 0..cfg.epochs {
        for batch in shuffled_batches(z.nrows(), cfg.batch_size, &mut rng) {
            let xb = z.select(Axis(0), &batch);
            let enc = model.encoder.forward_cached(xb.view())?;
            let dec = model.decoder.forward_cached(enc.output().view())?;
            let (loss, g) = loss_mse(dec.output(), &xb)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("autoencoder loss is {loss} at epoch {epoch}")));
            }
            let (gd, g_latent) = model.decoder.backward_logits(&dec, &g, true)?;
            let (ge, _) = model.encoder.backward_logits(&enc, &g_latent.expect("requested"), false)?;
            opt_d.step(&mut model.decoder, &gd)?;
            opt_e.step(&mut model.encoder, &ge)?;
        }
    }
    model.recon_error = model.standardized_loss(z.view())?;
    if !model.recon_error.is_finite() {
        return Err(Error::Divergence("non-finite reconstruction error".into()));
    }
    Ok(model)
}

/// Autoencoder trained on a source dataset, flagged for frozen reuse.
pub fn pretrain_transfer(source: &Dataset, cfg: &AutoencoderConfig, seed: SeedStream) -> Result<AutoencoderModel> {
    let mut ae = train_autoencoder(source, cfg, seed)?;
    ae.pretrained = true;
    Ok(ae)
}
