use log::warn;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{clip_prob, loss_logistic_logits, shuffled_batches, Adam, Head, Mlp, MlpSpec};
use crate::rng::SeedStream;
use crate::scaling::Standardizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpTrainConfig {
    pub hidden: Vec<usize>,
    pub epochs_max: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        MlpTrainConfig { hidden: vec![128, 128], epochs_max: 2000, patience: 20, lr: 1e-3, batch_size: 128 }
    }
}

/// Binary classifier: ReLU body with a sigmoid output on standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub net: Mlp,
    pub scaler: Standardizer,
    /// 1-based epoch of the returned snapshot (0 when no training happened).
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub constant: bool,
}

impl ClassifierModel {
    /// `P(Y = 1 | x)` per row, clipped away from 0 and 1.
    pub fn predict_proba(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
        let z = self.scaler.transform(rows)?;
        Ok(self.net.forward(z.view())?.column(0).iter().map(|&p| clip_prob(p)).collect())
    }
}

/// Regressor with the classifier's body and an identity output; the target
/// is standardized for training and restored on prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRegressorModel {
    pub net: Mlp,
    pub scaler: Standardizer,
    pub y_mean: f64,
    pub y_std: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl MlpRegressorModel {
    pub fn predict(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
        let z = self.scaler.transform(rows)?;
        Ok(self.net.forward(z.view())?.column(0).iter().map(|&v| self.y_mean + self.y_std * v).collect())
    }
}

fn loss_mse_logits(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::dim("prediction and target lengths differ"));
    }
    let n = pred.len().max(1) as f64;
    let loss = pred.iter().zip(target).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n;
    Ok((loss, pred.iter().zip(target).map(|(p, y)| 2.0 * (p - y) / n).collect()))
}

type LossFn = fn(&[f64], &[f64]) -> Result<(f64, Vec<f64>)>;

struct Fitted {
    net: Mlp,
    best_epoch: usize,
    best_val_loss: f64,
}

fn val_loss(net: &Mlp, x: &Array2<f64>, y: &[f64], loss: LossFn) -> Result<f64> {
    let logits = net.logits(x.view())?;
    Ok(loss(logits.column(0).as_slice().expect("single column"), y)?.0)
}

/// Mini-batch Adam on a mean loss over all rows (real and synthetic alike),
/// keeping the snapshot with the lowest validation loss. Stops once
/// `patience` epochs pass without improvement; with no validation rows it
/// runs all epochs and keeps the last one.
fn fit_network(
    mut net: Mlp,
    x: &Array2<f64>,
    y: &[f64],
    val: Option<(&Array2<f64>, &[f64])>,
    cfg: &MlpTrainConfig,
    loss: LossFn,
    seed: SeedStream,
) -> Result<Fitted> {
    let mut opt = Adam::new(&net, cfg.lr);
    let mut rng = seed.child("batches").rng();
    let mut best = Fitted { net: net.clone(), best_epoch: 0, best_val_loss: f64::INFINITY };
    let mut since_best = 0usize;
    for epoch in 1..=cfg.epochs_max {
        for batch in shuffled_batches(x.nrows(), cfg.batch_size, &mut rng) {
            let xb = x.select(Axis(0), &batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let cache = net.forward_cached(xb.view())?;
            let (l, g) = loss(cache.logits().column(0).as_slice().expect("single column"), &yb)?;
            if !l.is_finite() {
                return Err(Error::Divergence(format!("training loss is {l} at epoch {epoch}")));
            }
            let g = Array2::from_shape_vec((batch.len(), 1), g).expect("one gradient per row");
            let (grads, _) = net.backward_logits(&cache, &g, false)?;
            opt.step(&mut net, &grads)?;
        }
        match val {
            Some((vx, vy)) => {
                let v = val_loss(&net, vx, vy, loss)?;
                if v < best.best_val_loss {
                    best = Fitted { net: net.clone(), best_epoch: epoch, best_val_loss: v };
                    since_best = 0;
                } else {
                    since_best += 1;
                }
                if since_best >= cfg.patience {
                    break;
                }
            }
            None => {
                best.best_epoch = epoch;
            }
        }
    }
    if val.is_none() {
        best.net = net;
        best.best_val_loss = f64::NAN;
    }
    Ok(best)
}

fn spec_for(d: usize, cfg: &MlpTrainConfig, head: Head) -> Result<MlpSpec> {
    let mut sizes = vec![d];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    MlpSpec::new(sizes, head)
}

fn check_rows(train: &Dataset, val: &Dataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Capacity("estimator needs at least one training row".into()));
    }
    if val.n_features() != train.n_features() {
        return Err(Error::dim("validation and training feature counts differ"));
    }
    Ok(())
}

fn binary_labels(data: &Dataset) -> Result<Vec<f64>> {
    let y = data.class_target()?;
    if let Some(&bad) = y.iter().find(|&&l| l > 1) {
        return Err(Error::config(format!("binary classifier got label {bad}")));
    }
    Ok(y.iter().map(|&l| l as f64).collect())
}

/// Trains the classifier on every row of `train` (real and synthetic weighted
/// equally) with early stopping on cross-entropy over `val`.
pub fn train_classifier(train: &Dataset, val: &Dataset, cfg: &MlpTrainConfig, seed: SeedStream) -> Result<ClassifierModel> {
    check_rows(train, val)?;
    let y = binary_labels(train)?;
    let scaler = Standardizer::fit(train.features().view());
    let spec = spec_for(train.n_features(), cfg, Head::Sigmoid)?;
    let ones = y.iter().sum::<f64>();
    if ones == 0.0 || ones == y.len() as f64 {
        warn!("training data contains a single class; fitting a constant predictor");
        let mut net = Mlp::zeros(spec)?;
        let p = clip_prob(ones / y.len() as f64);
        let last = net.n_layers() - 1;
        net.biases_mut()[last][0] = (p / (1.0 - p)).ln();
        return Ok(ClassifierModel { net, scaler, best_epoch: 0, best_val_loss: f64::NAN, constant: true });
    }
    let x = scaler.transform(train.features().view())?;
    let net = Mlp::new(spec, &mut seed.child("init").rng())?;
    let (vx, vy) = (scaler.transform(val.features().view())?, if val.is_empty() { Vec::new() } else { binary_labels(val)? });
    let val = (!vy.is_empty()).then_some((&vx, vy.as_slice()));
    let fit = fit_network(net, &x, &y, val, cfg, loss_logistic_logits, seed)?;
    Ok(ClassifierModel { net: fit.net, scaler, best_epoch: fit.best_epoch, best_val_loss: fit.best_val_loss, constant: false })
}

/// Squared-loss MLP regressor with early stopping on validation MSE.
pub fn train_mlp_regressor(train: &Dataset, val: &Dataset, cfg: &MlpTrainConfig, seed: SeedStream) -> Result<MlpRegressorModel> {
    check_rows(train, val)?;
    let y = train.continuous_target()?;
    let y_mean = y.mean().expect("non-empty");
    let y_std = {
        let s = y.std(0.0);
        if s < 1e-12 { 1.0 } else { s }
    };
    let scaler = Standardizer::fit(train.features().view());
    let x = scaler.transform(train.features().view())?;
    let yz: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();
    let vx = scaler.transform(val.features().view())?;
    let vy: Vec<f64> = if val.is_empty() {
        Vec::new()
    } else {
        val.continuous_target()?.iter().map(|v| (v - y_mean) / y_std).collect()
    };
    let val = (!vy.is_empty()).then_some((&vx, vy.as_slice()));
    let net = Mlp::new(spec_for(train.n_features(), cfg, Head::Identity)?, &mut seed.child("init").rng())?;
    let fit = fit_network(net, &x, &yz, val, cfg, loss_mse_logits, seed)?;
    Ok(MlpRegressorModel { net: fit.net, scaler, y_mean, y_std, best_epoch: fit.best_epoch, best_val_loss: fit.best_val_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Target;
    use crate::metrics::cross_entropy_by_region;
    use ndarray::Array2;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = SeedStream::new(seed).rng();
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 2) as u32;
            let shift = if label == 1 { 1.5 } else { -1.5 };
            x[[i, 0]] = shift + rng.random_range(-1.0..1.0);
            x[[i, 1]] = rng.random_range(-3.0..3.0);
            y.push(label);
        }
        let regions = y.iter().map(|&l| l as usize + 1).collect();
        Dataset::new(x, Target::Class(y), regions, 2).unwrap()
    }

    #[test]
    fn separable_toy_reaches_low_validation_loss() {
        let train = separable(400, 1);
        let val = separable(200, 2);
        let cfg = MlpTrainConfig { hidden: vec![16, 16], epochs_max: 200, patience: 20, lr: 1e-2, batch_size: 64 };
        let model = train_classifier(&train, &val, &cfg, SeedStream::new(3)).unwrap();
        let p = model.predict_proba(val.features().view()).unwrap();
        let ce = cross_entropy_by_region(&p, val.class_target().unwrap(), val.regions(), 2).unwrap();
        assert!(ce.overall.unwrap() < 0.1, "{:?}", ce);
        assert!(model.best_epoch >= 1 && model.best_epoch <= 200);
        assert!((model.best_val_loss - ce.overall.unwrap()).abs() < 1e-6);
    }

    #[test]
    fn zero_patience_keeps_first_epoch() {
        let train = separable(100, 4);
        let val = separable(50, 5);
        let cfg = MlpTrainConfig { hidden: vec![8], epochs_max: 50, patience: 0, lr: 1e-2, batch_size: 32 };
        let model = train_classifier(&train, &val, &cfg, SeedStream::new(6)).unwrap();
        assert_eq!(model.best_epoch, 1);
        let one = MlpTrainConfig { epochs_max: 1, patience: 5, ..cfg };
        let first = train_classifier(&train, &val, &one, SeedStream::new(6)).unwrap();
        assert_eq!(model.net, first.net);
    }

    #[test]
    fn single_class_gives_constant_predictor() {
        let x = Array2::from_shape_fn((5, 2), |(i, j)| (i + j) as f64);
        let d = Dataset::new(x, Target::Class(vec![1; 5]), vec![2; 5], 2).unwrap();
        let m = train_classifier(&d, &d, &MlpTrainConfig::default(), SeedStream::new(1)).unwrap();
        assert!(m.constant);
        let p = m.predict_proba(d.features().view()).unwrap();
        assert!(p.iter().all(|&v| (v - (1.0 - 1e-7)).abs() < 1e-9));
    }

    #[test]
    fn zero_network_predicts_one_half() {
        let net = Mlp::zeros(MlpSpec::new(vec![3, 4, 1], Head::Sigmoid).unwrap()).unwrap();
        let m = ClassifierModel { net, scaler: Standardizer::identity(3), best_epoch: 0, best_val_loss: 0.0, constant: false };
        let p = m.predict_proba(Array2::from_elem((4, 3), 2.0).view()).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn regressor_fits_linear_target() {
        let mut rng = SeedStream::new(9).rng();
        let x = Array2::from_shape_simple_fn((300, 2), || rng.random_range(-1.0..1.0));
        let y = x.column(0).mapv(|v| 3.0 * v) + x.column(1).mapv(|v| -v) + 10.0;
        let d = Dataset::new(x, Target::Continuous(y), vec![1; 300], 1).unwrap();
        let cfg = MlpTrainConfig { hidden: vec![32], epochs_max: 300, patience: 30, lr: 5e-3, batch_size: 32 };
        let m = train_mlp_regressor(&d, &d, &cfg, SeedStream::new(10)).unwrap();
        let p = m.predict(d.features().view()).unwrap();
        let rmse = (p.iter().zip(d.continuous_target().unwrap()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 300.0).sqrt();
        assert!(rmse < 0.1, "rmse {rmse}");
    }
}
