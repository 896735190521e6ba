//! Downstream estimators fitted on augmented samples.

pub mod forest;
pub mod mlp;

pub use forest::{brute_force_split, grow_tree, train_forest, ForestConfig, ForestModel, Node, Tree};
pub use mlp::{train_classifier, train_mlp_regressor, ClassifierModel, MlpRegressorModel, MlpTrainConfig};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::metrics::{cross_entropy_by_region, rmse_by_region, RegionMetric};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorConfig {
    Classifier(MlpTrainConfig),
    Forest(ForestConfig),
    MlpRegressor(MlpTrainConfig),
}

impl EstimatorConfig {
    /// Name of the evaluation metric: cross-entropy for the classifier, RMSE otherwise.
    pub fn metric_name(&self) -> &'static str {
        match self {
            EstimatorConfig::Classifier(_) => "cross_entropy",
            _ => "rmse",
        }
    }

    pub fn fit(&self, train: &Dataset, val: &Dataset, seed: SeedStream) -> Result<FittedEstimator> {
        Ok(match self {
            EstimatorConfig::Classifier(c) => FittedEstimator::Classifier(train_classifier(train, val, c, seed)?),
            EstimatorConfig::Forest(c) => FittedEstimator::Forest(train_forest(train, c, seed)?),
            EstimatorConfig::MlpRegressor(c) => FittedEstimator::MlpRegressor(train_mlp_regressor(train, val, c, seed)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedEstimator {
    Classifier(ClassifierModel),
    Forest(ForestModel),
    MlpRegressor(MlpRegressorModel),
}

impl FittedEstimator {
    /// Probabilities for the classifier, predicted values for regressors.
    pub fn predict(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self {
            FittedEstimator::Classifier(m) => m.predict_proba(rows),
            FittedEstimator::Forest(m) => m.predict(rows),
            FittedEstimator::MlpRegressor(m) => m.predict(rows),
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self, FittedEstimator::Classifier(_))
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<RegionMetric> {
        let preds = self.predict(data.features().view())?;
        evaluate_predictions(self.is_classifier(), &preds, data)
    }
}

/// Cross-entropy by region for probabilities, RMSE by region for values.
pub fn evaluate_predictions(classification: bool, preds: &[f64], data: &Dataset) -> Result<RegionMetric> {
    if classification {
        cross_entropy_by_region(preds, data.class_target()?, data.regions(), data.n_regions())
    } else {
        let y = data.continuous_target()?;
        rmse_by_region(preds, y.as_slice().expect("contiguous"), data.regions(), data.n_regions())
    }
}
