//! Classifiers, imbalance handling, model selection and evaluation.

pub mod container;
pub mod cv;
pub mod eval;
pub mod forest;
pub mod nn;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{read_model, write_model};
pub use cv::{cross_validate, fold_indices, CvResult, ForestSpace, Hyperparams, NetSpace, SearchSpace, Trial};
pub use eval::{aggregate_over_seeds, evaluate, metrics_table, ClassReport, EvalReport, Metric};
pub use forest::{fit_forest, DecisionTree, ForestModel, ForestParams, ForestVariant, MaxFeatures, Node, LEAF};
pub use nn::{fit_fusion, fit_mlp, fit_network, gradient_check, Geometry, Layer, NetConfig, NetKind, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rf,
    Et,
    Mlp,
    Fusion,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Rf, ModelKind::Et, ModelKind::Mlp, ModelKind::Fusion];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::Et => "et",
            ModelKind::Mlp => "mlp",
            ModelKind::Fusion => "fusion",
        }
    }

    pub fn is_forest(self) -> bool {
        matches!(self, ModelKind::Rf | ModelKind::Et)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}` (expected rf, et, mlp or fusion)")))
    }
}

/// A trained classifier over fused feature rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Forest(ForestModel),
    Network(Network),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Forest(f) => match f.variant {
                ForestVariant::Rf => ModelKind::Rf,
                ForestVariant::Et => ModelKind::Et,
            },
            Model::Network(n) => match n.kind {
                NetKind::Mlp => ModelKind::Mlp,
                NetKind::Fusion => ModelKind::Fusion,
            },
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Forest(f) => f.n_features,
            Model::Network(n) => n.geometry.k(),
        }
    }

    /// Probability of H1 per row.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self {
            Model::Forest(f) => f.predict_proba(x),
            Model::Network(n) => n.predict_proba(x),
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<bool>> {
        Ok(self.predict_proba(x)?.into_iter().map(|p| p > 0.5).collect())
    }
}

/// Fits one model family with fixed hyperparameters.
pub fn fit_model(hyper: &Hyperparams, geometry: Geometry, x: ArrayView2<f64>, y: &[bool], seed: u64) -> Result<Model> {
    Ok(match hyper {
        Hyperparams::Forest(variant, p) => Model::Forest(fit_forest(x, y, *variant, p, seed)?),
        Hyperparams::Network(kind, cfg) => Model::Network(fit_network(*kind, geometry, x, y, cfg, seed)?),
    })
}

/// Inverse class frequency weights, normalized to a per-sample mean of 1.
pub fn class_weights(labels: &[bool]) -> Result<[f64; 2]> {
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass);
    }
    let n = labels.len() as f64;
    Ok([n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)])
}

/// Endless stream of training indices in which each class carries total
/// draw probability 1/2.
pub struct WeightedSampler<'a, R: Rng> {
    classes: [Vec<usize>; 2],
    rng: &'a mut R,
}

impl<R: Rng> Iterator for WeightedSampler<'_, R> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let class = &self.classes[usize::from(self.rng.random_bool(0.5))];
        Some(class[self.rng.random_range(0..class.len())])
    }
}

pub fn weighted_sampler<'a, R: Rng>(labels: &[bool], rng: &'a mut R) -> Result<WeightedSampler<'a, R>> {
    let mut classes = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        classes[usize::from(l)].push(i);
    }
    if classes.iter().any(Vec::is_empty) {
        return Err(Error::SingleClass);
    }
    Ok(WeightedSampler { classes, rng })
}

pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

fn log_softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    [logits[0] - lse, logits[1] - lse]
}

/// Cross-entropy of softmax(logits) scaled by the weight of the true class.
pub fn class_weighted_loss(logits: [f64; 2], label: bool, weights: [f64; 2]) -> Result<f64> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("logits {logits:?}")));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidInput(format!("class weights must be positive, got {weights:?}")));
    }
    let c = usize::from(label);
    Ok(-weights[c] * log_softmax2(logits)[c])
}

/// Batch mean of the class-weighted loss and its gradient with respect to the logits.
pub fn class_weighted_loss_batch(logits: ArrayView2<f64>, labels: &[bool], weights: [f64; 2]) -> Result<(f64, Array2<f64>)> {
    let b = labels.len();
    let mut grad = Array2::zeros((b, 2));
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let z = [logits[[i, 0]], logits[[i, 1]]];
        total += class_weighted_loss(z, l, weights)?;
        let p = softmax2(z);
        let c = usize::from(l);
        let w = weights[c] / b as f64;
        for j in 0..2 {
            grad[[i, j]] = w * (p[j] - f64::from(u8::from(j == c)));
        }
    }
    Ok((total / b as f64, grad))
}
