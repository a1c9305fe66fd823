//! Shapley attributions on test rows, their aggregation and cross-model overlap.

pub mod approx;
pub mod summary;
pub mod tree;

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Scenario;
use crate::models::{Model, ModelKind};

pub use approx::{gradient_shap, sampling_shap, Differentiable};
pub use summary::{plot_data, summarize_shap, summary_tsv, top_k_overlap, FeatureShap, ShapSummary};
pub use tree::{forest_expected_value, tree_shap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapMethod {
    Tree,
    Sampling,
    Gradient,
}

impl ShapMethod {
    pub const ALL: [ShapMethod; 3] = [ShapMethod::Tree, ShapMethod::Sampling, ShapMethod::Gradient];

    pub fn as_str(self) -> &'static str {
        match self {
            ShapMethod::Tree => "tree",
            ShapMethod::Sampling => "sampling",
            ShapMethod::Gradient => "gradient",
        }
    }

    /// The exact method for forests, expected gradients for networks.
    pub fn default_for(kind: ModelKind) -> Self {
        if kind.is_forest() {
            ShapMethod::Tree
        } else {
            ShapMethod::Gradient
        }
    }
}

impl fmt::Display for ShapMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown SHAP method `{s}` (expected tree, sampling or gradient)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub background_size: usize,
    pub n_permutations: usize,
    pub n_samples: usize,
    pub max_rows: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            background_size: 100,
            n_permutations: 20,
            n_samples: 200,
            max_rows: 500,
            top_k: 35,
            seed: 0,
        }
    }
}

/// Attributions for a set of rows. Outputs are H1 probabilities for forests
/// and H1 logits for networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapMatrix {
    pub values: Array2<f64>,
    pub base_value: f64,
    pub outputs: Vec<f64>,
    pub feature_names: Vec<String>,
    pub model: ModelKind,
    pub scenario: Scenario,
    pub method: ShapMethod,
}

impl ShapMatrix {
    /// f(x) - base - sum(phi) per row.
    pub fn efficiency_residuals(&self) -> Vec<f64> {
        self.values
            .axis_iter(Axis(0))
            .zip(&self.outputs)
            .map(|(row, out)| out - self.base_value - row.sum())
            .collect()
    }
}

fn model_output(model: &Model, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    match model {
        Model::Forest(f) => f.predict_proba(x),
        Model::Network(n) => Ok(n.logits(x)?.column(1).to_vec()),
    }
}

/// Deterministic background subset of the training rows.
pub fn background_rows(train: ArrayView2<f64>, size: usize, seed: u64) -> Array2<f64> {
    let n = train.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, size.min(n)).into_vec();
    idx.sort_unstable();
    train.select(Axis(0), &idx)
}

/// Attributions of `rows` under `method`; rows are processed in parallel,
/// each with its own random stream.
pub fn explain_rows(
    model: &Model,
    rows: ArrayView2<f64>,
    background: ArrayView2<f64>,
    feature_names: &[String],
    scenario: Scenario,
    method: ShapMethod,
    cfg: &ExplainConfig,
) -> Result<ShapMatrix> {
    let k = model.n_features();
    if rows.ncols() != k || feature_names.len() != k {
        return Err(Error::InvalidInput(format!(
            "model has {k} features; rows have {}, names {}",
            rows.ncols(),
            feature_names.len()
        )));
    }
    let base_value = match (method, model) {
        (ShapMethod::Tree, Model::Forest(f)) => forest_expected_value(f),
        (ShapMethod::Tree, _) => return Err(Error::InvalidInput("tree SHAP needs a forest model".into())),
        _ => {
            if background.nrows() == 0 {
                return Err(Error::InvalidInput("background set is empty".into()));
            }
            let out = model_output(model, background)?;
            out.iter().sum::<f64>() / out.len() as f64
        }
    };
    let phis: Vec<Vec<f64>> = (0..rows.nrows())
        .into_par_iter()
        .map(|i| {
            let x = rows.row(i).to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            match (method, model) {
                (ShapMethod::Tree, Model::Forest(f)) => tree_shap(f, &x),
                (ShapMethod::Sampling, _) => sampling_shap(|m| model_output(model, m), &x, background, cfg.n_permutations, &mut rng),
                (ShapMethod::Gradient, _) => gradient_shap(model, &x, background, cfg.n_samples, &mut rng),
                (ShapMethod::Tree, _) => unreachable!("checked above"),
            }
        })
        .collect::<Result<_>>()?;
    let mut values = Array2::zeros((rows.nrows(), k));
    for (i, phi) in phis.iter().enumerate() {
        values.row_mut(i).assign(&ndarray::ArrayView1::from(phi.as_slice()));
    }
    Ok(ShapMatrix {
        values,
        base_value,
        outputs: model_output(model, rows)?,
        feature_names: feature_names.to_vec(),
        model: model.kind(),
        scenario,
        method,
    })
}

const SHAP_MAGIC: &[u8; 8] = b"HPSHAP1\n";

#[derive(Serialize, Deserialize)]
struct ShapHeader {
    rows: usize,
    base_value: f64,
    feature_names: Vec<String>,
    model: ModelKind,
    scenario: Scenario,
    method: ShapMethod,
}

pub fn write_shap(m: &ShapMatrix, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header = serde_json::to_vec(&ShapHeader {
        rows: m.values.nrows(),
        base_value: m.base_value,
        feature_names: m.feature_names.clone(),
        model: m.model,
        scenario: m.scenario,
        method: m.method,
    })
    .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    w.write_all(SHAP_MAGIC).map_err(io)?;
    w.write_u64::<LE>(header.len() as u64).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for v in m.outputs.iter().chain(m.values.iter()) {
        w.write_f64::<LE>(*v).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_shap(path: &Path) -> Result<ShapMatrix> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let trunc = |e: std::io::Error| Error::format(path, format!("truncated SHAP file: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != SHAP_MAGIC {
        return Err(Error::format(path, "not a SHAP file"));
    }
    let len = r.read_u64::<LE>().map_err(trunc)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(trunc)?;
    let h: ShapHeader = serde_json::from_slice(&buf).map_err(|e| Error::format(path, e.to_string()))?;
    let k = h.feature_names.len();
    let mut read = |n: usize| (0..n).map(|_| r.read_f64::<LE>()).collect::<std::io::Result<Vec<f64>>>().map_err(trunc);
    let outputs = read(h.rows)?;
    let values = Array2::from_shape_vec((h.rows, k), read(h.rows * k)?).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(ShapMatrix {
        values,
        base_value: h.base_value,
        outputs,
        feature_names: h.feature_names,
        model: h.model,
        scenario: h.scenario,
        method: h.method,
    })
}
