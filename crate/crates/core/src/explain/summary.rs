use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ShapMatrix;
use crate::error::{Error, Result};
use crate::stats::quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureShap {
    pub name: String,
    pub median: f64,
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
    pub lo_whisker: f64,
    pub hi_whisker: f64,
}

/// Per-feature statistics of |SHAP| with features in ranking order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub features: Vec<FeatureShap>,
    pub n_rows: usize,
}

impl ShapSummary {
    pub fn top_k(&self, k: usize) -> Vec<&str> {
        self.features.iter().take(k).map(|f| f.name.as_str()).collect()
    }

    fn universe(&self) -> BTreeSet<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    /// Rank (0-based) of a feature, if present.
    pub fn rank_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }
}

/// Pools |SHAP| over the rows of every matrix (e.g. one per split seed) and
/// ranks features by median, then mean, then name.
pub fn summarize_shap(matrices: &[&ShapMatrix]) -> Result<ShapSummary> {
    let first = matrices.first().ok_or_else(|| Error::InvalidInput("no SHAP matrices to summarize".into()))?;
    if matrices.iter().any(|m| m.feature_names != first.feature_names) {
        return Err(Error::UniverseMismatch);
    }
    let n_rows: usize = matrices.iter().map(|m| m.values.nrows()).sum();
    if n_rows == 0 {
        return Err(Error::InvalidInput("SHAP matrices have no rows".into()));
    }
    let mut features: Vec<FeatureShap> = first
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut v: Vec<f64> = matrices.iter().flat_map(|m| m.values.column(j).iter().map(|x| x.abs()).collect::<Vec<_>>()).collect();
            v.sort_by(f64::total_cmp);
            let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
            let iqr = q3 - q1;
            FeatureShap {
                name: name.clone(),
                median,
                mean: v.iter().sum::<f64>() / v.len() as f64,
                q1,
                q3,
                lo_whisker: (q1 - 1.5 * iqr).max(v[0]),
                hi_whisker: (q3 + 1.5 * iqr).min(v[v.len() - 1]),
            }
        })
        .collect();
    features.sort_by(|a, b| {
        b.median
            .total_cmp(&a.median)
            .then(b.mean.total_cmp(&a.mean))
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(ShapSummary { features, n_rows })
}

/// Size of the intersection of the two top-k name sets, and that size over k.
pub fn top_k_overlap(a: &ShapSummary, b: &ShapSummary, k: usize) -> Result<(usize, f64)> {
    if a.universe() != b.universe() {
        return Err(Error::UniverseMismatch);
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let ta: BTreeSet<&str> = a.top_k(k).into_iter().collect();
    let count = b.top_k(k).into_iter().filter(|n| ta.contains(n)).count();
    Ok((count, count as f64 / k as f64))
}

/// Delimited per-feature statistics in ranking order.
pub fn summary_tsv(s: &ShapSummary) -> String {
    let mut out = String::from("rank\tfeature\tmedian\tmean\tq1\tq3\tlo_whisker\thi_whisker\n");
    for (i, f) in s.features.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            i + 1,
            f.name,
            f.median,
            f.mean,
            f.q1,
            f.q3,
            f.lo_whisker,
            f.hi_whisker
        );
    }
    out
}

/// Long-format |SHAP| values (`feature<TAB>abs_shap`) of the top-k features,
/// ready for a box-plot tool.
pub fn plot_data(matrices: &[&ShapMatrix], summary: &ShapSummary, k: usize) -> String {
    let mut out = String::from("feature\tabs_shap\n");
    for name in summary.top_k(k) {
        for m in matrices {
            if let Some(j) = m.feature_names.iter().position(|n| n == name) {
                for v in m.values.column(j) {
                    let _ = writeln!(out, "{name}\t{}", v.abs());
                }
            }
        }
    }
    out
}
