use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis, ShapeBuilder};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RawFeatures, RawMatrix, Scenario};
use crate::cohort::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.3,
            seed: 0,
            stratified: false,
        }
    }
}

/// Train-split statistics of the temporal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub medians: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns with zero train variance after imputation; emitted as 0.
    pub constant_columns: Vec<usize>,
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl NormalizationStats {
    /// Fits on raw (NaN = missing) training rows.
    pub fn fit(x2: ArrayView2<f64>) -> Self {
        let cols = x2.ncols();
        let (mut medians, mut means, mut stds, mut constant) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for c in 0..cols {
            let col = x2.column(c);
            let mut observed: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
            let median = if observed.is_empty() { 0.0 } else { median_of(&mut observed) };
            let n = col.len() as f64;
            let imputed = || col.iter().map(|&v| if v.is_nan() { median } else { v });
            let mean = imputed().sum::<f64>() / n;
            let var = imputed().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if !(std > 1e-12 * mean.abs().max(1.0)) {
                constant.push(c);
            }
            medians.push(median);
            means.push(mean);
            stds.push(std);
        }
        NormalizationStats {
            medians,
            means,
            stds,
            constant_columns: constant,
        }
    }

    pub fn impute(&self, x2: &mut Array2<f64>) {
        for (mut col, &median) in x2.axis_iter_mut(Axis(1)).zip(&self.medians) {
            col.mapv_inplace(|v| if v.is_nan() { median } else { v });
        }
    }

    pub fn normalize(&self, x2: &mut Array2<f64>) {
        let mut constant = vec![false; self.means.len()];
        for &c in &self.constant_columns {
            constant[c] = true;
        }
        for (c, mut col) in x2.axis_iter_mut(Axis(1)).enumerate() {
            if constant[c] {
                col.fill(0.0);
            } else {
                let (mean, std) = (self.means[c], self.stds[c]);
                col.mapv_inplace(|v| (v - mean) / std);
            }
        }
    }
}

/// Imputed, normalized features of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures {
    pub patient_ids: Vec<String>,
    pub labels: Vec<bool>,
    pub admission_offsets: Vec<Option<i64>>,
    pub h: usize,
    pub m: usize,
    pub t: usize,
    /// Early fusion `[flatten(X2) | X1]`, n x (m*t + h); temporal column
    /// `j*t + i` holds channel j in interval i.
    pub x: Array2<f64>,
    pub feature_names: Vec<String>,
    /// Observed-before-imputation mask, n x m x t.
    pub mask2: Array3<bool>,
    /// Latest source day of each observed cell, n x m x t.
    pub source_day: Array3<i16>,
    pub scenario: Scenario,
    pub split_seed: u64,
}

impl FusedFeatures {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.m * self.t + self.h
    }

    pub fn x1(&self) -> ArrayView2<'_, f64> {
        self.x.slice(s![.., self.m * self.t..])
    }

    /// Zero-copy n x m x t view over the temporal block of `x`.
    pub fn x2(&self) -> ArrayView3<'_, f64> {
        let (n, k) = self.x.dim();
        let slice = self.x.as_slice().expect("feature matrix is standard layout");
        ArrayView3::from_shape((n, self.m, self.t).strides((k, self.t, 1)), slice).expect("temporal block fits")
    }

    pub fn labels_u8(&self) -> Vec<u8> {
        self.labels.iter().map(|&l| u8::from(l)).collect()
    }

    /// Observed temporal cells of H1 rows sourced on or after admission.
    pub fn leakage_violations(&self) -> usize {
        let mut count = 0;
        for (r, adm) in self.admission_offsets.iter().enumerate() {
            let Some(adm) = adm.filter(|_| self.labels[r]) else { continue };
            for (observed, &day) in self.mask2.index_axis(Axis(0), r).iter().zip(self.source_day.index_axis(Axis(0), r)) {
                if *observed && i64::from(day) >= adm {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn select_rows(&self, rows: &[usize]) -> FusedFeatures {
        FusedFeatures {
            patient_ids: rows.iter().map(|&r| self.patient_ids[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            admission_offsets: rows.iter().map(|&r| self.admission_offsets[r]).collect(),
            x: self.x.select(Axis(0), rows),
            mask2: self.mask2.select(Axis(0), rows),
            source_day: self.source_day.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            ..*self
        }
    }
}

fn split_indices(labels: &[Label], rows: &[usize], cfg: &SplitConfig) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let groups: Vec<Vec<usize>> = if cfg.stratified {
        [Label::H0, Label::H1]
            .iter()
            .map(|&l| rows.iter().copied().filter(|&r| labels[r] == l).collect())
            .collect()
    } else {
        vec![rows.to_vec()]
    };
    for mut g in groups {
        g.shuffle(&mut rng);
        let n_test = (g.len() as f64 * cfg.test_fraction).round() as usize;
        test.extend_from_slice(&g[..n_test]);
        train.extend_from_slice(&g[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn build_split(raw: &RawFeatures, matrix: &RawMatrix, rows: &[usize], stats: &NormalizationStats, seed: u64) -> FusedFeatures {
    let (h, m, t) = (raw.spec.h(), raw.spec.m(), raw.t());
    let mut x2 = matrix.x2.select(Axis(0), rows);
    let mask: Vec<bool> = x2.iter().map(|v| !v.is_nan()).collect();
    stats.impute(&mut x2);
    stats.normalize(&mut x2);
    let x1 = matrix.x1.select(Axis(0), rows);
    let x = ndarray::concatenate(Axis(1), &[x2.view(), x1.view()]).expect("same row count");
    let n = rows.len();
    let source: Vec<i16> = matrix.source_day.select(Axis(0), rows).iter().copied().collect();
    FusedFeatures {
        patient_ids: rows.iter().map(|&r| matrix.patient_ids[r].clone()).collect(),
        labels: rows.iter().map(|&r| matrix.labels[r].is_h1()).collect(),
        admission_offsets: rows.iter().map(|&r| matrix.admission_offsets[r]).collect(),
        h,
        m,
        t,
        x: x.as_standard_layout().into_owned(),
        feature_names: raw.spec.column_names(t),
        mask2: Array3::from_shape_vec((n, m, t), mask).expect("mask shape"),
        source_day: Array3::from_shape_vec((n, m, t), source).expect("source shape"),
        scenario: raw.scenario,
        split_seed: seed,
    }
}

/// Drops unknown-age and empty rows, splits, fits imputation/normalization
/// statistics on the training rows only and applies them to both splits.
pub fn fit_transform(raw: &RawFeatures, split: &SplitConfig) -> Result<(FusedFeatures, FusedFeatures, NormalizationStats)> {
    if !(0.0..1.0).contains(&split.test_fraction) {
        return Err(Error::Config(format!("test_fraction must lie in [0, 1), got {}", split.test_fraction)));
    }
    let matrix = raw.materialize()?;
    let tabular_offset = 2 + raw.spec.age_bins.len();
    let keep: Vec<usize> = (0..matrix.n())
        .filter(|&r| matrix.age_known[r] && !matrix.is_empty_row(r, tabular_offset))
        .collect();
    let dropped = matrix.n() - keep.len();
    if dropped > 0 {
        log::info!("dropped {dropped} rows with unknown age or no features");
    }
    if keep.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let (train, test) = split_indices(&matrix.labels, &keep, split);
    if train.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let stats = NormalizationStats::fit(matrix.x2.select(Axis(0), &train).view());
    if !stats.constant_columns.is_empty() {
        log::warn!("{} constant temporal columns kept as zeros", stats.constant_columns.len());
    }
    let train_f = build_split(raw, &matrix, &train, &stats, split.seed);
    let test_f = build_split(raw, &matrix, &test, &stats, split.seed);
    Ok((train_f, test_f, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{default_interval_scheme, FeatureSpec, PatientEvents};
    use ndarray::array;

    #[test]
    fn median_imputation_uses_train_statistics() {
        let train = array![[1.0, f64::NAN], [13.2, 2.0], [20.0, 4.0]];
        let stats = NormalizationStats::fit(train.view());
        assert_eq!(stats.medians, vec![13.2, 3.0]);
        let mut test = array![[f64::NAN, f64::NAN]];
        stats.impute(&mut test);
        assert_eq!(test, array![[13.2, 3.0]]);
    }

    #[test]
    fn all_missing_column_is_constant() {
        let train = array![[f64::NAN, 1.0], [f64::NAN, 1.0]];
        let stats = NormalizationStats::fit(train.view());
        assert_eq!(stats.constant_columns, vec![0, 1]);
        let mut x = train.clone();
        stats.impute(&mut x);
        stats.normalize(&mut x);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    fn events(i: usize, age: Option<u32>, h1: bool) -> PatientEvents {
        PatientEvents {
            patient_id: format!("p{i}"),
            label: if h1 { Label::H1 } else { Label::H0 },
            admission_offset: h1.then_some(3),
            age,
            male: i.is_multiple_of(2),
            conditions: vec![(0, -30)],
            observations: vec![(0, 1, 60.0 + i as f64), (0, 4, 70.0 + i as f64)],
        }
    }

    fn raw(patients: Vec<PatientEvents>) -> RawFeatures {
        RawFeatures {
            spec: FeatureSpec::default(),
            scheme: default_interval_scheme(),
            scenario: Scenario::All,
            patients,
        }
    }

    #[test]
    fn unknown_age_rows_dropped() {
        let mut ps: Vec<_> = (0..20).map(|i| events(i, Some(40), i % 4 == 0)).collect();
        ps[3].age = None;
        let (train, test, _) = fit_transform(&raw(ps), &SplitConfig::default()).unwrap();
        assert_eq!(train.n() + test.n(), 19);
        assert_eq!(test.n(), 6);
        assert!(!train.patient_ids.contains(&"p3".to_string()) && !test.patient_ids.contains(&"p3".to_string()));
    }

    #[test]
    fn empty_cohort_is_an_error() {
        assert!(matches!(fit_transform(&raw(vec![]), &SplitConfig::default()), Err(Error::EmptyCohort)));
    }

    #[test]
    fn shape_and_views() {
        let ps: Vec<_> = (0..30).map(|i| events(i, Some(30 + i as u32), i % 5 == 0)).collect();
        let (train, _, _) = fit_transform(&raw(ps), &SplitConfig::default()).unwrap();
        assert_eq!((train.h, train.m, train.t, train.k()), (77, 88, 17, 1573));
        assert_eq!(train.x.ncols(), 1573);
        assert_eq!(train.feature_names.len(), 1573);
        let x2 = train.x2();
        for r in 0..train.n() {
            for j in 0..train.m {
                for i in 0..train.t {
                    assert_eq!(x2[[r, j, i]], train.x[[r, j * train.t + i]]);
                }
            }
        }
        assert_eq!(train.x1()[[0, 0]], train.x[[0, 88 * 17]]);
        assert_eq!(train.leakage_violations(), 0);
    }

    #[test]
    fn stratified_split_keeps_ratio() {
        let ps: Vec<_> = (0..100).map(|i| events(i, Some(50), i % 10 == 0)).collect();
        let cfg = SplitConfig {
            stratified: true,
            ..Default::default()
        };
        let (train, test, _) = fit_transform(&raw(ps), &cfg).unwrap();
        assert_eq!(test.labels.iter().filter(|&&l| l).count(), 3);
        assert_eq!(train.labels.iter().filter(|&&l| l).count(), 7);
    }
}
