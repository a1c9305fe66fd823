//! Fixtures shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hospred_core::cohort::{build_cohort, CodeHierarchy, CohortRules, PatternSet};
use hospred_core::features::{extract_features, FeatureSpec, IntervalScheme, RawFeatures};
use hospred_core::records::RecordStore;
use hospred_core::synth::{generate_records, GeneratorConfig};

/// Extracted features of a default synthetic cohort of `n` patients.
pub fn cohort_features(n: usize) -> RawFeatures {
    let (records, _) = generate_records(&GeneratorConfig { n_patients: n, ..Default::default() }).expect("valid generator config");
    let (store, _) = RecordStore::from_records(records);
    let hierarchy = CodeHierarchy::builtin();
    let cohort = build_cohort(&store, &PatternSet::covid_default(), &hierarchy, &CohortRules::default());
    extract_features(&store, &cohort, &FeatureSpec::default(), &IntervalScheme::default(), &hierarchy).expect("default spec")
}

/// Uniform features with a label driven by the first two columns.
pub fn toy_classification(n: usize, k: usize, seed: u64) -> (Array2<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((n, k), || rng.random::<f64>());
    let y = x.rows().into_iter().map(|r| r[0] + 0.5 * r[1] > 0.75).collect();
    (x, y)
}

pub fn uniform_sample(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}
