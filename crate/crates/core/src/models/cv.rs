use ndarray::{ArrayView2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::{fit_model, ForestParams, ForestVariant, Geometry, MaxFeatures, Model, ModelKind, NetConfig, NetKind};
use crate::error::{Error, Result};
use crate::features::Scenario;

pub const N_FOLDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Hyperparams {
    Forest(ForestVariant, ForestParams),
    Network(NetKind, NetConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSpace {
    pub n_trees: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
    #[serde(with = "depth_list")]
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    pub bootstrap: Vec<bool>,
}

impl Default for ForestSpace {
    fn default() -> Self {
        ForestSpace {
            n_trees: vec![100, 200, 300, 400, 500],
            max_features: vec![MaxFeatures::Sqrt, MaxFeatures::Log2, MaxFeatures::Fraction(0.3)],
            max_depth: vec![Some(8), Some(16), Some(24), Some(32), None],
            min_samples_split: (2..=20).collect(),
            min_samples_leaf: (1..=10).collect(),
            bootstrap: vec![true, false],
        }
    }
}

/// Depth lists with unbounded depth written as `"none"`.
mod depth_list {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Depth {
        Bounded(usize),
        Unbounded(String),
    }

    pub fn serialize<S: Serializer>(v: &[Option<usize>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|d| match d {
            Some(n) => Depth::Bounded(*n),
            None => Depth::Unbounded("none".into()),
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<usize>>, D::Error> {
        Vec::<Depth>::deserialize(d)?
            .into_iter()
            .map(|x| match x {
                Depth::Bounded(n) => Ok(Some(n)),
                Depth::Unbounded(s) if s == "none" => Ok(None),
                Depth::Unbounded(s) => Err(D::Error::custom(format!("max_depth entries are integers or \"none\", got `{s}`"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSpace {
    pub hidden: Vec<Vec<usize>>,
    pub dropout: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub momentum: Vec<f64>,
    pub batch_size: Vec<usize>,
}

impl Default for NetSpace {
    fn default() -> Self {
        NetSpace {
            hidden: vec![vec![128, 64], vec![256, 128], vec![64, 32]],
            dropout: vec![0.0, 0.2, 0.4],
            learning_rate: vec![0.003, 0.01, 0.03],
            momentum: vec![0.9],
            batch_size: vec![64],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub forest: ForestSpace,
    pub network: NetSpace,
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, values: &'a [T], name: &str) -> Result<&'a T> {
    values.choose(rng).ok_or_else(|| Error::Config(format!("search space dimension `{name}` is empty")))
}

impl SearchSpace {
    /// Draws one configuration uniformly per dimension; network configs keep
    /// the non-searched fields of `base`.
    pub fn sample(&self, kind: ModelKind, base: &NetConfig, rng: &mut ChaCha8Rng) -> Result<Hyperparams> {
        Ok(match kind {
            ModelKind::Rf | ModelKind::Et => {
                let f = &self.forest;
                let variant = if kind == ModelKind::Rf { ForestVariant::Rf } else { ForestVariant::Et };
                Hyperparams::Forest(
                    variant,
                    ForestParams {
                        n_trees: *pick(rng, &f.n_trees, "n_trees")?,
                        max_features: *pick(rng, &f.max_features, "max_features")?,
                        max_depth: *pick(rng, &f.max_depth, "max_depth")?,
                        min_samples_split: *pick(rng, &f.min_samples_split, "min_samples_split")?,
                        min_samples_leaf: *pick(rng, &f.min_samples_leaf, "min_samples_leaf")?,
                        bootstrap: *pick(rng, &f.bootstrap, "bootstrap")?,
                        class_weights: None,
                    },
                )
            }
            ModelKind::Mlp | ModelKind::Fusion => {
                let s = &self.network;
                let net = if kind == ModelKind::Mlp { NetKind::Mlp } else { NetKind::Fusion };
                Hyperparams::Network(
                    net,
                    NetConfig {
                        hidden: pick(rng, &s.hidden, "hidden")?.clone(),
                        dropout: *pick(rng, &s.dropout, "dropout")?,
                        learning_rate: *pick(rng, &s.learning_rate, "learning_rate")?,
                        momentum: *pick(rng, &s.momentum, "momentum")?,
                        batch_size: *pick(rng, &s.batch_size, "batch_size")?,
                        ..base.clone()
                    },
                )
            }
        })
    }
}

/// Shuffled assignment of `n` indices to `N_FOLDS` folds of sizes differing by at most 1.
pub fn fold_indices(n: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut folds = vec![Vec::new(); N_FOLDS];
    for (i, v) in idx.into_iter().enumerate() {
        folds[i % N_FOLDS].push(v);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub hyperparams: Hyperparams,
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub model: Model,
    pub best: usize,
    pub trials: Vec<Trial>,
}

/// Randomized search: `budget` sampled configurations, each scored by mean
/// validation F1(H1) over 3 folds; the winner is refit on all rows.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    kind: ModelKind,
    geometry: Geometry,
    x: ArrayView2<f64>,
    y: &[bool],
    space: &SearchSpace,
    base: &NetConfig,
    budget: usize,
    seed: u64,
) -> Result<CvResult> {
    if budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs = (0..budget).map(|_| space.sample(kind, base, &mut rng)).collect::<Result<Vec<_>>>()?;
    let folds = fold_indices(y.len(), &mut rng);

    let jobs: Vec<(usize, usize)> = (0..budget).flat_map(|c| (0..N_FOLDS).map(move |f| (c, f))).collect();
    let scores = jobs
        .par_iter()
        .map(|&(c, f)| {
            let train: Vec<usize> = folds.iter().enumerate().filter(|(i, _)| *i != f).flat_map(|(_, v)| v.iter().copied()).collect();
            let val = &folds[f];
            let xt = x.select(Axis(0), &train);
            let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let fold_seed = seed ^ ((c * N_FOLDS + f) as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let model = match fit_model(&configs[c], geometry, xt.view(), &yt, fold_seed) {
                Ok(m) => m,
                Err(Error::SingleClass) => {
                    log::warn!("config {c} fold {f}: single-class training fold scored as 0");
                    return Ok(0.0);
                }
                Err(e) => return Err(e),
            };
            let pred = model.predict(x.select(Axis(0), val).view())?;
            let truth: Vec<bool> = val.iter().map(|&i| y[i]).collect();
            Ok(evaluate(kind, Scenario::All, &pred, &truth)?.h1.f1.mean)
        })
        .collect::<Result<Vec<f64>>>()?;

    let trials: Vec<Trial> = configs
        .into_iter()
        .enumerate()
        .map(|(c, hyperparams)| {
            let fold_f1 = scores[c * N_FOLDS..(c + 1) * N_FOLDS].to_vec();
            let mean_f1 = fold_f1.iter().sum::<f64>() / N_FOLDS as f64;
            Trial { hyperparams, fold_f1, mean_f1 }
        })
        .collect();
    let best = trials
        .iter()
        .enumerate()
        .fold(0, |b, (i, t)| if t.mean_f1 > trials[b].mean_f1 { i } else { b });
    let model = fit_model(&trials[best].hyperparams, geometry, x, y, seed)?;
    Ok(CvResult { model, best, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn toy(n: usize) -> (Array2<f64>, Vec<bool>) {
        let x = Array2::from_shape_fn((n, 3), |(i, j)| ((i * (j + 3) * 7919) % 101) as f64 / 101.0);
        let y = (0..n).map(|i| x[[i, 0]] > 0.6).collect();
        (x, y)
    }

    fn tiny_forest_space() -> SearchSpace {
        SearchSpace {
            forest: ForestSpace {
                n_trees: vec![5],
                max_features: vec![MaxFeatures::All],
                max_depth: vec![Some(0), Some(4)],
                min_samples_split: vec![2],
                min_samples_leaf: vec![1],
                bootstrap: vec![false],
            },
            ..SearchSpace::default()
        }
    }

    #[test]
    fn dominant_config_is_selected() {
        let (x, y) = toy(120);
        let g = Geometry { h: 3, m: 0, t: 0 };
        let r = cross_validate(ModelKind::Rf, g, x.view(), &y, &tiny_forest_space(), &NetConfig::default(), 6, 1).unwrap();
        let Hyperparams::Forest(_, p) = &r.trials[r.best].hyperparams else { panic!() };
        assert_eq!(p.max_depth, Some(4));
        assert!(r.trials.iter().filter(|t| matches!(&t.hyperparams, Hyperparams::Forest(_, p) if p.max_depth == Some(0))).all(|t| t.mean_f1 == 0.0));
    }

    #[test]
    fn budget_one_equals_direct_fit() {
        let (x, y) = toy(90);
        let g = Geometry { h: 3, m: 0, t: 0 };
        let r = cross_validate(ModelKind::Et, g, x.view(), &y, &tiny_forest_space(), &NetConfig::default(), 1, 4).unwrap();
        let direct = fit_model(&r.trials[0].hyperparams, g, x.view(), &y, 4).unwrap();
        assert_eq!(r.model, direct);
    }

    #[test]
    fn errors_on_empty_space_or_budget() {
        let (x, y) = toy(30);
        let g = Geometry { h: 3, m: 0, t: 0 };
        let mut space = tiny_forest_space();
        space.forest.n_trees.clear();
        assert!(cross_validate(ModelKind::Rf, g, x.view(), &y, &space, &NetConfig::default(), 2, 0).is_err());
        assert!(cross_validate(ModelKind::Rf, g, x.view(), &y, &tiny_forest_space(), &NetConfig::default(), 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_indices(n in 0usize..500, seed in any::<u64>()) {
            let folds = fold_indices(n, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(folds.len(), N_FOLDS);
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
