use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::class_weights;

pub const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Class-weighted probability of H1 among the node's training samples.
    pub p1: f64,
    pub n_samples: u32,
    pub counts: [u32; 2],
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.left == LEAF
    }

    pub fn leaf(p1: f64, counts: [u32; 2]) -> Self {
        Node {
            feature: LEAF,
            threshold: 0.0,
            left: LEAF,
            right: LEAF,
            p1,
            n_samples: counts[0] + counts[1],
            counts,
        }
    }
}

/// Array-encoded binary tree; node 0 is the root, `x <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while !self.nodes[i].is_leaf() {
            let n = &self.nodes[i];
            i = if x[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
        i
    }

    pub fn predict_p1(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].p1
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + walk(t, n.left as usize).max(walk(t, n.right as usize))
            }
        }
        walk(self, 0)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidInput("tree has no nodes".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.is_leaf() {
                if !(0.0..=1.0).contains(&n.p1) {
                    return Err(Error::InvalidInput(format!("leaf {i} probability {} outside [0, 1]", n.p1)));
                }
            } else if n.feature as usize >= k
                || n.left as usize >= self.nodes.len()
                || n.right as usize >= self.nodes.len()
                || n.left as usize <= i
                || n.right as usize <= i
            {
                return Err(Error::InvalidInput(format!("node {i} references an invalid feature or child")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestVariant {
    Rf,
    Et,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    Log2,
    Fraction(f64),
    All,
}

impl MaxFeatures {
    pub fn resolve(self, k: usize) -> usize {
        let v = match self {
            MaxFeatures::Sqrt => (k as f64).sqrt().floor() as usize,
            MaxFeatures::Log2 => (k as f64).log2().floor() as usize,
            MaxFeatures::Fraction(f) => (f * k as f64).floor() as usize,
            MaxFeatures::All => k,
        };
        v.clamp(1, k.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    /// Per-class weights; inverse class frequency when absent.
    pub class_weights: Option<[f64; 2]>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: true,
            class_weights: None,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.min_samples_split < 2 || self.min_samples_leaf < 1 {
            return Err(Error::Config("min_samples_split >= 2 and min_samples_leaf >= 1 required".into()));
        }
        if let MaxFeatures::Fraction(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("max_features fraction {f} outside (0, 1]")));
            }
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Config("class weights must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub variant: ForestVariant,
    pub params: ForestParams,
    pub class_weights: [f64; 2],
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

impl ForestModel {
    /// Mean of per-tree H1 probabilities.
    pub fn predict_p1(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_p1(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::InvalidInput(format!("expected {} features, got {}", self.n_features, x.ncols())));
        }
        Ok((0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let row = x.row(i).to_vec();
                self.predict_p1(&row)
            })
            .collect())
    }
}

/// Column-major copy of the training matrix.
struct Columns {
    n: usize,
    data: Vec<f64>,
}

impl Columns {
    fn new(x: ArrayView2<f64>) -> Self {
        let n = x.nrows();
        let mut data = Vec::with_capacity(n * x.ncols());
        for col in x.columns() {
            data.extend(col.iter());
        }
        Columns { n, data }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }
}

struct Builder<'a> {
    cols: &'a Columns,
    y: &'a [bool],
    weights: [f64; 2],
    variant: ForestVariant,
    params: &'a ForestParams,
    k: usize,
    mtry: usize,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn gini_sum(w0: f64, w1: f64) -> f64 {
    let t = w0 + w1;
    if t <= 0.0 {
        0.0
    } else {
        // total weight times Gini impurity
        t - (w0 * w0 + w1 * w1) / t
    }
}

impl Builder<'_> {
    fn counts(&self, idx: &[u32]) -> [u32; 2] {
        let mut c = [0u32; 2];
        for &i in idx {
            c[usize::from(self.y[i as usize])] += 1;
        }
        c
    }

    fn p1(&self, c: [u32; 2]) -> f64 {
        let (w0, w1) = (self.weights[0] * c[0] as f64, self.weights[1] * c[1] as f64);
        w1 / (w0 + w1)
    }

    fn best_rf(&self, idx: &[u32], feature: usize, buf: &mut Vec<(f64, bool)>) -> Option<Split> {
        let col = self.cols.col(feature);
        buf.clear();
        buf.extend(idx.iter().map(|&i| (col[i as usize], self.y[i as usize])));
        buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if buf[0].0 == buf[buf.len() - 1].0 {
            return None;
        }
        let (mut t0, mut t1) = (0.0, 0.0);
        for &(_, l) in buf.iter() {
            if l {
                t1 += self.weights[1];
            } else {
                t0 += self.weights[0];
            }
        }
        let min_leaf = self.params.min_samples_leaf;
        let (mut l0, mut l1) = (0.0, 0.0);
        let mut best: Option<Split> = None;
        for i in 0..buf.len() - 1 {
            if buf[i].1 {
                l1 += self.weights[1];
            } else {
                l0 += self.weights[0];
            }
            if buf[i].0 == buf[i + 1].0 || i + 1 < min_leaf || buf.len() - i - 1 < min_leaf {
                continue;
            }
            let score = gini_sum(l0, l1) + gini_sum(t0 - l0, t1 - l1);
            if best.as_ref().is_none_or(|b| score < b.score) {
                let mut threshold = buf[i].0 + (buf[i + 1].0 - buf[i].0) / 2.0;
                if threshold >= buf[i + 1].0 {
                    threshold = buf[i].0;
                }
                best = Some(Split { feature, threshold, score });
            }
        }
        best
    }

    fn best_et(&self, idx: &[u32], feature: usize, rng: &mut ChaCha8Rng) -> Option<Split> {
        let col = self.cols.col(feature);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in idx {
            let v = col[i as usize];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo >= hi {
            return None;
        }
        let mut threshold = rng.random_range(lo..hi);
        if threshold >= hi {
            threshold = lo;
        }
        let (mut w, mut n) = ([[0.0; 2]; 2], [0usize; 2]);
        for &i in idx {
            let side = usize::from(col[i as usize] > threshold);
            let cls = usize::from(self.y[i as usize]);
            w[side][cls] += self.weights[cls];
            n[side] += 1;
        }
        if n[0] < self.params.min_samples_leaf || n[1] < self.params.min_samples_leaf {
            return None;
        }
        let score = gini_sum(w[0][0], w[0][1]) + gini_sum(w[1][0], w[1][1]);
        Some(Split { feature, threshold, score })
    }

    fn build(&self, mut idx: Vec<u32>, rng: &mut ChaCha8Rng) -> DecisionTree {
        let mut nodes = Vec::new();
        let mut buf = Vec::with_capacity(idx.len());
        // (node slot, start, end, depth)
        let mut stack = vec![(0usize, 0usize, idx.len(), 0usize)];
        nodes.push(Node::leaf(0.0, [0, 0]));
        while let Some((slot, start, end, depth)) = stack.pop() {
            let c = self.counts(&idx[start..end]);
            nodes[slot] = Node::leaf(self.p1(c), c);
            let n = end - start;
            let pure = c[0] == 0 || c[1] == 0;
            let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
            if pure || !depth_ok || n < self.params.min_samples_split || n < 2 * self.params.min_samples_leaf {
                continue;
            }
            let mut best: Option<Split> = None;
            for f in sample(rng, self.k, self.mtry) {
                let cand = match self.variant {
                    ForestVariant::Rf => self.best_rf(&idx[start..end], f, &mut buf),
                    ForestVariant::Et => self.best_et(&idx[start..end], f, rng),
                };
                if let Some(s) = cand {
                    if best.as_ref().is_none_or(|b| s.score < b.score) {
                        best = Some(s);
                    }
                }
            }
            let Some(split) = best else { continue };
            let col = self.cols.col(split.feature);
            let mut mid = start;
            for i in start..end {
                if col[idx[i] as usize] <= split.threshold {
                    idx.swap(i, mid);
                    mid += 1;
                }
            }
            let (left, right) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::leaf(0.0, [0, 0]));
            nodes.push(Node::leaf(0.0, [0, 0]));
            let node = &mut nodes[slot];
            node.feature = split.feature as u32;
            node.threshold = split.threshold;
            node.left = left as u32;
            node.right = right as u32;
            stack.push((right, mid, end, depth + 1));
            stack.push((left, start, mid, depth + 1));
        }
        DecisionTree { nodes }
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Grows `n_trees` trees in parallel; tree `i` draws from its own stream so the
/// result does not depend on scheduling.
pub fn fit_forest(x: ArrayView2<f64>, y: &[bool], variant: ForestVariant, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    params.validate()?;
    let (n, k) = x.dim();
    if y.len() != n {
        return Err(Error::InvalidInput(format!("{n} rows but {} labels", y.len())));
    }
    if n == 0 || k == 0 {
        return Err(Error::InvalidInput("empty training matrix".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("training matrix has missing or non-finite values".into()));
    }
    let weights = match params.class_weights {
        Some(w) => w,
        None => class_weights(y)?,
    };
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    let cols = Columns::new(x);
    let builder = Builder {
        cols: &cols,
        y,
        weights,
        variant,
        params,
        k,
        mtry: params.max_features.resolve(k),
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let idx: Vec<u32> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n as u32)).collect()
            } else {
                (0..n as u32).collect()
            };
            builder.build(idx, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        variant,
        params: params.clone(),
        class_weights: weights,
        n_features: k,
        trees,
    })
}
