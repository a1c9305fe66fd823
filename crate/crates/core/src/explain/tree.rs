//! Path-dependent TreeSHAP, evaluated leaf by leaf.
//!
//! For a leaf with value v, let U be the distinct features split on along its
//! path, z_j the product of cover fractions of the splits on j, and o_j = 1 if
//! `x` takes every one of those splits. With O = {j : o_j = 1} and Z = U \ O,
//! the Shapley weight s! (|U| - 1 - s)! / |U|! is the integral over [0, 1] of
//! u^s (1 - u)^(|U| - 1 - s), so with g_j(u) = u + (1 - u) z_j the leaf adds
//!   -v * prod(z_Z) * int prod_O g_j(u) (1 - u)^(|Z| - 1) du          for i in Z,
//!   v * prod(z_Z) * (1 - z_i) * int prod_O\i g_j(u) (1 - u)^|Z| du   for i in O.
//! The integrands are polynomials of degree below |U| with positive factors,
//! integrated exactly by Gauss-Legendre quadrature.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::models::{DecisionTree, ForestModel};

const CACHED_RULES: usize = 64;

/// Gauss-Legendre rules with 1..=CACHED_RULES nodes; index n - 1.
fn cached_rules() -> &'static [Vec<(f64, f64)>] {
    static RULES: OnceLock<Vec<Vec<(f64, f64)>>> = OnceLock::new();
    RULES.get_or_init(|| (1..=CACHED_RULES).map(gauss_legendre).collect())
}

/// Gauss-Legendre nodes and weights on [0, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            ((x + 1.0) / 2.0, w / 2.0)
        })
        .collect()
}

struct Walker<'a> {
    tree: &'a DecisionTree,
    x: &'a [f64],
    phi: &'a mut [f64],
    z: Vec<f64>,
    o: Vec<bool>,
    active: Vec<usize>,
    /// Quadrature rules by node count, n - 1.
    rules: Vec<&'a [(f64, f64)]>,
    prod_o: Vec<f64>,
    pow_z: Vec<f64>,
}

impl Walker<'_> {
    fn leaf(&mut self, value: f64) {
        let d = self.active.len();
        if d == 0 || value == 0.0 {
            return;
        }
        // integrands have degree d - 1 <= 2n - 1
        let nodes = self.rules[d / 2];
        let mut prod_z = 1.0;
        let mut n_z = 0;
        self.prod_o.clear();
        self.prod_o.resize(nodes.len(), 1.0);
        self.pow_z.clear();
        self.pow_z.resize(nodes.len(), 1.0);
        for &f in &self.active {
            let zf = self.z[f];
            if self.o[f] {
                for (p, &(u, _)) in self.prod_o.iter_mut().zip(nodes) {
                    *p *= u + (1.0 - u) * zf;
                }
            } else {
                prod_z *= zf;
                n_z += 1;
            }
        }
        let scale = value * prod_z;
        for (p, &(u, _)) in self.pow_z.iter_mut().zip(nodes) {
            *p = (1.0 - u).powi(n_z);
        }
        if n_z > 0 {
            let e: f64 = nodes
                .iter()
                .zip(&self.prod_o)
                .zip(&self.pow_z)
                .map(|((&(u, w), p), pz)| w * p * pz / (1.0 - u))
                .sum();
            for &f in &self.active {
                if !self.o[f] {
                    self.phi[f] -= scale * e;
                }
            }
        }
        for &f in &self.active {
            if !self.o[f] {
                continue;
            }
            let zf = self.z[f];
            let e: f64 = nodes
                .iter()
                .zip(&self.prod_o)
                .zip(&self.pow_z)
                .map(|((&(u, w), p), pz)| w * p / (u + (1.0 - u) * zf) * pz)
                .sum();
            self.phi[f] += scale * (1.0 - zf) * e;
        }
    }

    fn visit(&mut self, node: usize) {
        let n = &self.tree.nodes[node];
        if n.is_leaf() {
            self.leaf(n.p1);
            return;
        }
        let f = n.feature as usize;
        let goes_left = self.x[f] <= n.threshold;
        let cover = f64::from(n.n_samples);
        for (child, hot) in [(n.left as usize, goes_left), (n.right as usize, !goes_left)] {
            let ratio = f64::from(self.tree.nodes[child].n_samples) / cover;
            let fresh = !self.active.contains(&f);
            let saved = (self.z[f], self.o[f]);
            if fresh {
                self.active.push(f);
                self.z[f] = ratio;
                self.o[f] = hot;
            } else {
                self.z[f] *= ratio;
                self.o[f] &= hot;
            }
            self.visit(child);
            if fresh {
                self.active.pop();
            }
            (self.z[f], self.o[f]) = saved;
        }
    }
}

/// Adds the attributions of one tree's H1 probability to `phi`.
pub fn tree_shap_single(tree: &DecisionTree, x: &[f64], phi: &mut [f64]) {
    let depth = tree.depth();
    let n_max = depth / 2 + 1;
    let extra: Vec<Vec<(f64, f64)>> = (CACHED_RULES + 1..=n_max).map(gauss_legendre).collect();
    let rules = cached_rules().iter().chain(&extra).map(Vec::as_slice).collect();
    let mut walker = Walker {
        tree,
        x,
        phi,
        z: vec![1.0; x.len()],
        o: vec![true; x.len()],
        active: Vec::with_capacity(depth),
        rules,
        prod_o: Vec::with_capacity(n_max),
        pow_z: Vec::with_capacity(n_max),
    };
    walker.visit(0);
}

/// Cover-weighted mean leaf value.
pub fn tree_expected_value(tree: &DecisionTree) -> f64 {
    let root = f64::from(tree.nodes[0].n_samples);
    tree.nodes.iter().filter(|n| n.is_leaf()).map(|n| n.p1 * f64::from(n.n_samples) / root).sum()
}

pub fn forest_expected_value(forest: &ForestModel) -> f64 {
    forest.trees.iter().map(tree_expected_value).sum::<f64>() / forest.trees.len() as f64
}

/// Exact Shapley values of the forest's mean H1 probability.
pub fn tree_shap(forest: &ForestModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != forest.n_features {
        return Err(Error::InvalidInput(format!("expected {} features, got {}", forest.n_features, x.len())));
    }
    let mut phi = vec![0.0; x.len()];
    for t in &forest.trees {
        tree_shap_single(t, x, &mut phi);
    }
    let scale = 1.0 / forest.trees.len() as f64;
    phi.iter_mut().for_each(|v| *v *= scale);
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_forest, ForestParams, ForestVariant, MaxFeatures, Node, LEAF};
    use crate::oracle;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stump(feature: u32, threshold: f64, lo: f64, hi: f64, covers: [u32; 2]) -> DecisionTree {
        let mut root = Node::leaf(0.0, [covers[0], covers[1]]);
        root.feature = feature;
        root.threshold = threshold;
        root.left = 1;
        root.right = 2;
        DecisionTree {
            nodes: vec![root, Node::leaf(lo, [covers[0], 0]), Node::leaf(hi, [0, covers[1]])],
        }
    }

    fn forest_of(trees: Vec<DecisionTree>, k: usize) -> ForestModel {
        ForestModel {
            variant: ForestVariant::Rf,
            params: ForestParams::default(),
            class_weights: [1.0, 1.0],
            n_features: k,
            trees,
        }
    }

    #[test]
    fn constant_forest_gives_zero() {
        let f = forest_of(vec![stump(1, 0.5, 0.3, 0.3, [4, 6])], 3);
        assert_eq!(tree_shap(&f, &[1.0, 0.0, 2.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn stump_attributes_only_its_feature() {
        let f = forest_of(vec![stump(2, 0.5, 0.2, 0.9, [3, 1])], 4);
        let x = [0.0, 5.0, 1.0, -1.0];
        let phi = tree_shap(&f, &x).unwrap();
        let base = forest_expected_value(&f);
        assert!((base - (0.75 * 0.2 + 0.25 * 0.9)).abs() < 1e-15);
        assert_eq!(phi[0], 0.0);
        assert_eq!(phi[1], 0.0);
        assert_eq!(phi[3], 0.0);
        assert!((phi[2] - (0.9 - base)).abs() < 1e-15);
    }

    #[test]
    fn symmetric_duplicates_share_credit() {
        // feature 0 then feature 1 (a copy of 0), symmetric covers
        let n = |f: u32, l: u32, r: u32, c: u32| Node {
            feature: f,
            threshold: 0.5,
            left: l,
            right: r,
            p1: 0.0,
            n_samples: c,
            counts: [c / 2, c - c / 2],
        };
        let tree = DecisionTree {
            nodes: vec![
                n(0, 1, 2, 8),
                n(1, 3, 4, 4),
                n(1, 5, 6, 4),
                Node::leaf(0.0, [2, 0]),
                Node::leaf(0.5, [1, 1]),
                Node::leaf(0.5, [1, 1]),
                Node::leaf(1.0, [0, 2]),
            ],
        };
        assert!(tree.nodes.iter().all(|n| n.is_leaf() || n.left != LEAF));
        let f = forest_of(vec![tree], 2);
        let x = [1.0, 1.0];
        let phi = tree_shap(&f, &x).unwrap();
        let brute = oracle::forest_shapley(&f, &x);
        assert!((phi[0] - phi[1]).abs() < 1e-15);
        assert!((brute[0] - brute[1]).abs() < 1e-15);
        assert!((phi[0] - brute[0]).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_and_is_efficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..8 {
            let (n, k) = (80, 6);
            let x = Array2::from_shape_simple_fn((n, k), || (rng.random_range(0..5) as f64) / 4.0);
            let y: Vec<bool> = (0..n).map(|i| x[[i, 0]] + x[[i, 1]] * x[[i, 2]] + rng.random::<f64>() * 0.5 > 1.0).collect();
            let p = ForestParams {
                n_trees: 5,
                max_depth: Some(4),
                max_features: MaxFeatures::Fraction(0.5),
                ..ForestParams::default()
            };
            let variant = if trial % 2 == 0 { ForestVariant::Rf } else { ForestVariant::Et };
            let f = fit_forest(x.view(), &y, variant, &p, trial).unwrap();
            let base = forest_expected_value(&f);
            for r in 0..5 {
                let row: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                let phi = tree_shap(&f, &row).unwrap();
                let brute = oracle::forest_shapley(&f, &row);
                for j in 0..k {
                    assert!((phi[j] - brute[j]).abs() < 1e-9, "trial {trial} row {r} feature {j}");
                }
                let resid = f.predict_p1(&row) - base - phi.iter().sum::<f64>();
                assert!(resid.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn quadrature_is_exact_for_low_degree() {
        for n in [1, 2, 7, 30, 60] {
            let rule = gauss_legendre(n);
            for deg in 0..2 * n {
                let got: f64 = rule.iter().map(|&(u, w)| w * u.powi(deg as i32)).sum();
                assert!((got - 1.0 / (deg + 1) as f64).abs() < 1e-14, "n {n} degree {deg}");
            }
        }
    }

    #[test]
    fn deep_leaf_contributions_stay_efficient() {
        // one leaf's attributions sum to v * ([x follows the whole path] - prod z)
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [1usize, 5, 40, 120, 200] {
            for _ in 0..20 {
                let tree = DecisionTree { nodes: vec![] };
                let x = vec![0.0; d];
                let mut phi = vec![0.0; d];
                let n = d / 2 + 1;
                let extra: Vec<Vec<(f64, f64)>> = (CACHED_RULES + 1..=n).map(gauss_legendre).collect();
                let mut w = Walker {
                    tree: &tree,
                    x: &x,
                    phi: &mut phi,
                    z: (0..d).map(|_| rng.random_range(0.05..1.0)).collect(),
                    o: (0..d).map(|_| rng.random_bool(0.9)).collect(),
                    active: (0..d).collect(),
                    rules: cached_rules().iter().chain(&extra).map(Vec::as_slice).collect(),
                    prod_o: Vec::new(),
                    pow_z: Vec::new(),
                };
                let want = f64::from(u8::from(w.o.iter().all(|&o| o))) - w.z.iter().product::<f64>();
                w.leaf(1.0);
                assert!((phi.iter().sum::<f64>() - want).abs() < 1e-12, "depth {d}");
            }
        }
    }

    #[test]
    fn unused_features_get_exact_zero() {
        let x = Array2::from_shape_fn((50, 4), |(i, j)| if j == 3 { 1.0 } else { ((i * (j + 2)) % 7) as f64 });
        let y: Vec<bool> = (0..50).map(|i| x[[i, 0]] > 3.0).collect();
        let f = fit_forest(x.view(), &y, ForestVariant::Rf, &ForestParams { n_trees: 4, ..Default::default() }, 1).unwrap();
        let phi = tree_shap(&f, &[2.0, 1.0, 4.0, 1.0]).unwrap();
        assert_eq!(phi[3], 0.0);
        assert!(tree_shap(&f, &[1.0]).is_err());
    }
}
