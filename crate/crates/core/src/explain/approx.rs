//! Model-agnostic permutation sampling and expected-gradients estimators.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{Model, Network};

/// Models that expose the H1 logit and its input gradient.
pub trait Differentiable {
    fn h1_logit_gradient(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)>;
}

impl Differentiable for Network {
    fn h1_logit_gradient(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        Network::h1_logit_gradient(self, x)
    }
}

impl Differentiable for Model {
    fn h1_logit_gradient(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        match self {
            Model::Network(n) => n.h1_logit_gradient(x),
            Model::Forest(_) => Err(Error::NotDifferentiable(self.kind().to_string())),
        }
    }
}

fn check_background(x: &[f64], background: ArrayView2<f64>) -> Result<()> {
    if background.nrows() == 0 {
        return Err(Error::InvalidInput("background set is empty".into()));
    }
    if background.ncols() != x.len() {
        return Err(Error::InvalidInput(format!(
            "background has {} features, row has {}",
            background.ncols(),
            x.len()
        )));
    }
    Ok(())
}

/// Permutation estimator: for each random feature order and random background
/// row, switches features from background to `x` one at a time and credits
/// each feature with the change in output.
pub fn sampling_shap<F>(predict: F, x: &[f64], background: ArrayView2<f64>, n_permutations: usize, rng: &mut impl Rng) -> Result<Vec<f64>>
where
    F: Fn(ArrayView2<f64>) -> Result<Vec<f64>>,
{
    check_background(x, background)?;
    if n_permutations == 0 {
        return Err(Error::InvalidInput("n_permutations must be at least 1".into()));
    }
    let k = x.len();
    let mut phi = vec![0.0; k];
    let mut order: Vec<usize> = (0..k).collect();
    let mut path = Array2::zeros((k + 1, k));
    for _ in 0..n_permutations {
        order.shuffle(rng);
        let b = background.row(rng.random_range(0..background.nrows()));
        path.row_mut(0).assign(&b);
        for (step, &j) in order.iter().enumerate() {
            let (prev, mut next) = path.multi_slice_mut((ndarray::s![step, ..], ndarray::s![step + 1, ..]));
            next.assign(&prev);
            next[j] = x[j];
        }
        let out = predict(path.view())?;
        for (step, &j) in order.iter().enumerate() {
            phi[j] += out[step + 1] - out[step];
        }
    }
    phi.iter_mut().for_each(|v| *v /= n_permutations as f64);
    Ok(phi)
}

/// Expected gradients on the H1 logit: mean of (x - b) * grad f(b + a(x - b))
/// over background rows b and a ~ U[0, 1].
pub fn gradient_shap(model: &dyn Differentiable, x: &[f64], background: ArrayView2<f64>, n_samples: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_background(x, background)?;
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    let k = x.len();
    let mut points = Array2::zeros((n_samples, k));
    let mut deltas = Array2::zeros((n_samples, k));
    for s in 0..n_samples {
        let b = background.row(rng.random_range(0..background.nrows()));
        let alpha: f64 = rng.random();
        for j in 0..k {
            let d = x[j] - b[j];
            deltas[[s, j]] = d;
            points[[s, j]] = b[j] + alpha * d;
        }
    }
    let (_, grads) = model.h1_logit_gradient(points.view())?;
    let phi = (deltas * grads).mean_axis(ndarray::Axis(0)).expect("n_samples > 0");
    Ok(phi.to_vec())
}
