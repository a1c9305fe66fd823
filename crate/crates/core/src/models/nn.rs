//! Dense and temporal-convolution networks with hand-written backpropagation.

use ndarray::{s, Array1, Array2, Array3, ArrayD, ArrayView2, Axis, Ix2, Ix3, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{class_weights, class_weighted_loss_batch, softmax2, weighted_sampler};

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// weight (out, in), bias (out)
    Dense { w: ArrayD<f64>, b: ArrayD<f64> },
    /// weight (out, in, KERNEL), bias (out); valid padding, stride 1, along time
    Conv1d { w: ArrayD<f64>, b: ArrayD<f64> },
    Relu,
    Dropout(f64),
    /// Non-overlapping max pooling of width 2 along time.
    MaxPool2,
    Flatten,
}

enum Cache {
    Input(ArrayD<f64>),
    Cols(Array2<f64>, [usize; 3]),
    Mask(ArrayD<f64>),
    Pool(Vec<usize>, Vec<usize>),
    Shape(Vec<usize>),
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

fn he(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || normal.sample(rng))
}

fn im2col(x: &Array3<f64>) -> Array2<f64> {
    let (b, c, t) = x.dim();
    let tout = t + 1 - KERNEL;
    let mut cols = Array2::zeros((b * tout, c * KERNEL));
    for bi in 0..b {
        for ti in 0..tout {
            let mut row = cols.row_mut(bi * tout + ti);
            for ci in 0..c {
                for k in 0..KERNEL {
                    row[ci * KERNEL + k] = x[[bi, ci, ti + k]];
                }
            }
        }
    }
    cols
}

impl Layer {
    pub fn dense(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        Layer::Dense {
            w: he(rng, &[output, input], input),
            b: ArrayD::zeros(IxDyn(&[output])),
        }
    }

    pub fn conv1d(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        Layer::Conv1d {
            w: he(rng, &[output, input, KERNEL], input * KERNEL),
            b: ArrayD::zeros(IxDyn(&[output])),
        }
    }

    fn params(&self) -> Vec<&ArrayD<f64>> {
        match self {
            Layer::Dense { w, b } | Layer::Conv1d { w, b } => vec![w, b],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        match self {
            Layer::Dense { w, b } | Layer::Conv1d { w, b } => vec![w, b],
            _ => Vec::new(),
        }
    }

    fn forward(&self, x: ArrayD<f64>, mode: &mut Mode) -> (ArrayD<f64>, Cache) {
        match self {
            Layer::Dense { w, b } => {
                let x2 = x.view().into_dimensionality::<Ix2>().expect("dense input is 2-D");
                let w2 = w.view().into_dimensionality::<Ix2>().expect("2-D weight");
                let y = x2.dot(&w2.t()) + b;
                (y.into_dyn(), Cache::Input(x))
            }
            Layer::Conv1d { w, b } => {
                let x3 = x.into_dimensionality::<Ix3>().expect("conv input is 3-D");
                let (bn, c, t) = x3.dim();
                let tout = t + 1 - KERNEL;
                let cols = im2col(&x3);
                let cout = w.shape()[0];
                let w2 = w.view().into_shape_with_order((cout, c * KERNEL)).expect("conv weight");
                let y = cols.dot(&w2.t()) + b.view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
                let y = y
                    .into_shape_with_order((bn, tout, cout))
                    .expect("conv output")
                    .permuted_axes([0, 2, 1])
                    .as_standard_layout()
                    .into_owned();
                (y.into_dyn(), Cache::Cols(cols, [bn, c, t]))
            }
            Layer::Relu => {
                let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                (&x * &mask, Cache::Mask(mask))
            }
            Layer::Dropout(rate) => match mode {
                Mode::Train(rng) if *rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask = x.mapv(|_| if rng.random::<f64>() >= *rate { keep } else { 0.0 });
                    (&x * &mask, Cache::Mask(mask))
                }
                _ => {
                    let mask = ArrayD::ones(x.raw_dim());
                    (x, Cache::Mask(mask))
                }
            },
            Layer::MaxPool2 => {
                let x3 = x.view().into_dimensionality::<Ix3>().expect("pool input is 3-D");
                let (bn, c, t) = x3.dim();
                let tout = t / 2;
                let mut y = Array3::zeros((bn, c, tout));
                let mut arg = Vec::with_capacity(bn * c * tout);
                for bi in 0..bn {
                    for ci in 0..c {
                        for ti in 0..tout {
                            let (a, b2) = (x3[[bi, ci, 2 * ti]], x3[[bi, ci, 2 * ti + 1]]);
                            let pick = if b2 > a { 2 * ti + 1 } else { 2 * ti };
                            y[[bi, ci, ti]] = a.max(b2);
                            arg.push(pick);
                        }
                    }
                }
                (y.into_dyn(), Cache::Pool(arg, vec![bn, c, t]))
            }
            Layer::Flatten => {
                let shape = x.shape().to_vec();
                let rest: usize = shape[1..].iter().product();
                let y = x.as_standard_layout().into_owned().into_shape_with_order(IxDyn(&[shape[0], rest])).expect("flatten");
                (y, Cache::Shape(shape))
            }
        }
    }

    /// Returns the input gradient and the parameter gradients (weight, bias).
    fn backward(&self, cache: Cache, g: ArrayD<f64>) -> (ArrayD<f64>, Vec<ArrayD<f64>>) {
        match (self, cache) {
            (Layer::Dense { w, .. }, Cache::Input(x)) => {
                let g2 = g.view().into_dimensionality::<Ix2>().expect("2-D grad");
                let x2 = x.view().into_dimensionality::<Ix2>().expect("2-D input");
                let w2 = w.view().into_dimensionality::<Ix2>().expect("2-D weight");
                let gw = g2.t().dot(&x2);
                let gb = g2.sum_axis(Axis(0));
                let gx = g2.dot(&w2);
                (gx.into_dyn(), vec![gw.into_dyn(), gb.into_dyn()])
            }
            (Layer::Conv1d { w, .. }, Cache::Cols(cols, [bn, c, t])) => {
                let cout = w.shape()[0];
                let tout = t + 1 - KERNEL;
                let gy = g
                    .into_dimensionality::<Ix3>()
                    .expect("3-D grad")
                    .permuted_axes([0, 2, 1])
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((bn * tout, cout))
                    .expect("conv grad");
                let w2 = w.view().into_shape_with_order((cout, c * KERNEL)).expect("conv weight");
                let gw = gy.t().dot(&cols).into_shape_with_order(IxDyn(&[cout, c, KERNEL])).expect("conv weight grad");
                let gb = gy.sum_axis(Axis(0));
                let gcols = gy.dot(&w2);
                let mut gx = Array3::zeros((bn, c, t));
                for bi in 0..bn {
                    for ti in 0..tout {
                        let row = gcols.row(bi * tout + ti);
                        for ci in 0..c {
                            for k in 0..KERNEL {
                                gx[[bi, ci, ti + k]] += row[ci * KERNEL + k];
                            }
                        }
                    }
                }
                (gx.into_dyn(), vec![gw, gb.into_dyn()])
            }
            (Layer::Relu | Layer::Dropout(_), Cache::Mask(mask)) => (g * mask, Vec::new()),
            (Layer::MaxPool2, Cache::Pool(arg, shape)) => {
                let g3 = g.view().into_dimensionality::<Ix3>().expect("3-D grad");
                let (bn, c, tout) = g3.dim();
                let mut gx = Array3::zeros((shape[0], shape[1], shape[2]));
                let mut i = 0;
                for bi in 0..bn {
                    for ci in 0..c {
                        for ti in 0..tout {
                            gx[[bi, ci, arg[i]]] += g3[[bi, ci, ti]];
                            i += 1;
                        }
                    }
                }
                (gx.into_dyn(), Vec::new())
            }
            (Layer::Flatten, Cache::Shape(shape)) => (g.into_shape_with_order(IxDyn(&shape)).expect("unflatten"), Vec::new()),
            _ => unreachable!("cache does not belong to layer"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    fn forward(&self, mut x: ArrayD<f64>, mode: &mut Mode) -> (ArrayD<f64>, Vec<Cache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(x, mode);
            caches.push(c);
            x = y;
        }
        (x, caches)
    }

    fn backward(&self, caches: Vec<Cache>, mut g: ArrayD<f64>) -> (ArrayD<f64>, Vec<ArrayD<f64>>) {
        let mut grads = Vec::new();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let (gx, mut pg) = layer.backward(cache, g);
            pg.reverse();
            grads.extend(pg);
            g = gx;
        }
        grads.reverse();
        (g, grads)
    }

    fn params(&self) -> impl Iterator<Item = &ArrayD<f64>> {
        self.layers.iter().flat_map(Layer::params)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut ArrayD<f64>> {
        self.layers.iter_mut().flat_map(Layer::params_mut)
    }

    fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if matches!(l, Layer::Dense { .. } | Layer::Conv1d { .. }) {
                names.push(format!("{prefix}.{i}.weight"));
                names.push(format!("{prefix}.{i}.bias"));
            }
        }
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Mlp,
    Fusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Hidden widths of the MLP, or of the tabular branch of the fusion net.
    pub hidden: Vec<usize>,
    pub conv_channels: Vec<usize>,
    /// Dense widths after the merge (fusion only).
    pub head_hidden: Vec<usize>,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub weighted_sampling: bool,
    pub class_weights: Option<[f64; 2]>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![128, 64],
            conv_channels: vec![16, 16],
            head_hidden: vec![32],
            dropout: 0.2,
            batch_size: 64,
            epochs: 20,
            learning_rate: 0.01,
            momentum: 0.9,
            step_size: 10,
            gamma: 0.5,
            weighted_sampling: true,
            class_weights: None,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 || self.step_size == 0 {
            return Err(Error::Config("batch_size and step_size must be positive".into()));
        }
        if self.hidden.contains(&0) || self.conv_channels.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.gamma > 0.0) {
            return Err(Error::Config("learning_rate > 0, momentum in [0, 1) and gamma > 0 required".into()));
        }
        Ok(())
    }
}

/// Input geometry of a fused row: `m * t` temporal columns followed by `h` tabular ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub h: usize,
    pub m: usize,
    pub t: usize,
}

impl Geometry {
    pub fn k(&self) -> usize {
        self.m * self.t + self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub kind: NetKind,
    pub geometry: Geometry,
    pub config: NetConfig,
    /// Whole MLP, or the tabular branch of the fusion net.
    pub tabular: Sequential,
    pub temporal: Option<Sequential>,
    pub head: Option<Sequential>,
    pub loss_curve: Vec<f64>,
}

fn dense_stack(rng: &mut ChaCha8Rng, input: usize, widths: &[usize], dropout: f64, output: Option<usize>) -> (Sequential, usize) {
    let mut layers = Vec::new();
    let mut prev = input;
    for &w in widths {
        layers.push(Layer::dense(rng, prev, w));
        layers.push(Layer::Relu);
        if dropout > 0.0 {
            layers.push(Layer::Dropout(dropout));
        }
        prev = w;
    }
    if let Some(o) = output {
        layers.push(Layer::dense(rng, prev, o));
        prev = o;
    }
    (Sequential { layers }, prev)
}

pub struct Gradients {
    pub logits: Array2<f64>,
    pub loss: f64,
    pub params: Vec<ArrayD<f64>>,
}

impl Network {
    pub fn new(kind: NetKind, geometry: Geometry, config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (tabular, temporal, head) = match kind {
            NetKind::Mlp => (dense_stack(&mut rng, geometry.k(), &config.hidden, config.dropout, Some(2)).0, None, None),
            NetKind::Fusion => {
                let (a, a_out) = dense_stack(&mut rng, geometry.h, &config.hidden, config.dropout, None);
                let mut layers = Vec::new();
                let (mut ch, mut t) = (geometry.m, geometry.t);
                for &c in &config.conv_channels {
                    if t < KERNEL + 1 {
                        return Err(Error::Config(format!("{} conv layers do not fit {} intervals", config.conv_channels.len(), geometry.t)));
                    }
                    layers.push(Layer::conv1d(&mut rng, ch, c));
                    layers.push(Layer::Relu);
                    layers.push(Layer::MaxPool2);
                    ch = c;
                    t = (t + 1 - KERNEL) / 2;
                }
                layers.push(Layer::Flatten);
                let b_out = ch * t;
                let (head, _) = dense_stack(&mut rng, a_out + b_out, &config.head_hidden, config.dropout, Some(2));
                (a, Some(Sequential { layers }), Some(head))
            }
        };
        Ok(Network {
            kind,
            geometry,
            config,
            tabular,
            temporal,
            head,
            loss_curve: Vec::new(),
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.tabular.param_names("tabular");
        if let Some(t) = &self.temporal {
            names.extend(t.param_names("temporal"));
        }
        if let Some(h) = &self.head {
            names.extend(h.param_names("head"));
        }
        names
    }

    pub fn params(&self) -> Vec<&ArrayD<f64>> {
        let mut p: Vec<&ArrayD<f64>> = self.tabular.params().collect();
        if let Some(t) = &self.temporal {
            p.extend(t.params());
        }
        if let Some(h) = &self.head {
            p.extend(h.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        let mut p: Vec<&mut ArrayD<f64>> = self.tabular.params_mut().collect();
        if let Some(t) = &mut self.temporal {
            p.extend(t.params_mut());
        }
        if let Some(h) = &mut self.head {
            p.extend(h.params_mut());
        }
        p
    }

    fn check_width(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.geometry.k() {
            return Err(Error::InvalidInput(format!("expected {} features, got {}", self.geometry.k(), x.ncols())));
        }
        Ok(())
    }

    /// Forward pass to logits; returns a closure-free backward context.
    fn forward(&self, x: ArrayView2<f64>, mode: &mut Mode) -> (Array2<f64>, Vec<Vec<Cache>>, usize) {
        match self.kind {
            NetKind::Mlp => {
                let (y, c) = self.tabular.forward(x.to_owned().into_dyn(), mode);
                (y.into_dimensionality::<Ix2>().expect("logits"), vec![c], 0)
            }
            NetKind::Fusion => {
                let Geometry { m, t, .. } = self.geometry;
                let b = x.nrows();
                let x2 = x
                    .slice(s![.., ..m * t])
                    .to_owned()
                    .into_shape_with_order((b, m, t))
                    .expect("temporal block");
                let x1 = x.slice(s![.., m * t..]).to_owned();
                let (ha, ca) = self.tabular.forward(x1.into_dyn(), mode);
                let temporal = self.temporal.as_ref().expect("fusion has a temporal branch");
                let (hb, cb) = temporal.forward(x2.into_dyn(), mode);
                let a_dim = ha.shape()[1];
                let ha = ha.into_dimensionality::<Ix2>().expect("branch A");
                let hb = hb.into_dimensionality::<Ix2>().expect("branch B");
                let merged = ndarray::concatenate(Axis(1), &[ha.view(), hb.view()]).expect("merge");
                let head = self.head.as_ref().expect("fusion has a head");
                let (y, ch) = head.forward(merged.into_dyn(), mode);
                (y.into_dimensionality::<Ix2>().expect("logits"), vec![ca, cb, ch], a_dim)
            }
        }
    }

    /// Backward from a logit gradient; returns (input gradient, parameter gradients).
    fn backward(&self, caches: Vec<Vec<Cache>>, a_dim: usize, g: Array2<f64>) -> (Array2<f64>, Vec<ArrayD<f64>>) {
        match self.kind {
            NetKind::Mlp => {
                let cache = caches.into_iter().next().expect("one cache");
                let (gx, gp) = self.tabular.backward(cache, g.into_dyn());
                (gx.into_dimensionality::<Ix2>().expect("input grad"), gp)
            }
            NetKind::Fusion => {
                let mut it = caches.into_iter();
                let (ca, cb, ch) = (it.next().expect("A"), it.next().expect("B"), it.next().expect("head"));
                let head = self.head.as_ref().expect("head");
                let (gm, gh) = head.backward(ch, g.into_dyn());
                let gm = gm.into_dimensionality::<Ix2>().expect("merge grad");
                let ga = gm.slice(s![.., ..a_dim]).to_owned();
                let gb = gm.slice(s![.., a_dim..]).to_owned();
                let (gx1, gpa) = self.tabular.backward(ca, ga.into_dyn());
                let (gx2, gpb) = self.temporal.as_ref().expect("B").backward(cb, gb.into_dyn());
                let b = gm.nrows();
                let Geometry { m, t, .. } = self.geometry;
                let gx2 = gx2.into_shape_with_order((b, m * t)).expect("flatten temporal grad");
                let gx1 = gx1.into_dimensionality::<Ix2>().expect("tabular grad");
                let gx = ndarray::concatenate(Axis(1), &[gx2.view(), gx1.view()]).expect("input grad");
                let mut params = gpa;
                params.extend(gpb);
                params.extend(gh);
                (gx, params)
            }
        }
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(&x)?;
        Ok(self.forward(x, &mut Mode::Eval).0)
    }

    /// H1 probabilities (softmax over the two logits), dropout off.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let logits = self.logits(x)?;
        Ok(logits.rows().into_iter().map(|r| softmax2([r[0], r[1]])[1]).collect())
    }

    /// H1 logit for each row and its gradient with respect to the inputs.
    pub fn h1_logit_gradient(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        self.check_width(&x)?;
        let (logits, caches, a_dim) = self.forward(x, &mut Mode::Eval);
        let mut g = Array2::zeros(logits.raw_dim());
        g.column_mut(1).fill(1.0);
        let (gx, _) = self.backward(caches, a_dim, g);
        Ok((logits.column(1).to_owned(), gx))
    }

    /// Mean class-weighted cross-entropy over the batch and its parameter gradients.
    pub fn loss_gradients(&self, x: ArrayView2<f64>, y: &[bool], weights: [f64; 2], mode: &mut Mode) -> Result<Gradients> {
        self.check_width(&x)?;
        let (logits, caches, a_dim) = self.forward(x, mode);
        let (loss, g) = class_weighted_loss_batch(logits.view(), y, weights)?;
        let (_, params) = self.backward(caches, a_dim, g);
        Ok(Gradients { logits, loss, params })
    }
}

/// Minibatch SGD with momentum and a step learning-rate schedule.
pub fn fit_network(kind: NetKind, geometry: Geometry, x: ArrayView2<f64>, y: &[bool], config: &NetConfig, seed: u64) -> Result<Network> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("network inputs must be finite (normalize first)".into()));
    }
    let mut net = Network::new(kind, geometry, config.clone(), seed)?;
    net.check_width(&x)?;
    let weights = match config.class_weights {
        Some(w) => w,
        None if config.weighted_sampling => {
            class_weights(y)?;
            [1.0, 1.0]
        }
        None => class_weights(y)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut velocity: Vec<ArrayD<f64>> = net.params().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
    for epoch in 0..config.epochs {
        let lr = config.learning_rate * config.gamma.powi((epoch / config.step_size) as i32);
        let order: Vec<usize> = if config.weighted_sampling {
            weighted_sampler(y, &mut rng)?.take(y.len()).collect()
        } else {
            let mut o: Vec<usize> = (0..y.len()).collect();
            rand::seq::SliceRandom::shuffle(o.as_mut_slice(), &mut rng);
            o
        };
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<bool> = batch.iter().map(|&i| y[i]).collect();
            let grads = match net.loss_gradients(xb.view(), &yb, weights, &mut Mode::Train(&mut rng)) {
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch }),
                other => other?,
            };
            if !grads.loss.is_finite() || grads.params.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged { epoch });
            }
            total += grads.loss * batch.len() as f64;
            for ((p, v), g) in net.params_mut().into_iter().zip(velocity.iter_mut()).zip(grads.params) {
                *v = &*v * config.momentum + g;
                p.scaled_add(-lr, v);
            }
        }
        let epoch_loss = total / order.len().max(1) as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log::debug!("{kind:?} epoch {epoch}: loss {epoch_loss:.5}");
        net.loss_curve.push(epoch_loss);
    }
    Ok(net)
}

pub fn fit_mlp(x: ArrayView2<f64>, y: &[bool], config: &NetConfig, seed: u64) -> Result<Network> {
    fit_network(NetKind::Mlp, Geometry { h: x.ncols(), m: 0, t: 0 }, x, y, config, seed)
}

pub fn fit_fusion(geometry: Geometry, x: ArrayView2<f64>, y: &[bool], config: &NetConfig, seed: u64) -> Result<Network> {
    fit_network(NetKind::Fusion, geometry, x, y, config, seed)
}

/// Per-tensor relative error between analytic and central-difference gradients.
pub fn gradient_check(net: &Network, x: ArrayView2<f64>, y: &[bool], weights: [f64; 2], dropout_seed: u64, eps: f64) -> Result<Vec<(String, f64)>> {
    let mode_rng = || ChaCha8Rng::seed_from_u64(dropout_seed);
    let mut rng = mode_rng();
    let analytic = net.loss_gradients(x, y, weights, &mut Mode::Train(&mut rng))?.params;
    let names = net.param_names();
    let mut probe = net.clone();
    let mut out = Vec::new();
    for (ti, g) in analytic.iter().enumerate() {
        let mut numeric = ArrayD::zeros(g.raw_dim());
        for idx in 0..g.len() {
            let orig = probe.params()[ti].as_slice().expect("contiguous")[idx];
            let mut eval = |v: f64| -> Result<f64> {
                probe.params_mut()[ti].as_slice_mut().expect("contiguous")[idx] = v;
                let mut r = mode_rng();
                Ok(probe.loss_gradients(x, y, weights, &mut Mode::Train(&mut r))?.loss)
            };
            let plus = eval(orig + eps)?;
            let minus = eval(orig - eps)?;
            eval(orig)?;
            numeric.as_slice_mut().expect("contiguous")[idx] = (plus - minus) / (2.0 * eps);
        }
        let diff = (g - &numeric).mapv(|v| v * v).sum().sqrt();
        let scale = g.mapv(|v| v * v).sum().sqrt().max(numeric.mapv(|v| v * v).sum().sqrt()).max(1e-12);
        log::debug!("{}: |analytic| {scale:.3e}, |diff| {diff:.3e}", names[ti]);
        out.push((names[ti].clone(), diff / scale));
    }
    Ok(out)
}
