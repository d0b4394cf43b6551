//! Dense feed-forward networks over a flat parameter vector.
//!
//! Layer `k` computes `ẑ_k = W_k z_{k-1} + b_k` and `z_k = σ_k(ẑ_k)`. The
//! logits are the pre-activations of the final layer, so the activation tag of
//! the last layer is never applied.
//!
//! Parameters are stored layer by layer: the row-major `out × in` weight
//! matrix, then the `out` biases.

mod data;
pub mod importance;
pub mod train;

use std::ops::{Deref, DerefMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use data::Dataset;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative at pre-activation `v`. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    /// All supported activations are nondecreasing; interval propagation
    /// relies on it.
    pub fn is_monotone(self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LayerSpec>", into = "Vec<LayerSpec>")]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
}

impl TryFrom<Vec<LayerSpec>> for NetworkSpec {
    type Error = Error;

    fn try_from(layers: Vec<LayerSpec>) -> Result<Self> {
        NetworkSpec::new(layers)
    }
}

impl From<NetworkSpec> for Vec<LayerSpec> {
    fn from(n: NetworkSpec) -> Self {
        n.layers
    }
}

/// Where one layer's parameters live in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub weights: usize,
    pub biases: usize,
    pub end: usize,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("at least one layer required".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(Error::InvalidNetwork(format!("layer {k} has zero width")));
            }
            if !l.activation.is_monotone() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {k} activation is not monotone"
                )));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::InvalidNetwork(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].outputs,
                    k + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(NetworkSpec { layers })
    }

    /// `inputs → hidden… → classes`, with `activation` on every hidden layer.
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize, activation: Activation) -> Result<Self> {
        let mut widths = vec![inputs];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| LayerSpec {
                inputs: w[0],
                outputs: w[1],
                activation: if k + 2 == widths.len() {
                    Activation::Identity
                } else {
                    activation
                },
            })
            .collect();
        NetworkSpec::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.inputs.max(l.outputs))
            .max()
            .unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.outputs * l.inputs + l.outputs).sum()
    }

    pub fn offsets(&self) -> Vec<LayerOffsets> {
        let mut at = 0;
        self.layers
            .iter()
            .map(|l| {
                let weights = at;
                let biases = weights + l.outputs * l.inputs;
                at = biases + l.outputs;
                LayerOffsets {
                    weights,
                    biases,
                    end: at,
                }
            })
            .collect()
    }

    pub fn weight_index(&self, layer: usize, row: usize, col: usize) -> usize {
        let l = &self.layers[layer];
        assert!(row < l.outputs && col < l.inputs);
        self.offsets()[layer].weights + row * l.inputs + col
    }

    pub fn bias_index(&self, layer: usize, row: usize) -> usize {
        assert!(row < self.layers[layer].outputs);
        self.offsets()[layer].biases + row
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            let limit = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            values.extend((0..l.inputs * l.outputs).map(|_| rng.random_range(-limit..=limit)));
            values.extend(std::iter::repeat_n(0.0, l.outputs));
        }
        ParamVector(values)
    }

    pub fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has length {}, network needs {}",
                theta.len(),
                self.param_count()
            )));
        }
        Ok(())
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(Error::Shape(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_width()
            )));
        }
        Ok(())
    }

    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.n_features() != self.input_width() {
            return Err(Error::Shape(format!(
                "dataset has {} features, network expects {}",
                data.n_features(),
                self.input_width()
            )));
        }
        if let Some(&bad) = data.labels().iter().find(|&&y| y >= self.classes()) {
            return Err(Error::Shape(format!(
                "label {bad} out of range for {} classes",
                self.classes()
            )));
        }
        if let Some(cs) = data.classes() {
            if cs.iter().any(|&c| c >= self.classes()) {
                return Err(Error::Shape("class mask exceeds network outputs".into()));
            }
        }
        Ok(())
    }
}

macro_rules! flat_vector {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn zeros(len: usize) -> Self {
                $name(vec![0.0; len])
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                $name(v)
            }
        }
    };
}

flat_vector!(ParamVector);
flat_vector!(Gradient);

impl ParamVector {
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::rng::Fnv64::default();
        h.write_f64s(&self.0);
        h.finish()
    }
}

#[inline]
pub(crate) fn affine(w: &[f64], b: &[f64], z: &[f64], out: &mut Vec<f64>) {
    let n = z.len();
    out.clear();
    out.extend(
        b.iter()
            .zip(w.chunks_exact(n))
            .map(|(bi, row)| bi + row.iter().zip(z).map(|(a, x)| a * x).sum::<f64>()),
    );
}

/// Logits of `net` at parameters `theta` for input `x`.
pub fn forward(net: &NetworkSpec, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    net.check_params(theta)?;
    net.check_input(x)?;
    Ok(forward_unchecked(net, theta, x))
}

pub(crate) fn forward_unchecked(net: &NetworkSpec, theta: &[f64], x: &[f64]) -> Vec<f64> {
    let mut z = x.to_vec();
    let mut next = Vec::with_capacity(net.max_width());
    let last = net.layers.len() - 1;
    let mut at = 0;
    for (k, l) in net.layers.iter().enumerate() {
        let w = &theta[at..at + l.outputs * l.inputs];
        let b = &theta[at + l.outputs * l.inputs..at + l.outputs * l.inputs + l.outputs];
        at += l.outputs * l.inputs + l.outputs;
        affine(w, b, &z, &mut next);
        if k != last {
            for v in next.iter_mut() {
                *v = l.activation.apply(*v);
            }
        }
        std::mem::swap(&mut z, &mut next);
    }
    z
}

/// Softmax restricted to `classes` (all outputs when `None`); inactive
/// entries are 0.
pub fn softmax(logits: &[f64], classes: Option<&[usize]>) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    match classes {
        None => {
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, &v) in out.iter_mut().zip(logits) {
                *o = (v - m).exp();
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
        Some(cs) => {
            let m = cs.iter().map(|&c| logits[c]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for &c in cs {
                out[c] = (logits[c] - m).exp();
                total += out[c];
            }
            for &c in cs {
                out[c] /= total;
            }
        }
    }
    out
}

/// `y` strictly beats every other active class. Ties count as wrong.
pub fn is_correct(logits: &[f64], y: usize, classes: Option<&[usize]>) -> bool {
    let target = logits[y];
    let beats = |c: usize| c == y || target > logits[c];
    match classes {
        None => (0..logits.len()).all(beats),
        Some(cs) => cs.iter().all(|&c| beats(c)),
    }
}

pub fn accuracy(net: &NetworkSpec, theta: &[f64], data: &Dataset) -> Result<f64> {
    net.check_params(theta)?;
    net.check_data(data)?;
    let correct = (0..data.len())
        .filter(|&i| {
            let logits = forward_unchecked(net, theta, data.input(i));
            is_correct(&logits, data.label(i), data.classes())
        })
        .count();
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    /// Negated softmax probability of the true class.
    SoftAccuracyNeg,
}

/// Per-sample loss and its gradient with respect to the logits.
pub(crate) fn loss_on_logits(
    kind: LossKind,
    logits: &[f64],
    y: usize,
    classes: Option<&[usize]>,
) -> (f64, Vec<f64>) {
    let s = softmax(logits, classes);
    let mut g = vec![0.0; logits.len()];
    match kind {
        LossKind::CrossEntropy => {
            let active: Box<dyn Iterator<Item = usize>> = match classes {
                None => Box::new(0..logits.len()),
                Some(cs) => Box::new(cs.iter().copied()),
            };
            for c in active {
                g[c] = s[c];
            }
            g[y] -= 1.0;
            // log-sum-exp form keeps large margins finite
            let m = match classes {
                None => logits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Some(cs) => cs.iter().map(|&c| logits[c]).fold(f64::NEG_INFINITY, f64::max),
            };
            let lse = match classes {
                None => logits.iter().map(|v| (v - m).exp()).sum::<f64>(),
                Some(cs) => cs.iter().map(|&c| (logits[c] - m).exp()).sum::<f64>(),
            }
            .ln()
                + m;
            (lse - logits[y], g)
        }
        LossKind::SoftAccuracyNeg => {
            let sy = s[y];
            for (c, gc) in g.iter_mut().enumerate() {
                *gc = sy * s[c];
            }
            g[y] -= sy;
            (-sy, g)
        }
    }
}

/// Activations recorded during a forward pass.
pub(crate) struct Tape {
    /// `acts[0]` is the input; `acts[k]` is the output of layer `k-1`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

pub(crate) fn forward_taped(net: &NetworkSpec, theta: &[f64], x: &[f64]) -> Tape {
    let mut acts = Vec::with_capacity(net.layers.len() + 1);
    let mut pre = Vec::with_capacity(net.layers.len());
    acts.push(x.to_vec());
    let last = net.layers.len() - 1;
    let mut at = 0;
    for (k, l) in net.layers.iter().enumerate() {
        let nw = l.outputs * l.inputs;
        let mut zhat = Vec::with_capacity(l.outputs);
        affine(&theta[at..at + nw], &theta[at + nw..at + nw + l.outputs], &acts[k], &mut zhat);
        at += nw + l.outputs;
        let z = if k == last {
            zhat.clone()
        } else {
            zhat.iter().map(|&v| l.activation.apply(v)).collect()
        };
        pre.push(zhat);
        acts.push(z);
    }
    Tape { acts, pre }
}

impl Tape {
    pub(crate) fn logits(&self) -> &[f64] {
        self.acts.last().expect("tape has output")
    }

    /// Accumulates `scale · ∂loss/∂θ` into `grad` given `g = ∂loss/∂logits`.
    pub(crate) fn backward(&self, net: &NetworkSpec, theta: &[f64], mut g: Vec<f64>, scale: f64, grad: &mut [f64]) {
        let offsets = net.offsets();
        for k in (0..net.layers.len()).rev() {
            let l = &net.layers[k];
            let off = offsets[k];
            let input = &self.acts[k];
            for (i, &gi) in g.iter().enumerate() {
                if gi == 0.0 {
                    continue;
                }
                let gs = gi * scale;
                grad[off.biases + i] += gs;
                let row = &mut grad[off.weights + i * l.inputs..off.weights + (i + 1) * l.inputs];
                for (r, &x) in row.iter_mut().zip(input) {
                    *r += gs * x;
                }
            }
            if k == 0 {
                break;
            }
            let w = &theta[off.weights..off.biases];
            let prev = &net.layers[k - 1];
            let mut gin = vec![0.0; l.inputs];
            for (i, &gi) in g.iter().enumerate() {
                if gi == 0.0 {
                    continue;
                }
                for (acc, &wij) in gin.iter_mut().zip(&w[i * l.inputs..(i + 1) * l.inputs]) {
                    *acc += gi * wij;
                }
            }
            for (gj, &zh) in gin.iter_mut().zip(&self.pre[k - 1]) {
                *gj *= prev.activation.derivative(zh);
            }
            g = gin;
        }
    }
}

/// Mean loss over `batch` and its exact gradient.
pub fn loss_and_grad(
    net: &NetworkSpec,
    theta: &[f64],
    batch: &Dataset,
    kind: LossKind,
) -> Result<(f64, Gradient)> {
    net.check_params(theta)?;
    net.check_data(batch)?;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut total = 0.0;
    for i in 0..batch.len() {
        let tape = forward_taped(net, theta, batch.input(i));
        let (loss, g) = loss_on_logits(kind, tape.logits(), batch.label(i), batch.classes());
        if !loss.is_finite() {
            return Err(Error::NonFinite { sample: i });
        }
        total += loss;
        tape.backward(net, theta, g, 1.0 / n, &mut grad);
    }
    Ok((total / n, Gradient(grad)))
}
