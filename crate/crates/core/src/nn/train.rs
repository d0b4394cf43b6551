//! Minibatch SGD on cross-entropy with optional L2 and de-bias penalties.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{forward_taped, loss_and_grad, softmax, Dataset, Gradient, LossKind, NetworkSpec, ParamVector};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Weight of `‖θ‖²`.
    pub l2: f64,
    /// Weight of the de-bias penalty.
    pub debias: f64,
    /// Noise samples drawn per step for the de-bias penalty.
    pub noise_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            lr: 0.001,
            batch_size: 64,
            l2: 0.01,
            debias: 0.01,
            noise_samples: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} is invalid", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.l2 >= 0.0 && self.debias >= 0.0) {
            return Err(Error::InvalidArgument("penalty weights must be nonnegative".into()));
        }
        if self.debias > 0.0 && self.noise_samples == 0 {
            return Err(Error::InvalidArgument("de-bias penalty needs noise samples".into()));
        }
        Ok(())
    }
}

/// Per-coordinate uniform noise over a box of input space.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl NoiseBox {
    /// Uniform over the dataset's per-feature min/max.
    pub fn from_data(data: &Dataset) -> Self {
        let (lo, hi) = data.feature_range();
        NoiseBox { lo, hi }
    }

    pub fn draw<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..m)
            .map(|_| {
                self.lo
                    .iter()
                    .zip(&self.hi)
                    .map(|(&l, &h)| if h > l { rng.random_range(l..h) } else { l })
                    .collect()
            })
            .collect()
    }
}

/// Mean over `samples` of `‖s(h(x)) − mean(s(h(x)))‖₂` and its gradient.
pub fn debias_value_and_grad(
    net: &NetworkSpec,
    theta: &[f64],
    samples: &[Vec<f64>],
    classes: Option<&[usize]>,
) -> (f64, Gradient) {
    let mut grad = vec![0.0; theta.len()];
    if samples.is_empty() {
        return (0.0, Gradient(grad));
    }
    let scale = 1.0 / samples.len() as f64;
    let active: Vec<usize> = match classes {
        Some(cs) => cs.to_vec(),
        None => (0..net.classes()).collect(),
    };
    let uniform = 1.0 / active.len() as f64;
    let mut total = 0.0;
    for x in samples {
        let tape = forward_taped(net, theta, x);
        let s = softmax(tape.logits(), classes);
        let mut v = vec![0.0; s.len()];
        for &c in &active {
            v[c] = s[c] - uniform;
        }
        let norm = v.iter().map(|d| d * d).sum::<f64>().sqrt();
        total += norm;
        if norm == 0.0 {
            continue;
        }
        let sv: f64 = active.iter().map(|&c| s[c] * v[c]).sum();
        let mut g = vec![0.0; s.len()];
        for &c in &active {
            g[c] = s[c] * (v[c] - sv) / norm;
        }
        tape.backward(net, theta, g, scale, &mut grad);
    }
    (total * scale, Gradient(grad))
}

/// De-bias penalty on `m` noise samples drawn with `seed`.
pub fn debias_penalty(
    net: &NetworkSpec,
    theta: &[f64],
    noise: &NoiseBox,
    m: usize,
    seed: u64,
) -> Result<f64> {
    net.check_params(theta)?;
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one noise sample".into()));
    }
    if noise.lo.len() != net.input_width() || noise.hi.len() != net.input_width() {
        return Err(Error::Shape("noise box width differs from network input".into()));
    }
    let samples = noise.draw(m, &mut rng::stream(seed, "debias-penalty"));
    let (v, _) = debias_value_and_grad(net, theta, &samples, None);
    if !v.is_finite() {
        return Err(Error::NonFinite { sample: 0 });
    }
    Ok(v)
}

/// One recorded optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub gradient: Gradient,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub steps: Vec<TraceStep>,
}

/// Applied to the parameters after each optimizer step, with that step's
/// minibatch.
pub type Projection<'a> = dyn FnMut(&mut ParamVector, &Dataset) -> Result<()> + 'a;

/// The SGD loop shared by plain training, projected training and probe runs.
pub fn train_with(
    net: &NetworkSpec,
    theta0: &ParamVector,
    data: &Dataset,
    cfg: &TrainConfig,
    mut project: Option<&mut Projection<'_>>,
    mut trace: Option<&mut TrainTrace>,
) -> Result<ParamVector> {
    cfg.validate()?;
    net.check_params(theta0)?;
    net.check_data(data)?;
    let mut shuffle_rng = rng::stream(cfg.seed, "sgd-shuffle");
    let mut noise_rng = rng::stream(cfg.seed, "sgd-debias-noise");
    let noise = NoiseBox::from_data(data);
    let mut theta = theta0.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.subset(chunk)?;
            let (loss, mut grad) = loss_and_grad(net, &theta, &batch, LossKind::CrossEntropy)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Diverged { epoch, step },
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            if cfg.l2 > 0.0 {
                for (g, t) in grad.iter_mut().zip(theta.iter()) {
                    *g += 2.0 * cfg.l2 * t;
                }
            }
            if cfg.debias > 0.0 {
                let samples = noise.draw(cfg.noise_samples, &mut noise_rng);
                let (_, dg) = debias_value_and_grad(net, &theta, &samples, data.classes());
                for (g, d) in grad.iter_mut().zip(dg.iter()) {
                    *g += cfg.debias * d;
                }
            }
            let before = trace.as_ref().map(|_| theta.clone());
            for (t, g) in theta.iter_mut().zip(grad.iter()) {
                *t -= cfg.lr * g;
            }
            if let Some(p) = project.as_mut() {
                p(&mut theta, &batch)?;
            }
            if !theta.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            if let (Some(tr), Some(before)) = (trace.as_mut(), before) {
                let delta = theta.iter().zip(before.iter()).map(|(a, b)| a - b).collect();
                tr.steps.push(TraceStep { gradient: grad, delta });
            }
        }
    }
    Ok(theta)
}

/// Plain SGD from `theta0`.
pub fn sgd_train(net: &NetworkSpec, theta0: &ParamVector, data: &Dataset, cfg: &TrainConfig) -> Result<ParamVector> {
    train_with(net, theta0, data, cfg, None, None)
}

/// Plain SGD that also records every step for synaptic intelligence.
pub fn sgd_train_traced(
    net: &NetworkSpec,
    theta0: &ParamVector,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ParamVector, TrainTrace)> {
    let mut trace = TrainTrace::default();
    let theta = train_with(net, theta0, data, cfg, None, Some(&mut trace))?;
    Ok((theta, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{accuracy, Activation, LayerSpec};

    fn blobs(seed: u64, n: usize) -> Dataset {
        let mut r = rng::stream(seed, "blobs");
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let cx = if c == 0 { -2.0 } else { 2.0 };
            x.push(cx + r.random_range(-0.5..0.5));
            x.push(r.random_range(-0.5..0.5));
            y.push(c);
        }
        Dataset::new(x, 2, y).unwrap()
    }

    #[test]
    fn separable_blobs_train_to_high_accuracy() {
        let data = blobs(1, 200);
        let net = NetworkSpec::mlp(2, &[8], 2, Activation::Relu).unwrap();
        let theta0 = net.init_params(&mut rng::stream(1, "init"));
        let cfg = TrainConfig {
            lr: 0.1,
            batch_size: 16,
            l2: 0.0,
            debias: 0.0,
            ..TrainConfig::default()
        };
        let theta = sgd_train(&net, &theta0, &data, &cfg).unwrap();
        assert!(accuracy(&net, &theta, &data).unwrap() >= 0.99);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let data = blobs(2, 50);
        let net = NetworkSpec::mlp(2, &[4], 2, Activation::Tanh).unwrap();
        let theta0 = net.init_params(&mut rng::stream(2, "init"));
        let cfg = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert_eq!(sgd_train(&net, &theta0, &data, &cfg).unwrap(), theta0);
    }

    #[test]
    fn identical_seeds_give_identical_parameters() {
        let data = blobs(3, 80);
        let net = NetworkSpec::mlp(2, &[6], 2, Activation::Relu).unwrap();
        let theta0 = net.init_params(&mut rng::stream(3, "init"));
        let cfg = TrainConfig { lr: 0.05, seed: 11, ..TrainConfig::default() };
        let a = sgd_train(&net, &theta0, &data, &cfg).unwrap();
        let b = sgd_train(&net, &theta0, &data, &cfg).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn divergence_is_reported() {
        let data = blobs(4, 40);
        let net = NetworkSpec::mlp(2, &[4], 2, Activation::Identity).unwrap();
        let theta0 = net.init_params(&mut rng::stream(4, "init"));
        let cfg = TrainConfig { lr: 1e200, debias: 0.0, ..TrainConfig::default() };
        assert!(matches!(
            sgd_train(&net, &theta0, &data, &cfg),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn debias_hand_value() {
        // one identity layer producing logits (ln 9, 0): softmax (0.9, 0.1)
        let net = NetworkSpec::new(vec![LayerSpec { inputs: 1, outputs: 2, activation: Activation::Identity }]).unwrap();
        let theta = [9f64.ln(), 0.0, 0.0, 0.0];
        let (v, _) = debias_value_and_grad(&net, &theta, &[vec![1.0]], None);
        let want = ((0.4f64).powi(2) * 2.0).sqrt();
        assert!((v - want).abs() < 1e-12);
        assert!((v - 0.5657).abs() < 1e-4);
    }

    #[test]
    fn debias_zero_on_constant_logits_and_shift_invariant() {
        let net = NetworkSpec::new(vec![LayerSpec { inputs: 2, outputs: 3, activation: Activation::Identity }]).unwrap();
        let flat = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.5, 1.5, 1.5];
        let noise = NoiseBox { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] };
        assert_eq!(debias_penalty(&net, &flat, &noise, 10, 3).unwrap(), 0.0);
        let theta = [0.3, -0.2, 1.0, 0.5, -0.7, 0.1, 0.0, 0.2, -0.4];
        let mut shifted = theta;
        for b in &mut shifted[6..] {
            *b += 3.0;
        }
        let a = debias_penalty(&net, &theta, &noise, 10, 3).unwrap();
        let b = debias_penalty(&net, &shifted, &noise, 10, 3).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn debias_gradient_matches_finite_differences() {
        let net = NetworkSpec::mlp(2, &[3], 3, Activation::Tanh).unwrap();
        let theta = net.init_params(&mut rng::stream(5, "init"));
        let samples = NoiseBox { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] }.draw(5, &mut rng::stream(5, "n"));
        let (_, g) = debias_value_and_grad(&net, &theta, &samples, None);
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut p = theta.clone();
            p[i] += h;
            let mut m = theta.clone();
            m[i] -= h;
            let fd = (debias_value_and_grad(&net, &p, &samples, None).0
                - debias_value_and_grad(&net, &m, &samples, None).0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 + 1e-4 * fd.abs(), "coord {i}: {fd} vs {}", g[i]);
        }
    }
}
