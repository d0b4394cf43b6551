//! Per-parameter importance scores.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::train::{sgd_train_traced, TrainConfig, TrainTrace};
use super::{forward_taped, loss_on_logits, Dataset, LossKind, NetworkSpec};
use crate::registry::{Named, Registry};
use crate::{Error, Result};

/// Damping added to the squared total displacement in synaptic intelligence.
pub const SI_DAMPING: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceKind {
    Fisher,
    SynapticIntelligence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub values: Vec<f64>,
    pub method: ImportanceKind,
}

impl ImportanceScores {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Diagonal empirical Fisher: mean squared per-sample gradient of the
/// true-label log-likelihood.
pub fn importance_fisher(net: &NetworkSpec, theta: &[f64], data: &Dataset) -> Result<ImportanceScores> {
    net.check_params(theta)?;
    net.check_data(data)?;
    let n = data.len() as f64;
    let mut scores = vec![0.0; theta.len()];
    let mut g = vec![0.0; theta.len()];
    for i in 0..data.len() {
        g.iter_mut().for_each(|v| *v = 0.0);
        let tape = forward_taped(net, theta, data.input(i));
        let (loss, dl) = loss_on_logits(LossKind::CrossEntropy, tape.logits(), data.label(i), data.classes());
        if !loss.is_finite() {
            return Err(Error::NonFinite { sample: i });
        }
        tape.backward(net, theta, dl, 1.0, &mut g);
        for (s, gi) in scores.iter_mut().zip(&g) {
            *s += gi * gi / n;
        }
    }
    Ok(ImportanceScores {
        values: scores,
        method: ImportanceKind::Fisher,
    })
}

/// Synaptic intelligence over one training trace:
/// `max(0, Σ −g·Δθ) / ((ΣΔθ)² + ξ)` per parameter.
pub fn importance_si(trace: &TrainTrace) -> Result<ImportanceScores> {
    let first = trace.steps.first().ok_or(Error::EmptyTrace)?;
    let p = first.delta.len();
    let mut path = vec![0.0; p];
    let mut total = vec![0.0; p];
    for step in &trace.steps {
        if step.delta.len() != p || step.gradient.len() != p {
            return Err(Error::Shape("trace steps have inconsistent lengths".into()));
        }
        for i in 0..p {
            path[i] -= step.gradient[i] * step.delta[i];
            total[i] += step.delta[i];
        }
    }
    let values = path
        .iter()
        .zip(&total)
        .map(|(&w, &d)| w.max(0.0) / (d * d + SI_DAMPING))
        .collect();
    Ok(ImportanceScores {
        values,
        method: ImportanceKind::SynapticIntelligence,
    })
}

/// An importance estimator selectable by name.
pub trait ImportanceMethod: Named + Send + Sync {
    /// Scores at `theta` from `data`; `probe` configures any training the
    /// method needs to run.
    fn scores(&self, net: &NetworkSpec, theta: &[f64], data: &Dataset, probe: &TrainConfig) -> Result<ImportanceScores>;
}

pub struct Fisher;

impl Named for Fisher {
    fn name(&self) -> &'static str {
        "fisher"
    }
}

impl ImportanceMethod for Fisher {
    fn scores(&self, net: &NetworkSpec, theta: &[f64], data: &Dataset, _probe: &TrainConfig) -> Result<ImportanceScores> {
        importance_fisher(net, theta, data)
    }
}

/// Runs a probe training from `theta` and scores its trace.
pub struct SynapticIntelligence;

impl Named for SynapticIntelligence {
    fn name(&self) -> &'static str {
        "synaptic-intelligence"
    }
}

impl ImportanceMethod for SynapticIntelligence {
    fn scores(&self, net: &NetworkSpec, theta: &[f64], data: &Dataset, probe: &TrainConfig) -> Result<ImportanceScores> {
        let start = super::ParamVector(theta.to_vec());
        let (_, trace) = sgd_train_traced(net, &start, data, probe)?;
        importance_si(&trace)
    }
}

pub fn registry() -> Registry<dyn ImportanceMethod> {
    let mut r: Registry<dyn ImportanceMethod> = Registry::new("importance method");
    r.register(Arc::new(Fisher)).register(Arc::new(SynapticIntelligence));
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::train::TraceStep;
    use crate::nn::{Activation, Gradient, LayerSpec};

    fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    #[test]
    fn fisher_matches_hand_computed_logistic_model() {
        // logits (w0·x + b0, w1·x + b1); with w0 − w1 = 1 and equal biases
        // the class-0 probability is σ(x).
        let net = NetworkSpec::new(vec![LayerSpec { inputs: 1, outputs: 2, activation: Activation::Identity }]).unwrap();
        let theta = [0.5, -0.5, 0.0, 0.0];
        let data = Dataset::new(vec![1.0, 2.0], 1, vec![0, 1]).unwrap();
        // d(−log p_y)/dz = softmax − e_y
        let g1 = [sigmoid(1.0) - 1.0, 1.0 - sigmoid(1.0)]; // x = 1, y = 0
        let g2 = [sigmoid(2.0), -sigmoid(2.0)]; // x = 2, y = 1
        let want = [
            ((g1[0] * 1.0).powi(2) + (g2[0] * 2.0).powi(2)) / 2.0,
            ((g1[1] * 1.0).powi(2) + (g2[1] * 2.0).powi(2)) / 2.0,
            (g1[0].powi(2) + g2[0].powi(2)) / 2.0,
            (g1[1].powi(2) + g2[1].powi(2)) / 2.0,
        ];
        let got = importance_fisher(&net, &theta, &data).unwrap();
        for (g, w) in got.values.iter().zip(want) {
            assert!((g - w).abs() < 1e-14, "{g} vs {w}");
        }
    }

    #[test]
    fn fisher_zero_gradient_and_duplication() {
        // relu hidden unit that is dead on all inputs: its incoming weights get 0
        let net = NetworkSpec::mlp(1, &[1], 2, Activation::Relu).unwrap();
        let theta = [1.0, -10.0, 0.3, -0.2, 0.1, 0.0];
        let data = Dataset::new(vec![0.5, 1.0, 2.0], 1, vec![0, 1, 0]).unwrap();
        let s = importance_fisher(&net, &theta, &data).unwrap();
        assert_eq!(s.values[0], 0.0);
        assert_eq!(s.values[1], 0.0);
        let doubled = Dataset::concat(&[&data, &data]).unwrap();
        let d = importance_fisher(&net, &theta, &doubled).unwrap();
        for (a, b) in s.values.iter().zip(&d.values) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn si_single_step_value() {
        let trace = TrainTrace {
            steps: vec![TraceStep { gradient: Gradient(vec![-1.0, 0.5]), delta: vec![0.1, 0.0] }],
        };
        let s = importance_si(&trace).unwrap();
        assert!((s.values[0] - 0.1 / (0.01 + 0.001)).abs() < 1e-12);
        assert!((s.values[0] - 9.0909).abs() < 1e-4);
        assert_eq!(s.values[1], 0.0);
    }

    #[test]
    fn si_rejects_empty_trace() {
        assert_eq!(importance_si(&TrainTrace::default()), Err(Error::EmptyTrace));
    }

    #[test]
    fn registry_names() {
        assert_eq!(registry().names(), vec!["fisher", "synaptic-intelligence"]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn si_scores_nonnegative(steps in prop::collection::vec(
                (prop::collection::vec(-5.0f64..5.0, 3), prop::collection::vec(-1.0f64..1.0, 3)), 1..20)) {
                let trace = TrainTrace {
                    steps: steps.into_iter().map(|(g, d)| TraceStep { gradient: Gradient(g), delta: d }).collect(),
                };
                let s = importance_si(&trace).unwrap();
                prop_assert!(s.values.iter().all(|v| *v >= 0.0));
            }
        }
    }
}
