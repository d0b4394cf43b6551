use serde::{Deserialize, Serialize};

use super::ibp::{ibp_bounds, ibp_forward_taped, spec_grad_to_bounds, worst_from, LidBox};
use crate::nn::{forward_unchecked, is_correct, loss_on_logits, Dataset, LossKind, NetworkSpec};
use crate::{Error, Result};

/// Specification functions, oriented so that lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpecKind {
    /// −1 when the prediction is (strictly) correct, else 0.
    AccuracyNeg,
    SoftAccuracyNeg,
    CrossEntropy,
    CrossEntropyClipped { lo: f64, hi: f64 },
}

impl SpecKind {
    pub const CLIP_LO: f64 = 0.0;
    pub const CLIP_HI: f64 = 10.0;

    pub fn clipped_default() -> Self {
        SpecKind::CrossEntropyClipped {
            lo: Self::CLIP_LO,
            hi: Self::CLIP_HI,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SpecKind::CrossEntropyClipped { lo, hi } if !(lo < hi) => Err(Error::InvalidArgument(format!(
                "clip range [{lo}, {hi}] is empty"
            ))),
            _ => Ok(()),
        }
    }

    /// `(a, b)` with every value in `[a, b]`, when bounded.
    pub fn range(&self) -> Option<(f64, f64)> {
        match *self {
            SpecKind::AccuracyNeg | SpecKind::SoftAccuracyNeg => Some((-1.0, 0.0)),
            SpecKind::CrossEntropy => None,
            SpecKind::CrossEntropyClipped { lo, hi } => Some((lo, hi)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SpecKind::AccuracyNeg => "accuracy_neg",
            SpecKind::SoftAccuracyNeg => "soft_accuracy_neg",
            SpecKind::CrossEntropy => "cross_entropy",
            SpecKind::CrossEntropyClipped { .. } => "cross_entropy_clipped",
        }
    }
}

/// Specification value of concrete logits.
pub fn spec_on_logits(kind: SpecKind, logits: &[f64], y: usize, classes: Option<&[usize]>) -> f64 {
    match kind {
        SpecKind::AccuracyNeg => {
            if is_correct(logits, y, classes) {
                -1.0
            } else {
                0.0
            }
        }
        SpecKind::SoftAccuracyNeg => loss_on_logits(LossKind::SoftAccuracyNeg, logits, y, classes).0,
        SpecKind::CrossEntropy => loss_on_logits(LossKind::CrossEntropy, logits, y, classes).0,
        SpecKind::CrossEntropyClipped { lo, hi } => loss_on_logits(LossKind::CrossEntropy, logits, y, classes)
            .0
            .clamp(lo, hi),
    }
}

/// Mean specification value at a single parameter vector.
pub fn point_spec(kind: SpecKind, net: &NetworkSpec, theta: &[f64], data: &Dataset) -> Result<f64> {
    let values = point_spec_samples(kind, net, theta, data)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean of the IBP-derived per-sample bounds: an upper bound on the empirical
/// specification at every parameter vector in `domain`.
pub fn spec_bound(kind: SpecKind, net: &NetworkSpec, domain: &LidBox, data: &Dataset) -> Result<f64> {
    let values = spec_bound_samples(kind, net, domain, data)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-sample IBP bounds whose mean is [`spec_bound`].
pub fn spec_bound_samples(kind: SpecKind, net: &NetworkSpec, domain: &LidBox, data: &Dataset) -> Result<Vec<f64>> {
    kind.validate()?;
    domain.check_layout(net)?;
    net.check_data(data)?;
    Ok((0..data.len())
        .map(|i| {
            let (lo, hi) = ibp_bounds(net, domain.lower(), domain.upper(), data.input(i));
            let worst = worst_from(&lo, &hi, data.label(i));
            spec_on_logits(kind, &worst, data.label(i), data.classes())
        })
        .collect())
}

/// Per-sample specification values at one parameter vector.
pub fn point_spec_samples(kind: SpecKind, net: &NetworkSpec, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    kind.validate()?;
    net.check_params(theta)?;
    net.check_data(data)?;
    Ok((0..data.len())
        .map(|i| {
            let logits = forward_unchecked(net, theta, data.input(i));
            spec_on_logits(kind, &logits, data.label(i), data.classes())
        })
        .collect())
}

/// Mean IBP soft-accuracy bound over `data` and its gradient with respect to
/// the box bounds, accumulated into `grad_lower`/`grad_upper` with `scale`.
pub(crate) fn soft_bound_and_grad(
    net: &NetworkSpec,
    lower: &[f64],
    upper: &[f64],
    data: &Dataset,
    scale: f64,
    grad_lower: &mut [f64],
    grad_upper: &mut [f64],
) -> Result<f64> {
    let n = data.len() as f64;
    let mut total = 0.0;
    for i in 0..data.len() {
        let y = data.label(i);
        let tape = ibp_forward_taped(net, lower, upper, data.input(i));
        let worst = worst_from(tape.logit_lower(), tape.logit_upper(), y);
        let (v, g) = loss_on_logits(LossKind::SoftAccuracyNeg, &worst, y, data.classes());
        if !v.is_finite() {
            return Err(Error::NonFinite { sample: i });
        }
        total += v;
        if scale != 0.0 {
            let g: Vec<f64> = g.iter().map(|v| v * scale / n).collect();
            let (gl, gu) = spec_grad_to_bounds(&g, y);
            tape.backward(net, lower, upper, gl, gu, grad_lower, grad_upper);
        }
    }
    Ok(total / n)
}
