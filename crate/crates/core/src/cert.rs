//! Finite-sample certificates.
//!
//! An IBP bound is an empirical mean over an evaluation set. To turn it into a
//! statement about the data distribution we add a margin `ε` that holds with
//! confidence `1 − β`:
//!
//! | method      | margin                               | requires              |
//! |-------------|--------------------------------------|-----------------------|
//! | `hoeffding` | `sqrt((b − a)² ln(1/β) / (2N))`      | bounded spec          |
//! | `chebyshev` | `sqrt(σ² / (Nβ))`                    | variance or bounds    |
//! | `clt`       | `z_{1−β} σ̂ / sqrt(N)` (asymptotic)   | sample std, `N ≥ 2`   |
//! | `none`      | `0` (diagnostic, not probabilistic)  |                       |

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::interval::{point_spec, spec_bound, LidBox, SpecKind};
use crate::nn::{Dataset, NetworkSpec};
use crate::registry::{Named, Registry};
use crate::{Error, Result};

fn check_common(n: usize, beta: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence parameter β = {beta} not in (0, 1)")));
    }
    Ok(())
}

pub fn hoeffding_margin(n: usize, beta: f64, range_width: f64) -> Result<f64> {
    check_common(n, beta)?;
    if !(range_width >= 0.0 && range_width.is_finite()) {
        return Err(Error::InvalidArgument(format!("range width {range_width} is invalid")));
    }
    Ok((range_width * range_width * (1.0 / beta).ln() / (2.0 * n as f64)).sqrt())
}

pub fn chebyshev_margin(n: usize, beta: f64, variance: f64) -> Result<f64> {
    check_common(n, beta)?;
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::InvalidArgument(format!("variance {variance} is invalid")));
    }
    Ok((variance / (n as f64 * beta)).sqrt())
}

pub fn clt_margin(n: usize, beta: f64, sample_std: f64) -> Result<f64> {
    check_common(n, beta)?;
    if n < 2 {
        return Err(Error::InvalidArgument("normal approximation needs N ≥ 2".into()));
    }
    if !(sample_std >= 0.0 && sample_std.is_finite()) {
        return Err(Error::InvalidArgument(format!("standard deviation {sample_std} is invalid")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - beta);
    Ok(z * sample_std / (n as f64).sqrt())
}

/// Worst-case variance of a variable confined to an interval of this width.
pub fn popoviciu_variance(range_width: f64) -> f64 {
    range_width * range_width / 4.0
}

/// Unbiased sample standard deviation.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// What a margin method may draw on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginInputs {
    pub n: usize,
    pub beta: f64,
    pub spec: SpecKind,
    /// Known variance, when the caller has one.
    pub variance: Option<f64>,
    pub sample_std: Option<f64>,
}

pub trait MarginMethod: Named + Send + Sync {
    fn margin(&self, inputs: &MarginInputs) -> Result<f64>;

    /// Valid only in the large-sample limit.
    fn asymptotic(&self) -> bool {
        false
    }

    /// Carries a `1 − β` confidence statement.
    fn probabilistic(&self) -> bool {
        true
    }
}

fn range_width(method: &str, spec: SpecKind) -> Result<f64> {
    spec.range().map(|(a, b)| b - a).ok_or_else(|| Error::MarginUnavailable {
        method: method.to_string(),
        reason: format!("{} is unbounded; clip it or use `clt`", spec.name()),
    })
}

pub struct Hoeffding;

impl Named for Hoeffding {
    fn name(&self) -> &'static str {
        "hoeffding"
    }
}

impl MarginMethod for Hoeffding {
    fn margin(&self, inputs: &MarginInputs) -> Result<f64> {
        hoeffding_margin(inputs.n, inputs.beta, range_width(self.name(), inputs.spec)?)
    }
}

/// Uses the supplied variance, else the worst case for the spec's range.
pub struct Chebyshev;

impl Named for Chebyshev {
    fn name(&self) -> &'static str {
        "chebyshev"
    }
}

impl MarginMethod for Chebyshev {
    fn margin(&self, inputs: &MarginInputs) -> Result<f64> {
        let variance = match inputs.variance {
            Some(v) => v,
            None => popoviciu_variance(range_width(self.name(), inputs.spec)?),
        };
        chebyshev_margin(inputs.n, inputs.beta, variance)
    }
}

pub struct Clt;

impl Named for Clt {
    fn name(&self) -> &'static str {
        "clt"
    }
}

impl MarginMethod for Clt {
    fn margin(&self, inputs: &MarginInputs) -> Result<f64> {
        let std = inputs.sample_std.ok_or_else(|| Error::MarginUnavailable {
            method: "clt".into(),
            reason: "sample standard deviation not supplied".into(),
        })?;
        clt_margin(inputs.n, inputs.beta, std)
    }

    fn asymptotic(&self) -> bool {
        true
    }
}

pub struct NoMargin;

impl Named for NoMargin {
    fn name(&self) -> &'static str {
        "none"
    }
}

impl MarginMethod for NoMargin {
    fn margin(&self, inputs: &MarginInputs) -> Result<f64> {
        check_common(inputs.n, inputs.beta)?;
        Ok(0.0)
    }

    fn probabilistic(&self) -> bool {
        false
    }
}

pub fn registry() -> Registry<dyn MarginMethod> {
    let mut r: Registry<dyn MarginMethod> = Registry::new("margin method");
    r.register(Arc::new(Hoeffding))
        .register(Arc::new(Chebyshev))
        .register(Arc::new(Clt))
        .register(Arc::new(NoMargin));
    r
}

/// A certified bound on the expected specification over a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub spec: SpecKind,
    /// `raw_bound + margin`: the bound on the expectation.
    pub certified_bound: f64,
    /// Empirical IBP bound on the evaluation set.
    pub raw_bound: f64,
    pub margin: f64,
    pub delta: f64,
    pub confidence: f64,
    pub confidence_beta: f64,
    pub n: usize,
    pub margin_method: String,
    pub asymptotic: bool,
    pub probabilistic: bool,
    /// `certified_bound ≤ delta`.
    pub holds: bool,
    pub eval_fingerprint: u64,
    pub box_fingerprint: u64,
}

impl Certificate {
    /// For accuracy specs: the certified minimum accuracy.
    pub fn certified_accuracy(&self) -> Option<f64> {
        match self.spec {
            SpecKind::AccuracyNeg | SpecKind::SoftAccuracyNeg => Some(-self.certified_bound),
            _ => None,
        }
    }

    pub fn raw_accuracy(&self) -> Option<f64> {
        match self.spec {
            SpecKind::AccuracyNeg | SpecKind::SoftAccuracyNeg => Some(-self.raw_bound),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub assessment: Certificate,
    /// How far the certified bound exceeds `delta`.
    pub shortfall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Certified(Certificate),
    Rejected(Rejection),
}

#[derive(Clone, Copy)]
pub struct CertificateRequest<'a> {
    pub spec: SpecKind,
    pub raw_bound: f64,
    pub method: &'a dyn MarginMethod,
    pub delta: f64,
    pub n: usize,
    pub beta: f64,
    pub sample_std: Option<f64>,
    pub eval_fingerprint: u64,
    pub box_fingerprint: u64,
}

/// Computes the certificate without deciding against `delta`.
pub fn assess(req: &CertificateRequest<'_>, optimization_fingerprints: &[u64]) -> Result<Certificate> {
    if optimization_fingerprints.contains(&req.eval_fingerprint) {
        return Err(Error::HeldOutViolation(req.eval_fingerprint));
    }
    if !req.raw_bound.is_finite() {
        return Err(Error::NonFinite { sample: 0 });
    }
    let margin = req.method.margin(&MarginInputs {
        n: req.n,
        beta: req.beta,
        spec: req.spec,
        variance: None,
        sample_std: req.sample_std,
    })?;
    let certified_bound = req.raw_bound + margin;
    Ok(Certificate {
        spec: req.spec,
        certified_bound,
        raw_bound: req.raw_bound,
        margin,
        delta: req.delta,
        confidence: 1.0 - req.beta,
        confidence_beta: req.beta,
        n: req.n,
        margin_method: req.method.name().to_string(),
        asymptotic: req.method.asymptotic(),
        probabilistic: req.method.probabilistic(),
        holds: certified_bound <= req.delta,
        eval_fingerprint: req.eval_fingerprint,
        box_fingerprint: req.box_fingerprint,
    })
}

pub fn issue_certificate(req: &CertificateRequest<'_>, optimization_fingerprints: &[u64]) -> Result<Decision> {
    let c = assess(req, optimization_fingerprints)?;
    Ok(if c.holds {
        Decision::Certified(c)
    } else {
        let shortfall = c.certified_bound - c.delta;
        Decision::Rejected(Rejection { assessment: c, shortfall })
    })
}

/// What an empirical estimate is taken over.
#[derive(Debug, Clone, Copy)]
pub enum Subject<'a> {
    Point(&'a [f64]),
    Domain(&'a LidBox),
}

pub fn empirical_spec(net: &NetworkSpec, subject: Subject<'_>, data: &Dataset, kind: SpecKind) -> Result<f64> {
    match subject {
        Subject::Point(theta) => point_spec(kind, net, theta, data),
        Subject::Domain(domain) => spec_bound(kind, net, domain, data),
    }
}
