//! Growing locally invariant domains.
//!
//! A box `α = [αᴸ, αᵁ]` around `θ` is grown by alternating gradient
//! descent-ascent on
//!
//! ```text
//! L(α, λ) = |α|_S + R(α) + Σᵢ λᵢ (δᵢ − φ̄ᵢ(α))
//! ```
//!
//! where `|α|_S` is the mean interval width over coordinates not frozen by a
//! bias, `R` an optional importance bias and
//! `φ̄ᵢ` the IBP bound on the soft accuracy of constraint `i` over a minibatch.
//! The multipliers grow while a constraint is violated; the box ascends `L`.
//! Periodic snapshots are re-certified against the hard accuracy bound on
//! held-out data.

mod bias;
mod checkpoint;

pub use bias::{make_bias, BiasMode, BiasSpec};
pub use checkpoint::{certify_box, compute_lid, Checkpoint, CheckpointSet, ConstraintSet, LidTrace, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use serde::{Deserialize, Serialize};

use crate::interval::{soft_bound_and_grad, LidBox};
use crate::nn::{Dataset, NetworkSpec, ParamVector};
use crate::{Error, Result};

/// How the size of a box is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeMetric {
    /// `(1/p) Σ (αᵁᵢ − αᴸᵢ)`.
    #[default]
    MeanWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidConfig {
    pub primal_lr: f64,
    pub dual_lr: f64,
    pub iterations: usize,
    pub checkpoint_period: usize,
    /// Constraint minibatch drawn per iteration from each constraint's
    /// optimization data.
    pub batch_size: usize,
    pub size_metric: SizeMetric,
    pub initial_radius: f64,
    /// Margin method used when certifying checkpoints.
    pub margin: String,
    pub confidence_beta: f64,
    pub seed: u64,
    #[serde(skip)]
    pub bias: Option<BiasSpec>,
}

impl Default for LidConfig {
    fn default() -> Self {
        LidConfig {
            primal_lr: 0.33,
            dual_lr: 0.01,
            iterations: 200,
            checkpoint_period: 20,
            batch_size: 400,
            size_metric: SizeMetric::MeanWidth,
            initial_radius: 1e-3,
            margin: "hoeffding".into(),
            confidence_beta: 0.05,
            seed: 0,
            bias: None,
        }
    }
}

impl LidConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.primal_lr > 0.0 && self.primal_lr.is_finite()) {
            return bad("primal step must be positive");
        }
        if !(self.dual_lr > 0.0 && self.dual_lr.is_finite()) {
            return bad("dual step must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.checkpoint_period == 0 {
            return bad("checkpoint period must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("constraint batch size must be at least 1");
        }
        if !(self.initial_radius > 0.0 && self.initial_radius.is_finite()) {
            return bad("initial radius must be positive");
        }
        if !(self.confidence_beta > 0.0 && self.confidence_beta < 1.0) {
            return bad("confidence β must lie in (0, 1)");
        }
        crate::cert::registry().get(&self.margin)?;
        Ok(())
    }
}

pub fn size_metric(domain: &LidBox) -> f64 {
    if domain.is_empty() {
        return 0.0;
    }
    domain.widths().iter().sum::<f64>() / domain.len() as f64
}

/// Box and multipliers during descent-ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct GdaState {
    pub domain: LidBox,
    pub lambdas: Vec<f64>,
    pub iteration: usize,
}

impl GdaState {
    /// `[θ − r₀, θ + r₀]` with frozen coordinates pinned and every multiplier 0.
    pub fn initial(theta: &ParamVector, radius: f64, constraints: usize, bias: Option<&BiasSpec>) -> Result<Self> {
        let mut domain = LidBox::around(theta, radius)?;
        if let Some(b) = bias {
            b.check_len(theta.len())?;
            let (lo, hi, nominal) = domain.bounds_mut();
            for &i in b.frozen() {
                lo[i] = nominal[i];
                hi[i] = nominal[i];
            }
        }
        Ok(GdaState {
            domain,
            lambdas: vec![0.0; constraints],
            iteration: 0,
        })
    }
}

/// Value and gradients of the Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianEval {
    pub value: f64,
    /// Mean width over the free coordinates.
    pub size: f64,
    pub regularizer: f64,
    /// `φ̄ᵢ` per constraint.
    pub surrogate: Vec<f64>,
    pub grad_lower: Vec<f64>,
    pub grad_upper: Vec<f64>,
    /// `δᵢ − φ̄ᵢ`.
    pub grad_lambda: Vec<f64>,
}

/// Per-constraint surrogate values and their gradients wrt the bounds.
struct ConstraintGrads {
    values: Vec<f64>,
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<f64>>,
}

fn constraint_grads(net: &NetworkSpec, domain: &LidBox, batches: &[&Dataset]) -> Result<ConstraintGrads> {
    let p = domain.len();
    let mut out = ConstraintGrads {
        values: Vec::with_capacity(batches.len()),
        lower: Vec::with_capacity(batches.len()),
        upper: Vec::with_capacity(batches.len()),
    };
    for batch in batches {
        net.check_data(batch)?;
        let mut gl = vec![0.0; p];
        let mut gu = vec![0.0; p];
        let v = soft_bound_and_grad(net, domain.lower(), domain.upper(), batch, 1.0, &mut gl, &mut gu)?;
        out.values.push(v);
        out.lower.push(gl);
        out.upper.push(gu);
    }
    Ok(out)
}

fn check_inputs(net: &NetworkSpec, state: &GdaState, batches: &[&Dataset], deltas: &[f64]) -> Result<()> {
    state.domain.check_layout(net)?;
    if batches.len() != deltas.len() || batches.len() != state.lambdas.len() {
        return Err(Error::Shape(format!(
            "{} batches, {} thresholds, {} multipliers",
            batches.len(),
            deltas.len(),
            state.lambdas.len()
        )));
    }
    Ok(())
}

/// Assembles the Lagrangian at multipliers `lambdas`.
fn assemble(domain: &LidBox, cg: &ConstraintGrads, deltas: &[f64], lambdas: &[f64], bias: Option<&BiasSpec>) -> Result<LagrangianEval> {
    let p = domain.len();
    // widths are averaged over the coordinates being optimized, so freezing
    // does not slow the growth of the rest
    let free = (p - bias.map_or(0, |b| b.frozen().len())).max(1) as f64;
    let size = domain.widths().iter().sum::<f64>() / free;
    let mut grad_lower = vec![-1.0 / free; p];
    let mut grad_upper = vec![1.0 / free; p];
    let regularizer = match bias {
        Some(b) => b.regularizer(domain, &mut grad_lower, &mut grad_upper),
        None => 0.0,
    };
    let mut value = size + regularizer;
    let mut grad_lambda = Vec::with_capacity(deltas.len());
    for (i, (&d, &lam)) in deltas.iter().zip(lambdas).enumerate() {
        let slack = d - cg.values[i];
        value += lam * slack;
        grad_lambda.push(slack);
        if lam != 0.0 {
            for j in 0..p {
                grad_lower[j] -= lam * cg.lower[i][j];
                grad_upper[j] -= lam * cg.upper[i][j];
            }
        }
    }
    if !value.is_finite() || !grad_lower.iter().chain(&grad_upper).all(|g| g.is_finite()) {
        return Err(Error::NonFinite { sample: 0 });
    }
    Ok(LagrangianEval {
        value,
        size,
        regularizer,
        surrogate: cg.values.clone(),
        grad_lower,
        grad_upper,
        grad_lambda,
    })
}

/// The Lagrangian at the current state, one minibatch per constraint.
pub fn lagrangian(
    net: &NetworkSpec,
    state: &GdaState,
    batches: &[&Dataset],
    deltas: &[f64],
    bias: Option<&BiasSpec>,
) -> Result<LagrangianEval> {
    check_inputs(net, state, batches, deltas)?;
    let cg = constraint_grads(net, &state.domain, batches)?;
    assemble(&state.domain, &cg, deltas, &state.lambdas, bias)
}

/// One descent-ascent step: multipliers first, then the box at the new
/// multipliers, then projection back around the nominal.
pub fn gda_step(
    net: &NetworkSpec,
    state: &mut GdaState,
    batches: &[&Dataset],
    deltas: &[f64],
    cfg: &LidConfig,
    bias: Option<&BiasSpec>,
) -> Result<LagrangianEval> {
    check_inputs(net, state, batches, deltas)?;
    let cg = constraint_grads(net, &state.domain, batches)?;
    for (lam, (&v, &d)) in state.lambdas.iter_mut().zip(cg.values.iter().zip(deltas)) {
        *lam = (*lam + cfg.dual_lr * (v - d)).max(0.0);
    }
    let eval = assemble(&state.domain, &cg, deltas, &state.lambdas, bias)?;
    let (lo, hi, nominal) = state.domain.bounds_mut();
    for j in 0..lo.len() {
        lo[j] = (lo[j] + cfg.primal_lr * eval.grad_lower[j]).min(nominal[j]);
        hi[j] = (hi[j] + cfg.primal_lr * eval.grad_upper[j]).max(nominal[j]);
    }
    if let Some(b) = bias {
        for &i in b.frozen() {
            lo[i] = nominal[i];
            hi[i] = nominal[i];
        }
    }
    state.iteration += 1;
    Ok(eval)
}
