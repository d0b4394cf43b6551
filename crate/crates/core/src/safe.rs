//! Safe updates: any proposed parameter change is projected into a certified
//! box, so every certificate attached to that box keeps holding.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::interval::LidBox;
use crate::lid::size_metric;
use crate::nn::train::{train_with, TrainConfig};
use crate::nn::{loss_and_grad, Dataset, LossKind, NetworkSpec, ParamVector};
use crate::registry::{Named, Registry};
use crate::{Error, Result};

/// Elementwise clamp into the box; the Euclidean projection for boxes.
pub fn clamp_project(theta: &[f64], domain: &LidBox) -> Result<ParamVector> {
    if theta.len() != domain.len() {
        return Err(Error::Shape(format!(
            "{} parameters, box has {} coordinates",
            theta.len(),
            domain.len()
        )));
    }
    Ok(ParamVector(
        theta
            .iter()
            .zip(domain.lower().iter().zip(domain.upper()))
            .map(|(&t, (&l, &u))| t.clamp(l, u))
            .collect(),
    ))
}

fn clamp_in_place(theta: &mut [f64], domain: &LidBox) {
    for (t, (&l, &u)) in theta.iter_mut().zip(domain.lower().iter().zip(domain.upper())) {
        *t = t.clamp(l, u);
    }
}

/// Squared Euclidean displacement caused by projecting `theta` into `domain`.
pub fn projection_distance(theta: &[f64], domain: &LidBox) -> Result<f64> {
    let p = clamp_project(theta, domain)?;
    Ok(p.iter().zip(theta).map(|(a, b)| (a - b).powi(2)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum EmptyReason {
    NoBoxes,
    /// Lower exceeds upper at this coordinate.
    Disjoint { index: usize },
    /// The most recent box's nominal falls outside the intersection here.
    NominalOutside { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Intersection {
    Box(LidBox),
    Empty(EmptyReason),
}

impl Intersection {
    pub fn into_box(self) -> Option<LidBox> {
        match self {
            Intersection::Box(b) => Some(b),
            Intersection::Empty(_) => None,
        }
    }
}

/// Coordinatewise intersection. The result's nominal is that of the last box.
pub fn intersect(boxes: &[&LidBox]) -> Result<Intersection> {
    let Some(last) = boxes.last() else {
        return Ok(Intersection::Empty(EmptyReason::NoBoxes));
    };
    let p = last.len();
    if let Some(b) = boxes.iter().find(|b| b.len() != p) {
        return Err(Error::Shape(format!("boxes of {} and {p} coordinates", b.len())));
    }
    let mut lower = boxes[0].lower().to_vec();
    let mut upper = boxes[0].upper().to_vec();
    for b in &boxes[1..] {
        for i in 0..p {
            lower[i] = lower[i].max(b.lower()[i]);
            upper[i] = upper[i].min(b.upper()[i]);
        }
    }
    if let Some(index) = (0..p).find(|&i| lower[i] > upper[i]) {
        return Ok(Intersection::Empty(EmptyReason::Disjoint { index }));
    }
    let nominal = last.nominal();
    if let Some(index) = (0..p).find(|&i| !(lower[i] <= nominal[i] && nominal[i] <= upper[i])) {
        return Ok(Intersection::Empty(EmptyReason::NominalOutside { index }));
    }
    Ok(Intersection::Box(LidBox::from_parts_unchecked(lower, upper, nominal.clone())))
}

/// What a selection strategy may consult besides the candidate boxes.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelectionContext<'a> {
    pub net: Option<&'a NetworkSpec>,
    pub batch: Option<&'a Dataset>,
}

/// Chooses one box among checkpoints. Candidates are in iteration order and
/// ties go to the later one.
pub trait SelectionStrategy: Named + Send + Sync {
    fn select(&self, theta: &[f64], candidates: &[&LidBox], ctx: &SelectionContext<'_>) -> Result<usize>;
}

/// Index of the minimum score, the last one on ties.
fn argmin_last(scores: impl IntoIterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores {
        if best.is_none_or(|(_, b)| s <= b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

fn closest_among(theta: &[f64], candidates: &[&LidBox], indices: impl IntoIterator<Item = usize>) -> Result<usize> {
    let scored = indices
        .into_iter()
        .map(|i| projection_distance(theta, candidates[i]).map(|d| (i, d)))
        .collect::<Result<Vec<_>>>()?;
    argmin_last(scored).ok_or(Error::NoCertifiedBox)
}

/// Minimizes the projection displacement.
pub struct Closest;

impl Named for Closest {
    fn name(&self) -> &'static str {
        "closest"
    }
}

impl SelectionStrategy for Closest {
    fn select(&self, theta: &[f64], candidates: &[&LidBox], _ctx: &SelectionContext<'_>) -> Result<usize> {
        closest_among(theta, candidates, 0..candidates.len())
    }
}

/// Minimizes the minibatch cross-entropy at the projected point.
pub struct BestLoss;

impl Named for BestLoss {
    fn name(&self) -> &'static str {
        "best_loss"
    }
}

impl SelectionStrategy for BestLoss {
    fn select(&self, theta: &[f64], candidates: &[&LidBox], ctx: &SelectionContext<'_>) -> Result<usize> {
        let (Some(net), Some(batch)) = (ctx.net, ctx.batch) else {
            return Err(Error::InvalidArgument("best_loss selection needs a network and a batch".into()));
        };
        let scored = candidates
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let p = clamp_project(theta, b)?;
                loss_and_grad(net, &p, batch, LossKind::CrossEntropy).map(|(l, _)| (i, l))
            })
            .collect::<Result<Vec<_>>>()?;
        argmin_last(scored).ok_or(Error::NoCertifiedBox)
    }
}

/// The closest box among the larger half by size.
pub struct SampleLargestClosest;

impl Named for SampleLargestClosest {
    fn name(&self) -> &'static str {
        "sample_largest_closest"
    }
}

impl SelectionStrategy for SampleLargestClosest {
    fn select(&self, theta: &[f64], candidates: &[&LidBox], _ctx: &SelectionContext<'_>) -> Result<usize> {
        let mut by_size: Vec<(usize, f64)> = candidates.iter().enumerate().map(|(i, b)| (i, size_metric(b))).collect();
        // largest first, later iterations first among equals
        by_size.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
        let keep = candidates.len().div_ceil(2);
        let mut top: Vec<usize> = by_size[..keep].iter().map(|&(i, _)| i).collect();
        top.sort_unstable();
        closest_among(theta, candidates, top)
    }
}

pub fn registry() -> Registry<dyn SelectionStrategy> {
    let mut r: Registry<dyn SelectionStrategy> = Registry::new("selection strategy");
    r.register(Arc::new(Closest))
        .register(Arc::new(BestLoss))
        .register(Arc::new(SampleLargestClosest));
    r
}

pub fn select_lid(
    theta: &[f64],
    candidates: &[&LidBox],
    strategy: &dyn SelectionStrategy,
    ctx: &SelectionContext<'_>,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::NoCertifiedBox);
    }
    if candidates.len() == 1 {
        clamp_project(theta, candidates[0])?;
        return Ok(0);
    }
    strategy.select(theta, candidates, ctx)
}

/// SGD with a clamp into `domain` after every optimizer step.
pub fn pgd_train(net: &NetworkSpec, theta: &ParamVector, data: &Dataset, domain: &LidBox, cfg: &TrainConfig) -> Result<ParamVector> {
    domain.check_layout(net)?;
    if let Some(index) = domain.first_violation(theta) {
        return Err(Error::OutsideBox { index });
    }
    let mut project = |t: &mut ParamVector, _: &Dataset| -> Result<()> {
        clamp_in_place(t, domain);
        Ok(())
    };
    train_with(net, theta, data, cfg, Some(&mut project), None)
}

/// PGD where each step projects into the box chosen by `strategy` among
/// `candidates`, using that step's minibatch as selection context.
pub fn pgd_train_selecting(
    net: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    candidates: &[&LidBox],
    strategy: &dyn SelectionStrategy,
    cfg: &TrainConfig,
) -> Result<(ParamVector, usize)> {
    if candidates.is_empty() {
        return Err(Error::NoCertifiedBox);
    }
    if !candidates.iter().any(|b| b.contains(theta)) {
        let index = candidates[candidates.len() - 1].first_violation(theta).unwrap_or(0);
        return Err(Error::OutsideBox { index });
    }
    let mut chosen = candidates.len() - 1;
    let mut project = |t: &mut ParamVector, batch: &Dataset| -> Result<()> {
        let ctx = SelectionContext {
            net: Some(net),
            batch: Some(batch),
        };
        chosen = select_lid(t, candidates, strategy, &ctx)?;
        clamp_in_place(t, candidates[chosen]);
        Ok(())
    };
    let out = train_with(net, theta, data, cfg, Some(&mut project), None)?;
    Ok((out, chosen))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateProposal {
    pub delta: Vec<f64>,
    /// Where the update came from, e.g. `sgd` or `external`.
    pub provenance: String,
}

impl UpdateProposal {
    pub fn new(delta: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if let Some(i) = delta.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("update coordinate {i} is not finite")));
        }
        Ok(UpdateProposal {
            delta,
            provenance: provenance.into(),
        })
    }
}

/// Applies `θ + u` projected into the selected box. Returns the new parameters
/// and the index of the box used.
pub fn safe_mechanism(
    theta: &[f64],
    proposal: &UpdateProposal,
    candidates: &[&LidBox],
    strategy: &dyn SelectionStrategy,
    ctx: &SelectionContext<'_>,
) -> Result<(ParamVector, usize)> {
    if candidates.is_empty() {
        return Err(Error::NoCertifiedBox);
    }
    if proposal.delta.len() != theta.len() {
        return Err(Error::Shape(format!(
            "update has {} coordinates, parameters have {}",
            proposal.delta.len(),
            theta.len()
        )));
    }
    if !candidates.iter().any(|b| b.contains(theta)) {
        let index = candidates[0].first_violation(theta).unwrap_or(0);
        return Err(Error::OutsideBox { index });
    }
    let proposed: Vec<f64> = theta.iter().zip(&proposal.delta).map(|(t, u)| t + u).collect();
    let chosen = select_lid(&proposed, candidates, strategy, ctx)?;
    Ok((clamp_project(&proposed, candidates[chosen])?, chosen))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(lo: &[f64], hi: &[f64], nominal: &[f64]) -> LidBox {
        LidBox::new(lo.to_vec(), hi.to_vec(), ParamVector(nominal.to_vec())).unwrap()
    }

    #[test]
    fn clamp_examples() {
        let b = bx(&[0.0], &[2.0], &[1.0]);
        assert_eq!(clamp_project(&[5.0], &b).unwrap().0, vec![2.0]);
        assert_eq!(clamp_project(&[0.5], &b).unwrap().0, vec![0.5]);
        assert!(clamp_project(&[0.5, 1.0], &b).is_err());
    }

    #[test]
    fn intersection_examples() {
        let a = bx(&[0.0], &[2.0], &[1.0]);
        let b = bx(&[1.0], &[3.0], &[1.5]);
        let i = intersect(&[&a, &b]).unwrap().into_box().unwrap();
        assert_eq!((i.lower()[0], i.upper()[0], i.nominal()[0]), (1.0, 2.0, 1.5));
        let c = bx(&[0.0], &[1.0], &[0.5]);
        let d = bx(&[2.0], &[3.0], &[2.5]);
        assert_eq!(intersect(&[&c, &d]).unwrap(), Intersection::Empty(EmptyReason::Disjoint { index: 0 }));
        let e = bx(&[0.0], &[3.0], &[2.5]);
        assert_eq!(
            intersect(&[&c, &e]).unwrap(),
            Intersection::Empty(EmptyReason::NominalOutside { index: 0 })
        );
        assert_eq!(intersect(&[]).unwrap(), Intersection::Empty(EmptyReason::NoBoxes));
    }

    #[test]
    fn closest_picks_smaller_displacement() {
        let theta = [1.0, 0.0];
        let near = bx(&[0.0, 0.0], &[0.9, 0.0], &[0.0, 0.0]);
        let far = bx(&[0.0, 0.0], &[0.5, 0.0], &[0.0, 0.0]);
        let ctx = SelectionContext::default();
        assert_eq!(select_lid(&theta, &[&far, &near], &Closest, &ctx).unwrap(), 1);
        assert_eq!(select_lid(&theta, &[&near, &far], &Closest, &ctx).unwrap(), 0);
        // equal displacement: the later checkpoint wins
        assert_eq!(select_lid(&theta, &[&near, &near.clone()], &Closest, &ctx).unwrap(), 1);
        assert_eq!(select_lid(&theta, &[], &Closest, &ctx), Err(Error::NoCertifiedBox));
    }

    #[test]
    fn largest_half_then_closest() {
        let theta = [0.0];
        let tiny = bx(&[0.0], &[0.1], &[0.0]);
        let mid = bx(&[-1.0], &[1.0], &[0.0]);
        let big = bx(&[-3.0], &[3.0], &[0.0]);
        let ctx = SelectionContext::default();
        // θ is in all three, so the larger half {mid, big} ties at 0 and the later one wins
        assert_eq!(SampleLargestClosest.select(&theta, &[&tiny, &mid, &big], &ctx).unwrap(), 2);
        let off = [2.5];
        assert_eq!(SampleLargestClosest.select(&off, &[&tiny, &big, &mid], &ctx).unwrap(), 1);
    }

    #[test]
    fn best_loss_needs_context() {
        let b = bx(&[0.0], &[1.0], &[0.5]);
        let c = bx(&[0.0], &[1.0], &[0.5]);
        assert!(matches!(
            BestLoss.select(&[0.5], &[&b, &c], &SelectionContext::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn mechanism_identity_and_clamp() {
        let b = bx(&[-1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0]);
        let ctx = SelectionContext::default();
        let zero = UpdateProposal::new(vec![0.0, 0.0], "external").unwrap();
        assert_eq!(safe_mechanism(&[0.2, 0.3], &zero, &[&b], &Closest, &ctx).unwrap().0 .0, vec![0.2, 0.3]);
        let inside = UpdateProposal::new(vec![0.5, -0.5], "sgd").unwrap();
        assert_eq!(safe_mechanism(&[0.2, 0.3], &inside, &[&b], &Closest, &ctx).unwrap().0 .0, vec![0.7, -0.2]);
        let huge = UpdateProposal::new(vec![1e9, -1e9], "external").unwrap();
        assert_eq!(safe_mechanism(&[0.0, 0.0], &huge, &[&b], &Closest, &ctx).unwrap().0 .0, vec![1.0, -1.0]);
        assert!(UpdateProposal::new(vec![f64::NAN], "x").is_err());
        assert_eq!(safe_mechanism(&[0.0, 0.0], &zero, &[], &Closest, &ctx), Err(Error::NoCertifiedBox));
    }

    #[test]
    fn registry_names() {
        assert_eq!(registry().names(), vec!["best_loss", "closest", "sample_largest_closest"]);
    }
}
