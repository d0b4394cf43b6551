mod common;

use common::{trained_toy, uniform_member};
use lidcert_core::interval::LidBox;
use lidcert_core::nn::train::{sgd_train, TrainConfig};
use lidcert_core::nn::ParamVector;
use lidcert_core::rng;
use lidcert_core::safe::{
    clamp_project, intersect, pgd_train, projection_distance, safe_mechanism, Closest, EmptyReason, Intersection,
    SelectionContext, UpdateProposal,
};
use proptest::prelude::*;

/// A box around `nominal` with the given one-sided widths.
fn boxed(nominal: &[f64], below: &[f64], above: &[f64]) -> LidBox {
    let lo = nominal.iter().zip(below).map(|(n, b)| n - b).collect();
    let hi = nominal.iter().zip(above).map(|(n, a)| n + a).collect();
    LidBox::new(lo, hi, ParamVector(nominal.to_vec())).unwrap()
}

fn coords(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, n)
}

fn widths(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..2.0f64, n)
}

proptest! {
    #[test]
    fn clamp_beats_every_grid_point(
        nominal in coords(2), below in widths(2), above in widths(2), theta in prop::collection::vec(-8.0..8.0f64, 2)
    ) {
        let b = boxed(&nominal, &below, &above);
        let p = clamp_project(&theta, &b).unwrap();
        prop_assert!(b.contains(&p));
        let best = projection_distance(&theta, &b).unwrap();
        // no point of a 21×21 grid over the box is closer
        for i in 0..=20 {
            for j in 0..=20 {
                let g = [
                    b.lower()[0] + (b.upper()[0] - b.lower()[0]) * i as f64 / 20.0,
                    b.lower()[1] + (b.upper()[1] - b.lower()[1]) * j as f64 / 20.0,
                ];
                let d: f64 = g.iter().zip(&theta).map(|(a, t)| (a - t).powi(2)).sum();
                prop_assert!(best <= d + 1e-12);
            }
        }
        // projecting twice changes nothing
        prop_assert_eq!(clamp_project(&p, &b).unwrap(), p);
    }

    #[test]
    fn intersection_is_the_common_region(
        nominals in prop::collection::vec(coords(3), 1..4),
        below in prop::collection::vec(widths(3), 3),
        above in prop::collection::vec(widths(3), 3),
        seed in any::<u64>(),
    ) {
        let boxes: Vec<LidBox> =
            nominals.iter().enumerate().map(|(k, n)| boxed(n, &below[k], &above[k])).collect();
        let refs: Vec<&LidBox> = boxes.iter().collect();
        let mut r = rng::stream(seed, "intersection-fuzz");
        match intersect(&refs).unwrap() {
            Intersection::Box(i) => {
                prop_assert_eq!(i.nominal(), boxes.last().unwrap().nominal());
                for _ in 0..50 {
                    let p = uniform_member(&mut r, i.lower(), i.upper());
                    prop_assert!(boxes.iter().all(|b| b.contains(&p)));
                }
                // corners of the intersection lie in every box
                prop_assert!(boxes.iter().all(|b| b.contains(i.lower()) && b.contains(i.upper())));
            }
            Intersection::Empty(EmptyReason::Disjoint { index }) => {
                let lo = boxes.iter().map(|b| b.lower()[index]).fold(f64::NEG_INFINITY, f64::max);
                let hi = boxes.iter().map(|b| b.upper()[index]).fold(f64::INFINITY, f64::min);
                prop_assert!(lo > hi);
            }
            Intersection::Empty(EmptyReason::NominalOutside { index }) => {
                let v = boxes.last().unwrap().nominal()[index];
                prop_assert!(boxes.iter().any(|b| !(b.lower()[index] <= v && v <= b.upper()[index])));
            }
            Intersection::Empty(EmptyReason::NoBoxes) => prop_assert!(false),
        }
    }

    #[test]
    fn ordered_updates_stay_in_every_box(
        steps in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 1..6),
        below in widths(3),
        above in widths(3),
    ) {
        let start = vec![0.0; 3];
        let outer = boxed(&start, &[2.0; 3], &[2.0; 3]);
        let inner = boxed(&start, &below, &above);
        let active = intersect(&[&outer, &inner]).unwrap().into_box().unwrap();
        let mut theta = ParamVector(start);
        for u in steps {
            let proposal = UpdateProposal::new(u, "fuzz").unwrap();
            let (next, _) =
                safe_mechanism(&theta, &proposal, &[&active], &Closest, &SelectionContext::default()).unwrap();
            theta = next;
            prop_assert!(outer.contains(&theta) && inner.contains(&theta));
        }
    }
}

#[test]
fn zero_width_box_pins_training() {
    let toy = trained_toy(21);
    let pinned = LidBox::zero_width(&toy.theta);
    let cfg = TrainConfig { epochs: 3, lr: 0.1, batch_size: 16, seed: 4, ..TrainConfig::default() };
    let out = pgd_train(&toy.net, &toy.theta, &toy.train, &pinned, &cfg).unwrap();
    let bits = |p: &[f64]| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&out), bits(&toy.theta));
}

#[test]
fn unbounded_box_is_plain_sgd() {
    let toy = trained_toy(22);
    let huge = LidBox::around(&toy.theta, 1e12).unwrap();
    let cfg = TrainConfig { epochs: 3, lr: 0.1, batch_size: 16, seed: 5, ..TrainConfig::default() };
    let pgd = pgd_train(&toy.net, &toy.theta, &toy.train, &huge, &cfg).unwrap();
    let sgd = sgd_train(&toy.net, &toy.theta, &toy.train, &cfg).unwrap();
    assert_eq!(pgd, sgd);
}

#[test]
fn zero_update_is_the_identity() {
    let toy = trained_toy(23);
    let b = LidBox::around(&toy.theta, 0.1).unwrap();
    let zero = UpdateProposal::new(vec![0.0; toy.theta.len()], "none").unwrap();
    let (out, _) = safe_mechanism(&toy.theta, &zero, &[&b], &Closest, &SelectionContext::default()).unwrap();
    assert_eq!(out, toy.theta);
}
