mod common;

use common::{trained_toy, uniform_member};
use lidcert_core::interval::{point_spec, SpecKind};
use lidcert_core::lid::{compute_lid, make_bias, size_metric, BiasMode, CheckpointSet, ConstraintSet, LidConfig};
use lidcert_core::nn::accuracy;
use lidcert_core::nn::importance::importance_fisher;
use lidcert_core::{rng, Error};

fn quick(iterations: usize, period: usize) -> LidConfig {
    LidConfig {
        iterations,
        checkpoint_period: period,
        batch_size: 100,
        ..LidConfig::default()
    }
}

#[test]
fn every_checkpoint_is_sound_under_sampling() {
    let toy = trained_toy(1);
    let nominal = accuracy(&toy.net, &toy.theta, &toy.cert).unwrap();
    assert!(nominal >= 0.95, "toy model too weak: {nominal}");
    let c = ConstraintSet { optimization: &toy.train, certification: &toy.cert, delta: -0.8 };
    let set = compute_lid(&toy.net, &toy.theta, &[c], &quick(60, 10)).unwrap();
    assert!(!set.fallback);
    let mut r = rng::stream(1, "soundness");
    for cp in &set.checkpoints {
        let cert = &cp.certificates[0];
        assert!(cert.raw_accuracy().unwrap() >= 0.8);
        assert!(cert.certified_accuracy().unwrap() >= 0.8 - cert.margin - 1e-12);
        assert!(cp.domain.contains(&toy.theta));
        for _ in 0..1000 {
            let p = uniform_member(&mut r, cp.domain.lower(), cp.domain.upper());
            let acc = accuracy(&toy.net, &p, &toy.cert).unwrap();
            assert!(acc >= cert.raw_accuracy().unwrap(), "{acc} below {}", cert.raw_accuracy().unwrap());
        }
    }
}

#[test]
fn vacuous_threshold_grows_monotonically() {
    let toy = trained_toy(2);
    let c = ConstraintSet { optimization: &toy.train, certification: &toy.cert, delta: 1.0 };
    let set = compute_lid(&toy.net, &toy.theta, &[c], &quick(30, 7)).unwrap();
    assert!(set.trace.lambdas.iter().all(|l| l[0] == 0.0));
    assert!(set.trace.size.windows(2).all(|w| w[1] > w[0]));
    // ⌊30/7⌋ periodic snapshots plus the final one
    assert_eq!(set.snapshots, 5);
    assert_eq!(set.checkpoints.len(), 5);
    assert_eq!(set.checkpoints.iter().map(|c| c.iteration).collect::<Vec<_>>(), vec![7, 14, 21, 28, 30]);
}

#[test]
fn snapshot_count_when_period_divides() {
    let toy = trained_toy(3);
    let c = ConstraintSet { optimization: &toy.train, certification: &toy.cert, delta: 1.0 };
    let set = compute_lid(&toy.net, &toy.theta, &[c], &quick(20, 5)).unwrap();
    assert_eq!(set.snapshots, 4);
}

#[test]
fn infeasible_nominal_is_rejected() {
    let toy = trained_toy(4);
    let c = ConstraintSet { optimization: &toy.train, certification: &toy.cert, delta: -1.01 };
    match compute_lid(&toy.net, &toy.theta, &[c], &quick(5, 5)) {
        Err(Error::InfeasibleNominal { constraint: 0, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unreachable_certificate_falls_back_to_zero_width() {
    let toy = trained_toy(5);
    let acc = accuracy(&toy.net, &toy.theta, &toy.cert).unwrap();
    // nominal meets the threshold exactly; steps this large overshoot at once
    let c = ConstraintSet { optimization: &toy.train, certification: &toy.cert, delta: -acc };
    let cfg = LidConfig { primal_lr: 100.0, ..quick(20, 10) };
    let set = compute_lid(&toy.net, &toy.theta, &[c], &cfg).unwrap();
    assert!(set.fallback);
    assert_eq!(set.checkpoints.len(), 1);
    assert_eq!(size_metric(&set.checkpoints[0].domain), 0.0);
    assert_eq!(set.checkpoints[0].domain.lower(), &toy.theta[..]);
}

#[test]
fn pruned_coordinates_stay_pinned() {
    let toy = trained_toy(6);
    let imp = importance_fisher(&toy.net, &toy.theta, &toy.train).unwrap();
    let bias = make_bias(&imp, BiasMode::Prune, 0.95, false, 6).unwrap();
    let p = toy.theta.len();
    let want = (0.95 * p as f64).ceil() as usize;
    assert_eq!(bias.frozen().len(), want);
    let cfg = LidConfig { bias: Some(bias.clone()), ..quick(30, 10) };
    let c = ConstraintSet { optimization: &toy.train, certification: &toy.cert, delta: -0.8 };
    let set = compute_lid(&toy.net, &toy.theta, &[c], &cfg).unwrap();
    assert_eq!(set.frozen, bias.frozen());
    for cp in &set.checkpoints {
        let zero = cp.domain.widths().iter().filter(|w| **w == 0.0).count();
        assert!(zero >= want);
        for &i in bias.frozen() {
            assert_eq!(cp.domain.lower()[i].to_bits(), toy.theta[i].to_bits());
            assert_eq!(cp.domain.upper()[i].to_bits(), toy.theta[i].to_bits());
        }
    }
}

#[test]
fn two_constraints_are_both_certified() {
    let toy = trained_toy(7);
    let other = trained_toy(8);
    let cs = [
        ConstraintSet { optimization: &toy.train, certification: &toy.cert, delta: -0.8 },
        ConstraintSet { optimization: &other.train, certification: &other.cert, delta: -0.75 },
    ];
    let set = compute_lid(&toy.net, &toy.theta, &cs, &quick(40, 10)).unwrap();
    for cp in &set.checkpoints {
        assert_eq!(cp.certificates.len(), 2);
        assert!(cp.certified());
    }
    assert!(set.trace.lambdas.iter().all(|l| l.len() == 2 && l.iter().all(|v| *v >= 0.0)));
}

#[test]
fn held_out_data_reused_for_optimization_is_refused() {
    let toy = trained_toy(9);
    let c = ConstraintSet { optimization: &toy.cert, certification: &toy.cert, delta: -0.8 };
    assert!(matches!(
        compute_lid(&toy.net, &toy.theta, &[c], &quick(5, 5)),
        Err(Error::HeldOutViolation(_))
    ));
}

#[test]
fn checkpoint_file_round_trips_bit_for_bit() {
    let toy = trained_toy(10);
    let c = ConstraintSet { optimization: &toy.train, certification: &toy.cert, delta: -0.8 };
    let set = compute_lid(&toy.net, &toy.theta, &[c], &quick(20, 10)).unwrap();
    let text = set.to_json().unwrap();
    let back = CheckpointSet::from_json(&text).unwrap();
    assert_eq!(back, set);
    let bits = |s: &CheckpointSet| -> Vec<u64> {
        s.checkpoints.iter().flat_map(|c| c.domain.lower().iter().chain(c.domain.upper()).map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&back), bits(&set));
    assert!(CheckpointSet::from_json(&text.replace("\"version\": 1", "\"version\": 9")).is_err());
}

#[test]
fn runs_are_deterministic() {
    let toy = trained_toy(11);
    let c = ConstraintSet { optimization: &toy.train, certification: &toy.cert, delta: -0.8 };
    let a = compute_lid(&toy.net, &toy.theta, &[c], &quick(15, 5)).unwrap();
    let b = compute_lid(&toy.net, &toy.theta, &[c], &quick(15, 5)).unwrap();
    assert_eq!(a, b);
    // the point accuracy at the nominal is untouched by the run
    assert!(point_spec(SpecKind::AccuracyNeg, &toy.net, &toy.theta, &toy.cert).unwrap() <= -0.8);
}
