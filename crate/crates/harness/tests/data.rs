use std::collections::BTreeSet;

use proptest::prelude::*;

use lidcert_core::nn::train::{sgd_train, TrainConfig};
use lidcert_core::nn::{accuracy, Activation, NetworkSpec};
use lidcert_core::rng;
use lidcert_harness::data::{builtin_digits, make_blobs, split_dataset, BlobsSpec};
use lidcert_harness::idx::*;
use lidcert_harness::{HarnessError, Protocol, SplitFractions};

proptest! {
    #[test]
    fn idx_images_round_trip(count in 0usize..4, rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let pixels: Vec<u8> = (0..count * rows * cols).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let img = IdxImages { count, rows, cols, pixels };
        let bytes = encode_idx_images(&img);
        prop_assert_eq!(bytes.len(), 16 + count * rows * cols);
        prop_assert_eq!(parse_idx_images(&bytes).unwrap(), img);
    }

    #[test]
    fn idx_labels_round_trip(labels in proptest::collection::vec(any::<u8>(), 0..50)) {
        let parsed = parse_idx_labels(&encode_idx_labels(&labels)).unwrap();
        prop_assert_eq!(parsed, labels.iter().map(|&b| usize::from(b)).collect::<Vec<_>>());
    }

    #[test]
    fn every_truncation_is_reported(labels in proptest::collection::vec(any::<u8>(), 1..20), cut in 0usize..28) {
        let bytes = encode_idx_labels(&labels);
        let cut = cut.min(bytes.len() - 1);
        match parse_idx_labels(&bytes[..cut]) {
            Err(HarnessError::Idx { offset, .. }) => prop_assert!(offset <= cut),
            other => prop_assert!(false, "{:?}", other),
        }
    }
}

#[test]
fn digit_tasks_pair_odd_with_even() {
    let pool = builtin_digits().unwrap();
    assert_eq!(pool.len(), 1797);
    for seed in 0..200 {
        let s = split_dataset(&pool, 5, Protocol::ClassIl, SplitFractions::default(), seed).unwrap();
        let mut seen = BTreeSet::new();
        for t in &s.tasks {
            assert_eq!(t.classes.len(), 2);
            assert_eq!((t.classes[0] % 2, t.classes[1] % 2), (0, 1), "seed {seed}");
            for c in &t.classes {
                assert!(seen.insert(*c));
            }
        }
        assert_eq!(s.outputs, 10);
    }
}

#[test]
fn domain_labels_are_binary() {
    let pool = builtin_digits().unwrap();
    let s = split_dataset(&pool, 5, Protocol::DomainIl, SplitFractions::default(), 3).unwrap();
    assert_eq!(s.outputs, 2);
    for t in &s.tasks {
        for d in [&t.train, &t.certification, &t.test] {
            assert!(d.labels().iter().all(|&l| l < 2));
        }
    }
}

#[test]
fn too_few_classes_is_a_config_error() {
    let pool = builtin_digits().unwrap();
    assert!(split_dataset(&pool, 6, Protocol::ClassIl, SplitFractions::default(), 0).unwrap_err().is_config());
}

#[test]
fn tight_blobs_are_linearly_separable() {
    let spec = BlobsSpec { spread: 1e-3, ..BlobsSpec::default() };
    let s = make_blobs(&spec, Protocol::TaskIl, SplitFractions::default(), 11).unwrap();
    let net = NetworkSpec::mlp(2, &[], s.outputs, Activation::Relu).unwrap();
    for (j, t) in s.tasks.iter().enumerate() {
        let theta0 = net.init_params(&mut rng::stream(j as u64, "linear"));
        let tc = TrainConfig { epochs: 50, lr: 0.1, batch_size: 16, ..TrainConfig::default() };
        let theta = sgd_train(&net, &theta0, &t.train, &tc).unwrap();
        let acc = accuracy(&net, &theta, &t.test).unwrap();
        assert!(acc >= 0.99, "task {j}: {acc}");
    }
}
