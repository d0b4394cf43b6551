#![allow(dead_code)]

use lidcert_core::nn::train::{sgd_train, TrainConfig};
use lidcert_core::nn::{Activation, Dataset, NetworkSpec, ParamVector};
use lidcert_core::rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Two Gaussian clusters per call, labelled `labels`.
pub fn clusters(seed: u64, centers: &[([f64; 2], usize)], per_class: usize, spread: f64) -> Dataset {
    let mut r = rng::stream(seed, "test-clusters");
    let noise = Normal::new(0.0, spread).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..per_class {
        for (c, label) in centers {
            x.push(c[0] + noise.sample(&mut r));
            x.push(c[1] + noise.sample(&mut r));
            y.push(*label);
        }
    }
    Dataset::new(x, 2, y).unwrap()
}

pub struct Toy {
    pub net: NetworkSpec,
    pub theta: ParamVector,
    pub train: Dataset,
    pub cert: Dataset,
}

/// A small relu net trained on two separated clusters.
pub fn trained_toy(seed: u64) -> Toy {
    let centers = [([-2.0, 0.0], 0), ([2.0, 0.0], 1)];
    let train = clusters(seed, &centers, 150, 0.6);
    let cert = clusters(seed + 1000, &centers, 100, 0.6);
    let net = NetworkSpec::mlp(2, &[8], 2, Activation::Relu).unwrap();
    let theta0 = net.init_params(&mut rng::stream(seed, "toy-init"));
    let cfg = TrainConfig { epochs: 20, lr: 0.05, batch_size: 16, seed, ..TrainConfig::default() };
    let theta = sgd_train(&net, &theta0, &train, &cfg).unwrap();
    Toy { net, theta, train, cert }
}

pub fn uniform_member<R: Rng>(r: &mut R, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).map(|(&l, &u)| if l == u { l } else { r.random_range(l..=u) }).collect()
}
