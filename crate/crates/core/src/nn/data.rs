use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::Fnv64;
use crate::{Error, Result};

/// Row-major labeled samples, optionally restricted to a subset of the
/// network's output classes (task-identity masking).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, n_features: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("dataset must contain at least one sample".into()));
        }
        if n_features == 0 || inputs.len() != labels.len() * n_features {
            return Err(Error::Shape(format!(
                "{} input values do not form {} rows of {} features",
                inputs.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { sample: i / n_features });
        }
        Ok(Dataset {
            inputs,
            n_features,
            labels,
            classes: None,
        })
    }

    /// Restricts predictions to `classes`; every label must be among them.
    pub fn with_classes(mut self, classes: Vec<usize>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidArgument("class mask is empty".into()));
        }
        if let Some(y) = self.labels.iter().find(|y| !classes.contains(y)) {
            return Err(Error::InvalidArgument(format!("label {y} outside class mask")));
        }
        self.classes = Some(classes);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn classes(&self) -> Option<&[usize]> {
        self.classes.as_deref()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty subset".into()));
        }
        let mut inputs = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            inputs,
            n_features: self.n_features,
            labels,
            classes: self.classes.clone(),
        })
    }

    /// Up to `n` distinct samples chosen uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        let n = n.min(self.len());
        let idx = index::sample(rng, self.len(), n).into_vec();
        self.subset(&idx)
    }

    /// Concatenation; class masks are merged.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut classes: Option<Vec<usize>> = None;
        for p in parts {
            if p.n_features != first.n_features {
                return Err(Error::Shape("feature counts differ".into()));
            }
            inputs.extend_from_slice(&p.inputs);
            labels.extend_from_slice(&p.labels);
            if let Some(cs) = &p.classes {
                let merged = classes.get_or_insert_with(Vec::new);
                for c in cs {
                    if !merged.contains(c) {
                        merged.push(*c);
                    }
                }
            }
        }
        if let Some(cs) = classes.as_mut() {
            cs.sort_unstable();
        }
        Ok(Dataset {
            inputs,
            n_features: first.n_features,
            labels,
            classes,
        })
    }

    /// Per-feature `(min, max)` over all samples.
    pub fn feature_range(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.n_features];
        let mut hi = vec![f64::NEG_INFINITY; self.n_features];
        for row in self.inputs.chunks_exact(self.n_features) {
            for ((l, h), &v) in lo.iter_mut().zip(hi.iter_mut()).zip(row) {
                *l = l.min(v);
                *h = h.max(v);
            }
        }
        (lo, hi)
    }

    /// 64-bit content hash over features, labels and mask.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        h.write_usize(self.n_features);
        h.write_f64s(&self.inputs);
        for &y in &self.labels {
            h.write_usize(y);
        }
        if let Some(cs) = &self.classes {
            h.write(b"mask");
            for &c in cs {
                h.write_usize(c);
            }
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Dataset::new(vec![], 2, vec![]).is_err());
        assert!(Dataset::new(vec![1.0, 2.0, 3.0], 2, vec![0]).is_err());
        assert!(Dataset::new(vec![f64::NAN, 0.0], 2, vec![0]).is_err());
        let d = Dataset::new(vec![1.0, 2.0], 2, vec![3]).unwrap();
        assert!(d.clone().with_classes(vec![0, 1]).is_err());
        assert!(d.with_classes(vec![2, 3]).is_ok());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], 2, vec![0, 1]).unwrap();
        let b = a.subset(&[0, 1]).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = a.subset(&[1, 0]).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.feature_range(), (vec![1.0, 2.0], vec![3.0, 4.0]));
    }
}
