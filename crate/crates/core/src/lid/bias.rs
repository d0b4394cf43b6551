use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::interval::LidBox;
use crate::nn::importance::ImportanceScores;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    None,
    /// Pin a fraction of coordinates at the nominal.
    Prune,
    /// Add an importance-weighted width term to the objective.
    Regularize,
}

/// Steers which coordinates of a box are allowed to grow.
///
/// Without lookahead the scores describe the current task and important
/// coordinates are kept narrow. With lookahead the scores come from the next
/// task, and the coordinates it needs are the ones left free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub mode: BiasMode,
    pub importance: ImportanceScores,
    pub proportion: f64,
    pub reg_weight: f64,
    pub lookahead: bool,
    frozen: Vec<usize>,
}

impl BiasSpec {
    pub const DEFAULT_PROPORTION: f64 = 0.05;
    pub const DEFAULT_LOOKAHEAD_PROPORTION: f64 = 0.825;
    pub const DEFAULT_REG_WEIGHT: f64 = 0.01;

    /// Sorted indices pinned at the nominal (prune mode only).
    pub fn frozen(&self) -> &[usize] {
        &self.frozen
    }

    pub fn with_reg_weight(mut self, w: f64) -> Result<Self> {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidArgument(format!("regularization weight {w} is invalid")));
        }
        self.reg_weight = w;
        Ok(self)
    }

    pub(crate) fn check_len(&self, p: usize) -> Result<()> {
        if self.importance.len() != p {
            return Err(Error::Shape(format!(
                "importance has {} scores, network has {p} parameters",
                self.importance.len()
            )));
        }
        Ok(())
    }

    /// `R(α)`, accumulating its gradient into the bound gradients.
    pub(crate) fn regularizer(&self, domain: &LidBox, grad_lower: &mut [f64], grad_upper: &mut [f64]) -> f64 {
        if self.mode != BiasMode::Regularize || self.reg_weight == 0.0 {
            return 0.0;
        }
        let sign = if self.lookahead { 1.0 } else { -1.0 };
        let mut value = 0.0;
        for (i, (&s, w)) in self.importance.values.iter().zip(domain.widths()).enumerate() {
            let c = sign * self.reg_weight * s;
            value += c * w;
            grad_upper[i] += c;
            grad_lower[i] -= c;
        }
        value
    }
}

/// Builds a bias from importance scores.
///
/// In prune mode `⌈proportion · p⌉` coordinates are frozen: the highest-scoring
/// ones without lookahead, the lowest-scoring ones with it. Equal scores are
/// ordered by a permutation drawn from `seed`.
pub fn make_bias(importance: &ImportanceScores, mode: BiasMode, proportion: f64, lookahead: bool, seed: u64) -> Result<BiasSpec> {
    if mode != BiasMode::None && !(proportion > 0.0 && proportion < 1.0) {
        return Err(Error::InvalidArgument(format!("proportion {proportion} not in (0, 1)")));
    }
    if importance.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("importance scores must be finite".into()));
    }
    let frozen = if mode == BiasMode::Prune {
        let p = importance.len();
        // the small slack keeps products like 0.5·4 from rounding up a whole unit
        let k = ((proportion * p as f64) - 1e-9).ceil().max(0.0) as usize;
        let mut r = rng::stream(seed, "bias-tie-break");
        let keys: Vec<u64> = (0..p).map(|_| r.random()).collect();
        let s = &importance.values;
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| {
            let by_score = if lookahead { s[a].total_cmp(&s[b]) } else { s[b].total_cmp(&s[a]) };
            by_score.then(keys[a].cmp(&keys[b]))
        });
        let mut f = order[..k.min(p)].to_vec();
        f.sort_unstable();
        f
    } else {
        Vec::new()
    };
    Ok(BiasSpec {
        mode,
        importance: importance.clone(),
        proportion,
        reg_weight: BiasSpec::DEFAULT_REG_WEIGHT,
        lookahead,
        frozen,
    })
}
