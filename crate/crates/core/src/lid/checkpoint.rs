use serde::{Deserialize, Serialize};

use super::{gda_step, size_metric, BiasSpec, GdaState, LidConfig};
use crate::cert::{self, sample_std, Certificate, CertificateRequest};
use crate::interval::{point_spec, spec_bound_samples, LidBox, SpecKind};
use crate::nn::{Dataset, NetworkSpec, ParamVector};
use crate::rng;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "lidcert-checkpoints";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One constraint: minibatches come from `optimization`, certificates from
/// the disjoint `certification` set. `delta` is a threshold on negated
/// accuracy, so requiring accuracy `a` means `delta = −a`.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintSet<'a> {
    pub optimization: &'a Dataset,
    pub certification: &'a Dataset,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub domain: LidBox,
    pub iteration: usize,
    pub size: f64,
    /// One certificate per constraint, in constraint order.
    pub certificates: Vec<Certificate>,
}

impl Checkpoint {
    /// Every constraint's bound over the box meets its threshold on the
    /// certification split. The certificates then state the same bounds
    /// loosened by the margin; `holds` on them is stricter than this.
    pub fn certified(&self) -> bool {
        self.certificates.iter().all(|c| c.raw_bound <= c.delta)
    }
}

/// Per-iteration optimizer history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LidTrace {
    pub size: Vec<f64>,
    pub lambdas: Vec<Vec<f64>>,
    pub surrogate: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSet {
    pub network: NetworkSpec,
    pub nominal: ParamVector,
    /// Boxes that passed certification, in iteration order.
    pub checkpoints: Vec<Checkpoint>,
    /// Snapshots taken before certification filtering.
    pub snapshots: usize,
    /// Set when every snapshot failed and only the zero-width box remains.
    pub fallback: bool,
    pub frozen: Vec<usize>,
    pub trace: LidTrace,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    #[serde(flatten)]
    set: CheckpointSet,
}

impl CheckpointSet {
    pub fn latest(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }

    pub fn boxes(&self) -> Vec<&LidBox> {
        self.checkpoints.iter().map(|c| &c.domain).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let env = Envelope {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            set: self.clone(),
        };
        serde_json::to_string_pretty(&env).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("checkpoint file: {e}")))?;
        if env.format != CHECKPOINT_FORMAT || env.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint format {} version {}",
                env.format, env.version
            )));
        }
        let set = env.set;
        set.network.check_params(&set.nominal)?;
        for c in &set.checkpoints {
            // revalidate each box
            LidBox::new(c.domain.lower().to_vec(), c.domain.upper().to_vec(), c.domain.nominal().clone())?;
            c.domain.check_layout(&set.network)?;
        }
        Ok(set)
    }
}

/// Hard-accuracy certificates for `domain` against every constraint.
pub fn certify_box(
    net: &NetworkSpec,
    domain: &LidBox,
    constraints: &[ConstraintSet<'_>],
    cfg: &LidConfig,
    optimization_fingerprints: &[u64],
) -> Result<Vec<Certificate>> {
    let method = cert::registry().get(&cfg.margin)?;
    let box_fp = domain.fingerprint();
    constraints
        .iter()
        .map(|c| {
            let samples = spec_bound_samples(SpecKind::AccuracyNeg, net, domain, c.certification)?;
            let raw = samples.iter().sum::<f64>() / samples.len() as f64;
            let req = CertificateRequest {
                spec: SpecKind::AccuracyNeg,
                raw_bound: raw,
                method: method.as_ref(),
                delta: c.delta,
                n: samples.len(),
                beta: cfg.confidence_beta,
                sample_std: Some(sample_std(&samples)),
                eval_fingerprint: c.certification.fingerprint(),
                box_fingerprint: box_fp,
            };
            cert::assess(&req, optimization_fingerprints)
        })
        .collect()
}

/// Grows a box around `theta` subject to every constraint, saving a snapshot
/// every `checkpoint_period` iterations and after the last one. Snapshots
/// whose hard bound misses a threshold are dropped; if none survive the
/// zero-width box at `theta` is returned alone.
pub fn compute_lid(
    net: &NetworkSpec,
    theta: &ParamVector,
    constraints: &[ConstraintSet<'_>],
    cfg: &LidConfig,
) -> Result<CheckpointSet> {
    cfg.validate()?;
    net.check_params(theta)?;
    if constraints.is_empty() {
        return Err(Error::InvalidArgument("at least one constraint is required".into()));
    }
    let bias: Option<&BiasSpec> = cfg.bias.as_ref();
    for (i, c) in constraints.iter().enumerate() {
        net.check_data(c.optimization)?;
        net.check_data(c.certification)?;
        let value = point_spec(SpecKind::AccuracyNeg, net, theta, c.certification)?;
        if value > c.delta {
            return Err(Error::InfeasibleNominal {
                constraint: i,
                value,
                threshold: c.delta,
            });
        }
    }

    let mut fingerprints: Vec<u64> = constraints.iter().map(|c| c.optimization.fingerprint()).collect();
    let deltas: Vec<f64> = constraints.iter().map(|c| c.delta).collect();
    let mut state = GdaState::initial(theta, cfg.initial_radius, constraints.len(), bias)?;
    let mut batch_rng = rng::stream(cfg.seed, "lid-constraint-batches");
    let mut trace = LidTrace::default();
    let mut snapshots: Vec<(LidBox, usize, f64)> = Vec::new();
    for t in 1..=cfg.iterations {
        let batches = constraints
            .iter()
            .map(|c| c.optimization.sample(cfg.batch_size, &mut batch_rng))
            .collect::<Result<Vec<_>>>()?;
        fingerprints.extend(batches.iter().map(Dataset::fingerprint));
        let refs: Vec<&Dataset> = batches.iter().collect();
        let eval = gda_step(net, &mut state, &refs, &deltas, cfg, bias)?;
        let size = size_metric(&state.domain);
        trace.size.push(size);
        trace.lambdas.push(state.lambdas.clone());
        trace.surrogate.push(eval.surrogate);
        if t % cfg.checkpoint_period == 0 || t == cfg.iterations {
            snapshots.push((state.domain.clone(), t, size));
        }
    }

    let taken = snapshots.len();
    let mut checkpoints = Vec::new();
    for (domain, iteration, size) in snapshots {
        let certificates = certify_box(net, &domain, constraints, cfg, &fingerprints)?;
        let cp = Checkpoint {
            domain,
            iteration,
            size,
            certificates,
        };
        if cp.certified() {
            checkpoints.push(cp);
        }
    }
    let fallback = checkpoints.is_empty();
    if fallback {
        let domain = LidBox::zero_width(theta);
        let certificates = certify_box(net, &domain, constraints, cfg, &fingerprints)?;
        checkpoints.push(Checkpoint {
            domain,
            iteration: 0,
            size: 0.0,
            certificates,
        });
    }
    Ok(CheckpointSet {
        network: net.clone(),
        nominal: theta.clone(),
        checkpoints,
        snapshots: taken,
        fallback,
        frozen: bias.map(|b| b.frozen().to_vec()).unwrap_or_default(),
        trace,
    })
}
