//! Certified continual learning: zero-buffer and buffered runs, and the plain
//! SGD baseline.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use lidcert_core::cert::Certificate;
use lidcert_core::interval::LidBox;
use lidcert_core::lid::{compute_lid, make_bias, size_metric, BiasMode, BiasSpec, CheckpointSet, ConstraintSet, LidConfig};
use lidcert_core::nn::train::{sgd_train, TrainConfig};
use lidcert_core::nn::{accuracy, Dataset, NetworkSpec, ParamVector};
use lidcert_core::registry::{Named, Registry};
use lidcert_core::rng::{self, derive_seed};
use lidcert_core::safe::{self, intersect, pgd_train_selecting, select_lid, Intersection, SelectionContext, SelectionStrategy};

use crate::config::{DatasetSpec, InfeasiblePolicy, RunConfig};
use crate::data::{builtin_digits, make_blobs, split_dataset, TaskStream};
use crate::error::{HarnessError, Result, TaskContext};
use crate::idx::load_idx_pair;
use crate::record::{RunRecord, TaskStep, Termination, Timings};

pub fn build_stream(cfg: &RunConfig) -> Result<TaskStream> {
    match &cfg.dataset {
        DatasetSpec::Blobs(spec) => make_blobs(spec, cfg.protocol, cfg.splits, cfg.seed),
        DatasetSpec::Digits { tasks, images, labels, side } => {
            let pool = match (images, labels) {
                (Some(i), Some(l)) => {
                    let ib = std::fs::read(i).map_err(|e| HarnessError::io(i, e))?;
                    let lb = std::fs::read(l).map_err(|e| HarnessError::io(l, e))?;
                    load_idx_pair(&ib, &lb, *side)?
                }
                _ => builtin_digits()?,
            };
            split_dataset(&pool, *tasks, cfg.protocol, cfg.splits, cfg.seed)
        }
    }
}

/// Stream, network and initial parameters for a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub stream: TaskStream,
    pub net: NetworkSpec,
    pub theta0: ParamVector,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let stream = build_stream(cfg)?;
    let net = NetworkSpec::mlp(stream.n_features, &cfg.network.hidden, stream.outputs, cfg.network.activation)?;
    let theta0 = net.init_params(&mut rng::stream(cfg.seed, "init"));
    Ok(Prepared { stream, net, theta0 })
}

/// Training configuration for task `task`; `call` distinguishes retraining
/// after buffer recomputations.
fn train_cfg(cfg: &RunConfig, task: usize, call: usize) -> TrainConfig {
    let name = if call == 0 { format!("train-{task}") } else { format!("train-{task}-{call}") };
    TrainConfig {
        seed: derive_seed(cfg.seed, &name),
        ..cfg.train.clone()
    }
}

fn lid_cfg(cfg: &RunConfig, task: usize, call: usize, bias: Option<BiasSpec>) -> LidConfig {
    LidConfig {
        seed: derive_seed(cfg.seed, &format!("lid-{task}-{call}")),
        bias,
        ..cfg.lid.clone()
    }
}

/// A box with the certificates it carries, keyed by task.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardedBox {
    pub domain: LidBox,
    pub certificates: BTreeMap<usize, Certificate>,
}

/// Where training may move the parameters.
#[derive(Debug, Clone)]
enum SafeSet {
    /// No requirement, so nothing to protect.
    Unbounded,
    /// Checkpoint candidates, in iteration order.
    Boxes(Vec<GuardedBox>),
}

impl SafeSet {
    fn from_checkpoints(set: &CheckpointSet, tasks: &[usize]) -> Self {
        SafeSet::Boxes(
            set.checkpoints
                .iter()
                .map(|cp| GuardedBox {
                    domain: cp.domain.clone(),
                    certificates: tasks.iter().copied().zip(cp.certificates.iter().cloned()).collect(),
                })
                .collect(),
        )
    }
}

/// Per-task samples kept for later box recomputation. Optimization samples
/// are drawn i.i.d. from the task's training split; the certification split is
/// retained as the held-out evaluation set.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    pub capacity: usize,
    pub entries: Vec<BufferEntry>,
}

#[derive(Debug, Clone)]
pub struct BufferEntry {
    pub task: usize,
    pub samples: Dataset,
    pub holdout: Dataset,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, task: usize, train: &Dataset, holdout: &Dataset, r: &mut rng::Rng) -> Result<()> {
        self.entries.push(BufferEntry {
            task,
            samples: train.sample(self.capacity, r)?,
            holdout: holdout.clone(),
        });
        Ok(())
    }

    /// `k` samples from each stored task.
    pub fn draw(&self, k: usize, r: &mut rng::Rng) -> Result<Vec<Dataset>> {
        Ok(self.entries.iter().map(|e| e.samples.sample(k, r)).collect::<lidcert_core::Result<_>>()?)
    }
}

/// Importance-based bias for the box computed after task `task`.
fn bias_for(cfg: &RunConfig, prep: &Prepared, task: usize, theta: &ParamVector) -> Result<Option<BiasSpec>> {
    let b = &cfg.bias;
    if b.mode == BiasMode::None {
        return Ok(None);
    }
    let tasks = &prep.stream.tasks;
    let data = if b.lookahead {
        let Some(next) = tasks.get(task + 1) else {
            return Ok(None);
        };
        next.train.sample(b.lookahead_samples, &mut rng::stream(cfg.seed, &format!("lookahead-{task}")))?
    } else {
        tasks[task].train.clone()
    };
    let probe = TrainConfig {
        epochs: b.probe_epochs,
        seed: derive_seed(cfg.seed, &format!("probe-{task}")),
        ..cfg.train.clone()
    };
    Some(lookahead_bias_with(&prep.net, theta, &data, cfg, &probe, task)).transpose()
}

fn lookahead_bias_with(
    net: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    cfg: &RunConfig,
    probe: &TrainConfig,
    task: usize,
) -> Result<BiasSpec> {
    let method = lidcert_core::nn::importance::registry().get(&cfg.bias.importance)?;
    let scores = method.scores(net, theta, data, probe).at_task(task)?;
    let spec = make_bias(
        &scores,
        cfg.bias.mode,
        cfg.bias.proportion(),
        cfg.bias.lookahead,
        derive_seed(cfg.seed, &format!("bias-{task}")),
    )?;
    Ok(spec.with_reg_weight(cfg.bias.reg_weight)?)
}

/// Lookahead bias from a sample of the next task: importance from a short
/// probe run on `sample`, then pruning per [`make_bias`] with lookahead.
pub fn lookahead_bias(
    sample: &Dataset,
    net: &NetworkSpec,
    theta: &ParamVector,
    proportion: f64,
    method: &str,
    probe: &TrainConfig,
    seed: u64,
) -> Result<BiasSpec> {
    if sample.is_empty() {
        return Err(HarnessError::config("lookahead sample is empty"));
    }
    let m = lidcert_core::nn::importance::registry().get(method)?;
    let scores = m.scores(net, theta, sample, probe)?;
    Ok(make_bias(&scores, BiasMode::Prune, proportion, true, seed)?)
}

/// Trains on `data` inside the safe set; returns the index of the box the
/// result was projected into.
fn train_inside(
    net: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    safe: &SafeSet,
    strategy: &dyn SelectionStrategy,
    tc: &TrainConfig,
) -> lidcert_core::Result<(ParamVector, usize)> {
    match safe {
        SafeSet::Unbounded => Ok((sgd_train(net, theta, data, tc)?, 0)),
        SafeSet::Boxes(boxes) => {
            let refs: Vec<&LidBox> = boxes.iter().map(|b| &b.domain).collect();
            pgd_train_selecting(net, theta, data, &refs, strategy, tc)
        }
    }
}

/// The box reported as active at `theta`.
fn active_index(theta: &ParamVector, safe: &SafeSet, strategy: &dyn SelectionStrategy) -> lidcert_core::Result<Option<usize>> {
    match safe {
        SafeSet::Unbounded => Ok(None),
        SafeSet::Boxes(boxes) => {
            let refs: Vec<&LidBox> = boxes.iter().map(|b| &b.domain).collect();
            select_lid(theta, &refs, strategy, &SelectionContext::default()).map(Some)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub theta: ParamVector,
    /// The box protecting all certified tasks at the end, if any.
    pub active: Option<GuardedBox>,
    /// Every box certified during the run, in order.
    pub history: Vec<GuardedBox>,
    pub stream: TaskStream,
    pub net: NetworkSpec,
}

struct LidInfo {
    lambda_trace: Vec<f64>,
    snapshots: usize,
    kept: usize,
}

impl LidInfo {
    fn none() -> Self {
        LidInfo {
            lambda_trace: Vec::new(),
            snapshots: 0,
            kept: 0,
        }
    }

    fn of(set: &CheckpointSet) -> Self {
        LidInfo {
            lambda_trace: set.trace.lambdas.iter().map(|l| l[0]).collect(),
            snapshots: set.snapshots,
            kept: if set.fallback { 0 } else { set.checkpoints.len() },
        }
    }
}

fn make_step(
    prep: &Prepared,
    task: usize,
    theta: &ParamVector,
    active: Option<&GuardedBox>,
    info: &LidInfo,
    buffer_calls: usize,
) -> Result<TaskStep> {
    let seen = &prep.stream.tasks[..=task];
    let acc = |d: &Dataset| accuracy(&prep.net, theta, d).at_task(task);
    Ok(TaskStep {
        task,
        test_accuracy: seen.iter().map(|t| acc(&t.test)).collect::<Result<_>>()?,
        certification_accuracy: seen.iter().map(|t| acc(&t.certification)).collect::<Result<_>>()?,
        certificates: (0..=task).map(|i| active.and_then(|a| a.certificates.get(&i).cloned())).collect(),
        lid_size: active.map(|a| size_metric(&a.domain)),
        lambda_trace: info.lambda_trace.clone(),
        snapshots: info.snapshots,
        checkpoints_kept: info.kept,
        buffer_calls,
        param_fingerprint: theta.fingerprint(),
    })
}

fn config_value(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

/// Certified continual training. With `max_calls > 0` the box may also be
/// recomputed from the replay buffer while the new task underfits.
fn run_certified(cfg: &RunConfig, max_calls: usize, name: &str) -> Result<RunOutcome> {
    let prep = prepare(cfg)?;
    let strategy = safe::registry().get(&cfg.selection)?;
    let strategy = strategy.as_ref();
    let tasks = &prep.stream.tasks;
    let net = &prep.net;
    let mut buffer = ReplayBuffer::new(cfg.buffer.capacity);
    let mut buffer_rng = rng::stream(cfg.seed, "replay-buffer");
    let mut steps = Vec::new();
    let mut timings = Timings::default();

    let started = Instant::now();
    let mut theta = sgd_train(net, &prep.theta0, &tasks[0].train, &train_cfg(cfg, 0, 0)).at_task(0)?;
    let (mut safe_set, info) = if cfg.is_vacuous() {
        (SafeSet::Unbounded, LidInfo::none())
    } else {
        let lc = lid_cfg(cfg, 0, 0, bias_for(cfg, &prep, 0, &theta)?);
        let c = ConstraintSet {
            optimization: &tasks[0].train,
            certification: &tasks[0].certification,
            delta: cfg.delta(),
        };
        let set = compute_lid(net, &theta, &[c], &lc).at_task(0)?;
        (SafeSet::from_checkpoints(&set, &[0]), LidInfo::of(&set))
    };
    let mut history = Vec::new();
    remember(&mut history, &safe_set);
    let active = active_index(&theta, &safe_set, strategy).at_task(0)?;
    steps.push(make_step(&prep, 0, &theta, guarded(&safe_set, active), &info, 0)?);
    timings.per_task_ms.push(started.elapsed().as_secs_f64() * 1e3);
    buffer.push(0, &tasks[0].train, &tasks[0].certification, &mut buffer_rng)?;

    let mut termination = Termination::Completed;
    let mut completed = 1;
    for j in 1..tasks.len() {
        let started = Instant::now();
        let task = &tasks[j];
        let (t, mut chosen) = train_inside(net, &theta, &task.train, &safe_set, strategy, &train_cfg(cfg, j, 0)).at_task(j)?;
        theta = t;

        let mut calls = 0;
        while calls < max_calls
            && !buffer.is_empty()
            && !cfg.is_vacuous()
            && accuracy(net, &theta, &task.train).at_task(j)? < cfg.buffer.target_accuracy
        {
            calls += 1;
            let drawn = buffer.draw(cfg.buffer.draw, &mut buffer_rng)?;
            let constraints: Vec<ConstraintSet<'_>> = buffer
                .entries
                .iter()
                .zip(&drawn)
                .map(|(e, d)| ConstraintSet {
                    optimization: d,
                    certification: &e.holdout,
                    delta: cfg.delta(),
                })
                .collect();
            let ids: Vec<usize> = buffer.entries.iter().map(|e| e.task).collect();
            match compute_lid(net, &theta, &constraints, &lid_cfg(cfg, j, calls, None)) {
                Ok(set) => {
                    safe_set = SafeSet::from_checkpoints(&set, &ids);
                    remember(&mut history, &safe_set);
                }
                // the current parameters already violate a buffered task; keep
                // the box we have
                Err(lidcert_core::Error::InfeasibleNominal { .. }) => break,
                Err(e) => return Err(HarnessError::Task { task: j, source: e }),
            }
            let (t, c) = train_inside(net, &theta, &task.train, &safe_set, strategy, &train_cfg(cfg, j, calls)).at_task(j)?;
            theta = t;
            chosen = c;
        }

        let mut info = LidInfo::none();
        let mut certified = !cfg.is_vacuous();
        if let SafeSet::Boxes(boxes) = &safe_set {
            let prev = &boxes[chosen];
            let lc = lid_cfg(cfg, j, 0, bias_for(cfg, &prep, j, &theta)?);
            let c = ConstraintSet {
                optimization: &task.train,
                certification: &task.certification,
                delta: cfg.delta(),
            };
            let next = match compute_lid(net, &theta, &[c], &lc) {
                Ok(set) => {
                    info = LidInfo::of(&set);
                    let mut next = Vec::new();
                    let mut reason = None;
                    for cp in &set.checkpoints {
                        match intersect(&[&prev.domain, &cp.domain])? {
                            Intersection::Box(domain) => {
                                let mut certificates = prev.certificates.clone();
                                certificates.insert(j, cp.certificates[0].clone());
                                next.push(GuardedBox { domain, certificates });
                            }
                            Intersection::Empty(r) => reason = Some(r),
                        }
                    }
                    if next.is_empty() {
                        let keep = SafeSet::Boxes(vec![prev.clone()]);
                        steps.push(make_step(&prep, j, &theta, guarded(&keep, Some(0)), &info, calls)?);
                        timings.per_task_ms.push(started.elapsed().as_secs_f64() * 1e3);
                        termination = Termination::EmptyIntersection {
                            task: j,
                            reason: format!("{reason:?}"),
                        };
                        safe_set = keep;
                        break;
                    }
                    next
                }
                Err(lidcert_core::Error::InfeasibleNominal { .. }) if cfg.infeasible == InfeasiblePolicy::Skip => {
                    certified = false;
                    vec![prev.clone()]
                }
                Err(e) => return Err(HarnessError::Task { task: j, source: e }),
            };
            safe_set = SafeSet::Boxes(next);
            if certified {
                remember(&mut history, &safe_set);
            }
        }
        let active = active_index(&theta, &safe_set, strategy).at_task(j)?;
        steps.push(make_step(&prep, j, &theta, guarded(&safe_set, active), &info, calls)?);
        timings.per_task_ms.push(started.elapsed().as_secs_f64() * 1e3);
        // only certified tasks can constrain later recomputations
        if certified {
            buffer.push(j, &task.train, &task.certification, &mut buffer_rng)?;
        }
        completed += 1;
    }

    let active = active_index(&theta, &safe_set, strategy)?.and_then(|i| guarded(&safe_set, Some(i)).cloned());
    let record = RunRecord {
        algorithm: name.to_string(),
        seed: cfg.seed,
        protocol: cfg.protocol,
        config: config_value(cfg),
        steps,
        completed,
        termination,
        final_params: theta.clone(),
        timings,
    };
    Ok(RunOutcome {
        record,
        theta,
        active,
        history,
        stream: prep.stream,
        net: prep.net,
    })
}

fn remember(history: &mut Vec<GuardedBox>, safe: &SafeSet) {
    if let SafeSet::Boxes(b) = safe {
        history.extend(b.iter().cloned());
    }
}

fn guarded(safe: &SafeSet, index: Option<usize>) -> Option<&GuardedBox> {
    match (safe, index) {
        (SafeSet::Boxes(b), Some(i)) => b.get(i),
        _ => None,
    }
}

pub fn run_zero_buffer(cfg: &RunConfig) -> Result<RunOutcome> {
    run_certified(cfg, 0, "zero")
}

pub fn run_with_buffer(cfg: &RunConfig) -> Result<RunOutcome> {
    run_certified(cfg, cfg.buffer.max_calls_for(cfg.protocol), "buffer")
}

/// Sequential SGD over the tasks with the same seeds as the certified runs.
pub fn baseline_sgd(cfg: &RunConfig) -> Result<RunOutcome> {
    let prep = prepare(cfg)?;
    let mut theta = prep.theta0.clone();
    let mut steps = Vec::new();
    let mut timings = Timings::default();
    for (j, task) in prep.stream.tasks.iter().enumerate() {
        let started = Instant::now();
        theta = sgd_train(&prep.net, &theta, &task.train, &train_cfg(cfg, j, 0)).at_task(j)?;
        steps.push(make_step(&prep, j, &theta, None, &LidInfo::none(), 0)?);
        timings.per_task_ms.push(started.elapsed().as_secs_f64() * 1e3);
    }
    let record = RunRecord {
        algorithm: "sgd".into(),
        seed: cfg.seed,
        protocol: cfg.protocol,
        config: config_value(cfg),
        completed: steps.len(),
        steps,
        termination: Termination::Completed,
        final_params: theta.clone(),
        timings,
    };
    Ok(RunOutcome {
        record,
        theta,
        active: None,
        history: Vec::new(),
        stream: prep.stream,
        net: prep.net,
    })
}

/// A continual-learning procedure selectable by name.
pub trait ContinualAlgorithm: Named + Send + Sync {
    fn run(&self, cfg: &RunConfig) -> Result<RunOutcome>;
}

pub struct ZeroBuffer;
pub struct WithBuffer;
pub struct SgdBaseline;

impl Named for ZeroBuffer {
    fn name(&self) -> &'static str {
        "zero"
    }
}

impl Named for WithBuffer {
    fn name(&self) -> &'static str {
        "buffer"
    }
}

impl Named for SgdBaseline {
    fn name(&self) -> &'static str {
        "sgd"
    }
}

impl ContinualAlgorithm for ZeroBuffer {
    fn run(&self, cfg: &RunConfig) -> Result<RunOutcome> {
        run_zero_buffer(cfg)
    }
}

impl ContinualAlgorithm for WithBuffer {
    fn run(&self, cfg: &RunConfig) -> Result<RunOutcome> {
        run_with_buffer(cfg)
    }
}

impl ContinualAlgorithm for SgdBaseline {
    fn run(&self, cfg: &RunConfig) -> Result<RunOutcome> {
        baseline_sgd(cfg)
    }
}

pub fn algorithms() -> Registry<dyn ContinualAlgorithm> {
    let mut r: Registry<dyn ContinualAlgorithm> = Registry::new("algorithm");
    r.register(Arc::new(ZeroBuffer))
        .register(Arc::new(WithBuffer))
        .register(Arc::new(SgdBaseline));
    r
}

/// Runs `algorithm` once per seed in parallel; results keep seed order.
pub fn run_seeds(algorithm: &dyn ContinualAlgorithm, cfg: &RunConfig, seeds: &[u64]) -> Vec<Result<RunOutcome>> {
    seeds
        .par_iter()
        .map(|&seed| algorithm.run(&RunConfig { seed, ..cfg.clone() }))
        .collect()
}
