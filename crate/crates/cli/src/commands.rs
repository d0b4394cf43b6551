//! Subcommand bodies. Each returns the JSON summary printed on stdout.

use std::fs;
use std::path::{Path, PathBuf};

use lidcert_core::lid::{certify_box, compute_lid, CheckpointSet, ConstraintSet, LidConfig};
use lidcert_core::nn::train::{sgd_train, TrainConfig};
use lidcert_core::nn::{accuracy, Dataset, NetworkSpec, ParamVector};
use lidcert_core::rng::derive_seed;
use lidcert_core::safe::{self, safe_mechanism, SelectionContext, UpdateProposal};
use lidcert_harness::{algorithms, emit_report, prepare, run_seeds, to_csv, ReportFormat, RunConfig, RunRecord, Task};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, Result};

/// A network together with one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub network: NetworkSpec,
    pub params: ParamVector,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.into(), source })?;
    }
    fs::write(path, text).map_err(|source| CliError::Write { path: path.into(), source })
}

fn to_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Run(e.to_string()))
}

/// The config at `path`, or the defaults when none is given.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::from_json(&read_text(p)?)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<ModelFile> {
    let m: ModelFile = read_json(path)?;
    m.network.check_params(&m.params).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(m)
}

fn load_lid(path: &Path) -> Result<CheckpointSet> {
    CheckpointSet::from_json(&read_text(path)?).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn same_network(expected: &NetworkSpec, got: &NetworkSpec, what: &str) -> Result<()> {
    if expected != got {
        return Err(CliError::config(format!("{what} was built for a different network")));
    }
    Ok(())
}

/// Task `task` of the configured stream, with the network it implies.
fn task_of(cfg: &RunConfig, task: usize) -> Result<(Task, NetworkSpec, ParamVector)> {
    let prepared = prepare(cfg)?;
    let count = prepared.stream.tasks.len();
    let t = prepared
        .stream
        .tasks
        .into_iter()
        .nth(task)
        .ok_or_else(|| CliError::config(format!("task {task} out of range for a stream of {count}")))?;
    Ok((t, prepared.net, prepared.theta0))
}

fn lid_config(cfg: &RunConfig, task: usize) -> LidConfig {
    LidConfig {
        seed: derive_seed(cfg.seed, &format!("lid-{task}-0")),
        ..cfg.lid.clone()
    }
}

pub fn train(config: Option<&Path>, task: usize, init: Option<&Path>, out: &Path) -> Result<Value> {
    let cfg = load_config(config)?;
    let (t, net, theta0) = task_of(&cfg, task)?;
    let start = match init {
        Some(p) => {
            let m = load_model(p)?;
            same_network(&net, &m.network, "initial model")?;
            m.params
        }
        None => theta0,
    };
    let tc = TrainConfig {
        seed: derive_seed(cfg.seed, &format!("train-{task}")),
        ..cfg.train.clone()
    };
    let theta = sgd_train(&net, &start, &t.train, &tc)?;
    let summary = json!({
        "task": task,
        "params": theta.len(),
        "train_accuracy": accuracy(&net, &theta, &t.train)?,
        "test_accuracy": accuracy(&net, &theta, &t.test)?,
    });
    write_text(out, &to_pretty(&ModelFile { network: net, params: theta })?)?;
    Ok(summary)
}

pub fn lid(config: Option<&Path>, task: usize, model: &Path, out: &Path) -> Result<Value> {
    let cfg = load_config(config)?;
    let (t, net, _) = task_of(&cfg, task)?;
    let m = load_model(model)?;
    same_network(&net, &m.network, "model")?;
    let constraint = ConstraintSet {
        optimization: &t.train,
        certification: &t.certification,
        delta: cfg.delta(),
    };
    let set = compute_lid(&net, &m.params, &[constraint], &lid_config(&cfg, task))?;
    let latest = set.latest().map(|c| &c.certificates[0]);
    let summary = json!({
        "task": task,
        "checkpoints": set.checkpoints.len(),
        "snapshots": set.snapshots,
        "fallback": set.fallback,
        "size": set.latest().map(|c| c.size),
        "certified_bound": latest.map(|c| c.certified_bound),
    });
    write_text(out, &set.to_json()?)?;
    Ok(summary)
}

pub fn certify(config: Option<&Path>, task: usize, lid: &Path, data: Option<&Path>) -> Result<Value> {
    let cfg = load_config(config)?;
    let (t, net, _) = task_of(&cfg, task)?;
    let set = load_lid(lid)?;
    same_network(&net, &set.network, "box file")?;
    let eval: Dataset = match data {
        Some(p) => read_json(p)?,
        None => t.certification.clone(),
    };
    let constraint = ConstraintSet {
        optimization: &t.train,
        certification: &eval,
        delta: cfg.delta(),
    };
    let lc = lid_config(&cfg, task);
    let mut rows = Vec::with_capacity(set.checkpoints.len());
    for cp in &set.checkpoints {
        let fresh = certify_box(&net, &cp.domain, &[constraint], &lc, &[t.train.fingerprint()])?;
        let c = &fresh[0];
        let stored = cp.certificates.first();
        rows.push(json!({
            "iteration": cp.iteration,
            "raw_bound": c.raw_bound,
            "certified_bound": c.certified_bound,
            "margin": c.margin,
            "holds": c.holds,
            "stored_certified_bound": stored.map(|s| s.certified_bound),
            "reproduced": stored.is_some_and(|s| s.certified_bound.to_bits() == c.certified_bound.to_bits()),
        }));
    }
    Ok(json!({ "task": task, "checkpoints": rows }))
}

pub fn update(model: &Path, lid: &Path, proposal: &Path, strategy: &str, out: &Path) -> Result<Value> {
    let m = load_model(model)?;
    let set = load_lid(lid)?;
    same_network(&m.network, &set.network, "box file")?;
    let proposal: UpdateProposal = read_json(proposal)?;
    let strategy = safe::registry().get(strategy).map_err(|e| CliError::config(e.to_string()))?;
    let certified: Vec<_> = set.checkpoints.iter().filter(|c| c.certified()).collect();
    let boxes: Vec<_> = certified.iter().map(|c| &c.domain).collect();
    let ctx = SelectionContext { net: Some(&m.network), batch: None };
    let (theta, chosen) = safe_mechanism(&m.params, &proposal, &boxes, strategy.as_ref(), &ctx)?;
    let moved = theta
        .iter()
        .zip(m.params.iter().zip(&proposal.delta))
        .filter(|(t, (p, u))| (*p + *u).to_bits() != t.to_bits())
        .count();
    let summary = json!({
        "checkpoint_iteration": certified[chosen].iteration,
        "strategy": strategy.name(),
        "clamped_coordinates": moved,
    });
    write_text(out, &to_pretty(&ModelFile { network: m.network, params: theta })?)?;
    Ok(summary)
}

pub struct ContinualArgs<'a> {
    pub config: Option<&'a Path>,
    pub algorithm: &'a str,
    pub max_calls: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub out_dir: Option<PathBuf>,
    pub format: ReportFormat,
}

pub fn continual(args: ContinualArgs<'_>) -> Result<Value> {
    let mut cfg = load_config(args.config)?;
    let algorithm = algorithms().get(args.algorithm).map_err(|e| CliError::config(e.to_string()))?;
    if args.max_calls.is_some() {
        if args.algorithm != "buffer" {
            return Err(CliError::config("--max-calls only applies to the buffer algorithm"));
        }
        cfg.buffer.max_calls = args.max_calls;
    }
    let seeds = args.seeds.unwrap_or_else(|| vec![cfg.seed]);
    let out_dir = args.out_dir.or_else(|| cfg.output_dir.clone());
    let mut summary = Vec::with_capacity(seeds.len());
    for (seed, result) in seeds.iter().zip(run_seeds(algorithm.as_ref(), &cfg, &seeds)) {
        let outcome = result?;
        let r = &outcome.record;
        let files = match &out_dir {
            Some(dir) => emit_report(&[r], dir, &format!("{}-seed{seed}", r.algorithm), args.format)?,
            None => Vec::new(),
        };
        summary.push(json!({
            "seed": seed,
            "completed": r.completed,
            "termination": r.termination,
            "final_average_accuracy": r.final_average_accuracy(),
            "files": files,
        }));
    }
    Ok(json!({ "algorithm": algorithm.name(), "runs": summary }))
}

/// Mean test and certified accuracy per (step, task) across records, as CSV.
fn accuracy_table(records: &[RunRecord]) -> String {
    let steps = records.iter().map(|r| r.steps.len()).max().unwrap_or(0);
    let mut out = String::from("step,task,runs,mean_test_accuracy,mean_certified_accuracy\n");
    for s in 0..steps {
        let tasks = records.iter().filter_map(|r| r.steps.get(s)).map(|st| st.test_accuracy.len()).max().unwrap_or(0);
        for t in 0..tasks {
            let at: Vec<_> = records.iter().filter_map(|r| r.steps.get(s)).filter(|st| t < st.test_accuracy.len()).collect();
            let test = at.iter().map(|st| st.test_accuracy[t]).sum::<f64>() / at.len() as f64;
            let certs: Vec<f64> = at.iter().filter_map(|st| st.certified_accuracy(t)).collect();
            let cert = if certs.is_empty() {
                String::new()
            } else {
                (certs.iter().sum::<f64>() / certs.len() as f64).to_string()
            };
            out.push_str(&format!("{s},{t},{},{test},{cert}\n", at.len()));
        }
    }
    out
}

pub enum ReportOutput {
    /// Files were written; the summary goes to stdout.
    Written(Value),
    /// No output directory: the text itself goes to stdout.
    Text(String),
}

pub fn report(inputs: &[PathBuf], format: ReportFormat, out_dir: Option<&Path>, stem: &str) -> Result<ReportOutput> {
    if inputs.is_empty() {
        return Err(CliError::config("no run records given"));
    }
    let records = inputs
        .iter()
        .map(|p| RunRecord::from_json(&read_text(p)?).map_err(|e| CliError::config(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&RunRecord> = records.iter().collect();
    let Some(dir) = out_dir else {
        return Ok(ReportOutput::Text(match format {
            ReportFormat::Json => to_pretty(&refs)?,
            ReportFormat::Csv | ReportFormat::Both => to_csv(&refs)?,
        }));
    };
    let mut files = emit_report(&refs, dir, stem, format)?;
    let table = dir.join(format!("{stem}-accuracy.csv"));
    write_text(&table, &accuracy_table(&records))?;
    files.push(table);
    Ok(ReportOutput::Written(json!({ "records": records.len(), "files": files })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_table_of_nothing_is_a_header() {
        assert_eq!(accuracy_table(&[]).lines().count(), 1);
    }
}
