//! Run configuration. Every field has a default, so a config file only needs
//! the values it changes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use lidcert_core::lid::{BiasMode, BiasSpec, LidConfig};
use lidcert_core::nn::train::TrainConfig;
use lidcert_core::nn::Activation;

use crate::data::{BlobsSpec, Protocol, SplitFractions};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Blobs(BlobsSpec),
    /// Two-class odd/even digit tasks. Without paths the bundled 8×8 digits
    /// are used; IDX files are downsampled to `side × side` when given.
    Digits {
        #[serde(default = "default_digit_tasks")]
        tasks: usize,
        #[serde(default)]
        images: Option<PathBuf>,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default)]
        side: Option<usize>,
    },
}

fn default_digit_tasks() -> usize {
    5
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs(BlobsSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![16],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BufferConfig {
    /// Recompute the box from buffers while current-task training accuracy is
    /// below this.
    pub target_accuracy: f64,
    /// Recomputations per task; by default 1, 3 and 7 for task-, domain- and
    /// class-incremental streams.
    pub max_calls: Option<usize>,
    /// Samples stored per completed task.
    pub capacity: usize,
    /// Samples drawn per buffered task for each recomputation.
    pub draw: usize,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig {
            target_accuracy: 0.65,
            max_calls: None,
            capacity: 200,
            draw: 200,
        }
    }
}

impl BufferConfig {
    pub fn max_calls_for(&self, protocol: Protocol) -> usize {
        self.max_calls.unwrap_or(match protocol {
            Protocol::TaskIl => 1,
            Protocol::DomainIl => 3,
            Protocol::ClassIl => 7,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasConfig {
    pub mode: BiasMode,
    pub lookahead: bool,
    /// Defaults to 0.825 with lookahead and 0.05 without.
    pub proportion: Option<f64>,
    /// Registered importance method name.
    pub importance: String,
    /// Next-task samples used for lookahead importance.
    pub lookahead_samples: usize,
    /// Epochs of the probe run that feeds synaptic intelligence.
    pub probe_epochs: usize,
    pub reg_weight: f64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            mode: BiasMode::None,
            lookahead: false,
            proportion: None,
            importance: "synaptic-intelligence".into(),
            lookahead_samples: 100,
            probe_epochs: 1,
            reg_weight: BiasSpec::DEFAULT_REG_WEIGHT,
        }
    }
}

impl BiasConfig {
    pub fn proportion(&self) -> f64 {
        self.proportion.unwrap_or(if self.lookahead {
            BiasSpec::DEFAULT_LOOKAHEAD_PROPORTION
        } else {
            BiasSpec::DEFAULT_PROPORTION
        })
    }
}

/// What to do when the model trained on a new task misses the required
/// accuracy there, so no box can be certified for it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasiblePolicy {
    /// Abort the run with the task index.
    #[default]
    Error,
    /// Leave the task uncertified and keep protecting earlier tasks with the
    /// current box.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub protocol: Protocol,
    pub splits: SplitFractions,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub lid: LidConfig,
    /// Minimum accuracy certified on every task; 0 disables certification.
    pub required_accuracy: f64,
    /// Registered checkpoint selection strategy.
    pub selection: String,
    pub buffer: BufferConfig,
    pub bias: BiasConfig,
    pub infeasible: InfeasiblePolicy,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSpec::default(),
            protocol: Protocol::ClassIl,
            splits: SplitFractions::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            lid: LidConfig::default(),
            required_accuracy: 0.8,
            selection: "sample_largest_closest".into(),
            buffer: BufferConfig::default(),
            bias: BiasConfig::default(),
            infeasible: InfeasiblePolicy::Error,
            seed: 0,
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Settings for the small blob and 8×8 digit networks. With the default
    /// dual step the box overshoots the constraint long before the multiplier
    /// reacts, and small class-incremental streams often leave a new task
    /// unreachable inside the current box, so such tasks are skipped.
    pub fn desk_preset() -> Self {
        RunConfig {
            train: TrainConfig {
                epochs: 20,
                lr: 0.05,
                batch_size: 16,
                ..TrainConfig::default()
            },
            lid: LidConfig {
                dual_lr: 0.1,
                checkpoint_period: 10,
                ..LidConfig::default()
            },
            infeasible: InfeasiblePolicy::Skip,
            ..RunConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| HarnessError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Threshold on negated accuracy.
    pub fn delta(&self) -> f64 {
        -self.required_accuracy
    }

    /// No accuracy is required, so the whole parameter space is safe.
    pub fn is_vacuous(&self) -> bool {
        self.required_accuracy <= 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: lidcert_core::Error| HarnessError::config(e.to_string());
        self.train.validate().map_err(wrap)?;
        self.lid.validate().map_err(wrap)?;
        self.splits.validate()?;
        match &self.dataset {
            DatasetSpec::Blobs(b) => b.validate()?,
            DatasetSpec::Digits { tasks, images, labels, side } => {
                if *tasks < 2 {
                    return Err(HarnessError::config("digit streams need at least 2 tasks"));
                }
                if images.is_some() != labels.is_some() {
                    return Err(HarnessError::config("digit images and labels must be given together"));
                }
                for p in [images, labels].into_iter().flatten() {
                    if !p.is_file() {
                        return Err(HarnessError::config(format!("{} does not exist", p.display())));
                    }
                }
                if *side == Some(0) {
                    return Err(HarnessError::config("downsampled side must be positive"));
                }
            }
        }
        if self.network.hidden.contains(&0) {
            return Err(HarnessError::config("hidden layers must have at least one unit"));
        }
        if !(0.0..=1.0).contains(&self.required_accuracy) {
            return Err(HarnessError::config(format!(
                "required accuracy {} not in [0, 1]",
                self.required_accuracy
            )));
        }
        lidcert_core::safe::registry().get(&self.selection).map_err(wrap)?;
        let b = &self.buffer;
        if !(0.0..=1.0).contains(&b.target_accuracy) {
            return Err(HarnessError::config("buffer target accuracy must lie in [0, 1]"));
        }
        if b.draw == 0 || b.capacity < b.draw {
            return Err(HarnessError::config(format!(
                "buffer capacity {} must be at least the draw size {} (> 0)",
                b.capacity, b.draw
            )));
        }
        let bias = &self.bias;
        if bias.mode != BiasMode::None {
            let p = bias.proportion();
            if !(p > 0.0 && p < 1.0) {
                return Err(HarnessError::config(format!("bias proportion {p} not in (0, 1)")));
            }
            lidcert_core::nn::importance::registry().get(&bias.importance).map_err(wrap)?;
            if bias.lookahead && bias.lookahead_samples == 0 {
                return Err(HarnessError::config("lookahead needs at least one sample"));
            }
            if bias.probe_epochs == 0 {
                return Err(HarnessError::config("probe runs need at least one epoch"));
            }
            if !(bias.reg_weight >= 0.0 && bias.reg_weight.is_finite()) {
                return Err(HarnessError::config("regularization weight must be nonnegative"));
            }
        }
        Ok(())
    }
}
