//! Task streams for continual learning.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use lidcert_core::nn::Dataset;
use lidcert_core::rng;

use crate::error::{HarnessError, Result};
use crate::idx::load_idx_pair;

const DIGITS_IMAGES: &[u8] = include_bytes!("../data/digits-images-idx3-ubyte");
const DIGITS_LABELS: &[u8] = include_bytes!("../data/digits-labels-idx1-ubyte");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// One output per class across all tasks; no task identity at test time.
    ClassIl,
    /// Every task relabelled to the same outputs (position within the task).
    DomainIl,
    /// Global outputs, but predictions are restricted to the task's classes.
    TaskIl,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::ClassIl => "class_il",
            Protocol::DomainIl => "domain_il",
            Protocol::TaskIl => "task_il",
        }
    }
}

/// Fractions of each task's samples used for training and certification; the
/// rest is the test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub certification: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.5,
            certification: 0.25,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.train > 0.0 && self.certification > 0.0 && self.train + self.certification < 1.0;
        if !ok {
            return Err(HarnessError::config(format!(
                "split fractions {}/{} leave no room for a test split",
                self.train, self.certification
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    /// Original class ids, in label order.
    pub classes: Vec<usize>,
    pub train: Dataset,
    pub certification: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub protocol: Protocol,
    /// Network outputs needed for this stream.
    pub outputs: usize,
    pub n_features: usize,
    pub seed: u64,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Relabels samples of one task under `protocol` and splits them.
fn make_task(
    pool: &Dataset,
    indices: &[usize],
    classes: &[usize],
    protocol: Protocol,
    fractions: SplitFractions,
    rng: &mut rng::Rng,
) -> Result<Task> {
    let mut idx = indices.to_vec();
    idx.shuffle(rng);
    let n = idx.len();
    let n_train = ((n as f64) * fractions.train).round() as usize;
    let n_cert = ((n as f64) * fractions.certification).round() as usize;
    if n_train == 0 || n_cert == 0 || n_train + n_cert >= n {
        return Err(HarnessError::config(format!("task with {n} samples is too small to split")));
    }
    let mut labels = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n * pool.n_features());
    for &i in &idx {
        let pos = classes.iter().position(|&c| c == pool.label(i)).expect("sample outside task classes");
        labels.push(match protocol {
            Protocol::DomainIl => pos,
            Protocol::ClassIl | Protocol::TaskIl => pool.label(i),
        });
        inputs.extend_from_slice(pool.input(i));
    }
    let all = Dataset::new(inputs, pool.n_features(), labels)?;
    let part = |range: std::ops::Range<usize>| -> Result<Dataset> {
        let d = all.subset(&range.collect::<Vec<_>>())?;
        Ok(match protocol {
            Protocol::TaskIl => d.with_classes(classes.to_vec())?,
            _ => d,
        })
    };
    Ok(Task {
        classes: classes.to_vec(),
        train: part(0..n_train)?,
        certification: part(n_train..n_train + n_cert)?,
        test: part(n_train + n_cert..n)?,
    })
}

/// Builds a stream where task `j` covers `task_classes[j]` of `pool`.
pub fn stream_from_classes(
    pool: &Dataset,
    task_classes: &[Vec<usize>],
    protocol: Protocol,
    fractions: SplitFractions,
    seed: u64,
) -> Result<TaskStream> {
    fractions.validate()?;
    let per_task = task_classes.first().map_or(0, Vec::len);
    if per_task < 2 || task_classes.iter().any(|c| c.len() != per_task) {
        return Err(HarnessError::config("every task needs the same number (≥ 2) of classes"));
    }
    let mut r = rng::stream(seed, "task-split");
    let tasks = task_classes
        .iter()
        .map(|classes| {
            let idx: Vec<usize> = (0..pool.len()).filter(|&i| classes.contains(&pool.label(i))).collect();
            make_task(pool, &idx, classes, protocol, fractions, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let outputs = match protocol {
        Protocol::DomainIl => per_task,
        _ => pool.labels().iter().max().map_or(0, |m| m + 1),
    };
    Ok(TaskStream {
        tasks,
        protocol,
        outputs,
        n_features: pool.n_features(),
        seed,
    })
}

/// Splits a labelled dataset into `tasks` two-class tasks, each pairing a
/// randomly chosen odd class with a randomly chosen even class. Within a task
/// the even class comes first, so domain-IL labels are `class mod 2`.
pub fn split_dataset(
    pool: &Dataset,
    tasks: usize,
    protocol: Protocol,
    fractions: SplitFractions,
    seed: u64,
) -> Result<TaskStream> {
    let mut classes: Vec<usize> = pool.labels().to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 * tasks {
        return Err(HarnessError::config(format!(
            "{} classes cannot form {tasks} two-class tasks",
            classes.len()
        )));
    }
    let mut even: Vec<usize> = classes.iter().copied().filter(|c| c % 2 == 0).collect();
    let mut odd: Vec<usize> = classes.iter().copied().filter(|c| c % 2 == 1).collect();
    if even.len() < tasks || odd.len() < tasks {
        return Err(HarnessError::config(format!(
            "need {tasks} odd and {tasks} even classes, have {} and {}",
            odd.len(),
            even.len()
        )));
    }
    let mut r = rng::stream(seed, "class-allocation");
    even.shuffle(&mut r);
    odd.shuffle(&mut r);
    let pairs: Vec<Vec<usize>> = (0..tasks).map(|j| vec![even[j], odd[j]]).collect();
    stream_from_classes(pool, &pairs, protocol, fractions, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobsSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub points_per_class: usize,
    /// Standard deviation of each cluster.
    pub spread: f64,
    /// Cluster means are drawn in `[−extent, extent]²`.
    pub extent: f64,
    /// Minimum distance between any two means.
    pub separation: f64,
}

impl Default for BlobsSpec {
    fn default() -> Self {
        BlobsSpec {
            tasks: 3,
            classes_per_task: 2,
            points_per_class: 200,
            spread: 0.5,
            extent: 5.0,
            separation: 3.0,
        }
    }
}

impl BlobsSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tasks < 2 {
            return Err(HarnessError::config("blobs need at least 2 tasks"));
        }
        if self.classes_per_task < 2 || self.points_per_class < 4 {
            return Err(HarnessError::config("blobs need ≥ 2 classes per task and ≥ 4 points per class"));
        }
        if !(self.spread >= 0.0 && self.extent > 0.0 && self.separation >= 0.0) {
            return Err(HarnessError::config("blob geometry must be nonnegative"));
        }
        Ok(())
    }

    /// Draws well-separated means; `None` if the square is too crowded.
    fn means(&self, r: &mut rng::Rng) -> Option<Vec<[f64; 2]>> {
        let k = self.tasks * self.classes_per_task;
        let mut means: Vec<[f64; 2]> = Vec::with_capacity(k);
        let mut attempts = 0;
        while means.len() < k {
            attempts += 1;
            if attempts > 100_000 {
                return None;
            }
            let m = [r.random_range(-self.extent..=self.extent), r.random_range(-self.extent..=self.extent)];
            if means.iter().all(|o| (o[0] - m[0]).hypot(o[1] - m[1]) >= self.separation) {
                means.push(m);
            }
        }
        Some(means)
    }
}

/// Gaussian clusters in the plane; task `j` gets classes
/// `j·c, …, j·c + c − 1`.
pub fn make_blobs(spec: &BlobsSpec, protocol: Protocol, fractions: SplitFractions, seed: u64) -> Result<TaskStream> {
    spec.validate()?;
    let mut r = rng::stream(seed, "blob-means");
    let means = spec
        .means(&mut r)
        .ok_or_else(|| HarnessError::config("cannot place that many separated blobs; raise extent or lower separation"))?;
    let mut r = rng::stream(seed, "blob-points");
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (class, m) in means.iter().enumerate() {
        for _ in 0..spec.points_per_class {
            // Box-Muller keeps the draw count fixed per point
            let (u1, u2): (f64, f64) = (r.random_range(f64::EPSILON..1.0), r.random());
            let rad = (-2.0 * u1.ln()).sqrt() * spec.spread;
            let ang = std::f64::consts::TAU * u2;
            inputs.push(m[0] + rad * ang.cos());
            inputs.push(m[1] + rad * ang.sin());
            labels.push(class);
        }
    }
    let pool = Dataset::new(inputs, 2, labels)?;
    let c = spec.classes_per_task;
    let task_classes: Vec<Vec<usize>> = (0..spec.tasks).map(|j| (j * c..(j + 1) * c).collect()).collect();
    stream_from_classes(&pool, &task_classes, protocol, fractions, seed)
}

/// The bundled 8×8 handwritten digits (1797 images, classes 0–9).
pub fn builtin_digits() -> Result<Dataset> {
    load_idx_pair(DIGITS_IMAGES, DIGITS_LABELS, None)
}
