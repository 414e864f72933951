use serde::{Deserialize, Serialize};

use super::{analyze, ExperimentConfig, TunnelReport};
use crate::data::{split_tasks, Dataset};
use crate::error::{precondition, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{init_network, stitch, train, truncate, Layer, Network, NetworkSpec, TrainOutcome};
use crate::probes::{probe_accuracy, train_probe};
use crate::seed;

/// Two-task sequential setup shared by stitching and shorter networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StitchConfig {
    /// Class groups of task 1 and task 2.
    pub tasks: Vec<Vec<usize>>,
    /// Extractor/tunnel split in layers; defaults to the task-1 extractor
    /// length.
    pub split: Option<usize>,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            tasks: vec![(0..5).collect(), (5..10).collect()],
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchEntry {
    pub extractor: usize,
    pub tunnel: usize,
    pub task: usize,
    pub accuracy: f64,
}

/// Accuracy on `eval_task` when hidden layers `[0, x)` come from the
/// network after task `bottom` and the rest from the one after task `top`;
/// entry `x` of `accuracy` for `x` in `0..=depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionSweep {
    pub eval_task: usize,
    pub bottom: usize,
    pub top: usize,
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchGrid {
    pub split: usize,
    pub task1: TunnelReport,
    /// All eight `(E_e + T_t, task)` combinations, each evaluated with the
    /// head trained on the evaluation task.
    pub entries: Vec<StitchEntry>,
    /// Fresh task-1 probe on the last hidden layer of `E_2 + T_1`.
    pub ft_e2_t1: f64,
    /// Fresh task-1 probe on the output of `E_2`.
    pub ft_e2: f64,
    pub sweeps: Vec<SubstitutionSweep>,
    pub task1_after_task1: f64,
    pub task1_after_task2: f64,
    pub task2_after_task2: f64,
    pub forgetting: f64,
}

impl StitchGrid {
    pub fn accuracy(&self, extractor: usize, tunnel: usize, task: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.extractor == extractor && e.tunnel == tunnel && e.task == task)
            .map(|e| e.accuracy)
    }
}

#[derive(Debug, Clone)]
pub struct StitchRun {
    pub grid: StitchGrid,
    pub task1: TrainOutcome,
    pub task2: TrainOutcome,
}

struct Tasks {
    train: [Dataset; 2],
    test: [Dataset; 2],
}

fn load_tasks(cfg: &ExperimentConfig) -> Result<Tasks> {
    if cfg.stitch.tasks.len() != 2 {
        return Err(Error::Config(format!(
            "stitch.tasks needs exactly 2 class groups, got {}",
            cfg.stitch.tasks.len()
        )));
    }
    if cfg.stitch.tasks.iter().any(|g| g.len() < 2) {
        return Err(Error::Config("every task needs at least 2 classes".into()));
    }
    let (train_data, test_data) = cfg.data.load()?;
    let tr = split_tasks(&train_data, &cfg.stitch.tasks)?;
    let te = split_tasks(&test_data, &cfg.stitch.tasks)?;
    let [a, b]: [Dataset; 2] = tr.try_into().expect("two groups");
    let [c, d]: [Dataset; 2] = te.try_into().expect("two groups");
    Ok(Tasks {
        train: [a, b],
        test: [c, d],
    })
}

struct Sequential {
    first: TrainOutcome,
    second: TrainOutcome,
    task1_after_task1: f64,
    task1_after_task2: f64,
}

/// Task 1 from a fresh initialisation, then task 2 from the task-1
/// parameters with a newly initialised head. Nothing is frozen.
fn train_sequential(spec1: &NetworkSpec, tasks: &Tasks, cfg: &ExperimentConfig) -> Result<Sequential> {
    let net = init_network(spec1, cfg.init_seed())?;
    let first = train(&net, &tasks.train[0], &tasks.test[0], &cfg.effective_train())?;
    let spec2 = NetworkSpec {
        num_classes: tasks.train[1].num_classes,
        ..spec1.clone()
    };
    let head = init_network(&spec2, seed::derive(cfg.init_seed(), "task2-head", 0))?
        .layers
        .pop()
        .expect("head layer");
    let start = first.network.with_head(&head)?;
    let train2 = crate::nn::TrainConfig {
        seed: seed::derive(cfg.effective_train().seed, "task2", 0),
        ..cfg.effective_train()
    };
    let second = train(&start, &tasks.train[1], &tasks.test[1], &train2)?;
    let task1_after_task2 = second
        .network
        .with_head(first.network.head())?
        .accuracy(&tasks.test[0].features, &tasks.test[0].labels)?;
    Ok(Sequential {
        task1_after_task1: first.test_accuracy,
        task1_after_task2,
        first,
        second,
    })
}

/// Hidden layers `[0, split)` of `bottom`, the remaining hidden layers of
/// `top`, and `head`.
fn compose(bottom: &Network, top: &Network, head: &Layer, split: usize) -> Result<Network> {
    stitch(&bottom.with_head(head)?, &top.with_head(head)?, split)
}

/// Output of the first `k` hidden layers; `k = 0` is the input itself.
fn representation(net: &Network, x: &Matrix, k: usize) -> Result<Matrix> {
    if k == 0 {
        return Ok(x.clone());
    }
    let (acts, _) = net.forward_collect(x)?;
    Ok(acts.layers[k - 1].clone())
}

fn finetune_accuracy(net: &Network, k: usize, tasks: &Tasks, cfg: &ExperimentConfig) -> Result<f64> {
    let train_rep = representation(net, &tasks.train[0].features, k)?;
    let test_rep = representation(net, &tasks.test[0].features, k)?;
    let probe = train_probe(&train_rep, &tasks.train[0].labels, tasks.train[0].num_classes, &cfg.effective_probe())?;
    probe_accuracy(&probe, &test_rep, &tasks.test[0].labels)
}

/// Sequential two-task training, extractor/tunnel mixing at the task-1
/// split, both substitution sweeps and the two head-refit rows.
pub fn run_stitch_experiment(cfg: &ExperimentConfig) -> Result<StitchRun> {
    cfg.validate()?;
    let tasks = load_tasks(cfg)?;
    let spec1 = cfg.network.spec(tasks.train[0].dim(), tasks.train[0].num_classes)?;
    let seq = train_sequential(&spec1, &tasks, cfg)?;
    let depth = spec1.depth();
    let nets = [&seq.first.network, &seq.second.network];
    let heads = [seq.first.network.head(), seq.second.network.head()];

    let task1 = analyze(nets[0], &tasks.train[0], &tasks.test[0], seq.task1_after_task1, cfg)?;
    let split = match cfg.stitch.split {
        Some(s) if s > depth => {
            return Err(precondition(format!("stitch.split {s} exceeds depth {depth}")));
        }
        Some(s) => s,
        None => task1.extractor_length(),
    };

    let eval = |bottom: usize, top: usize, task: usize, at: usize| -> Result<f64> {
        compose(nets[bottom], nets[top], heads[task], at)?
            .accuracy(&tasks.test[task].features, &tasks.test[task].labels)
    };
    let mut entries = Vec::with_capacity(8);
    for e in 0..2 {
        for t in 0..2 {
            for task in 0..2 {
                entries.push(StitchEntry {
                    extractor: e + 1,
                    tunnel: t + 1,
                    task: task + 1,
                    accuracy: eval(e, t, task, split)?,
                });
            }
        }
    }
    let mut sweeps = Vec::with_capacity(4);
    for task in 0..2 {
        for (bottom, top) in [(0, 1), (1, 0)] {
            sweeps.push(SubstitutionSweep {
                eval_task: task + 1,
                bottom: bottom + 1,
                top: top + 1,
                accuracy: (0..=depth)
                    .map(|x| eval(bottom, top, task, x))
                    .collect::<Result<_>>()?,
            });
        }
    }
    let e2_t1 = compose(nets[1], nets[0], heads[0], split)?;
    let ft_e2_t1 = finetune_accuracy(&e2_t1, depth, &tasks, cfg)?;
    let ft_e2 = finetune_accuracy(nets[1], split, &tasks, cfg)?;
    let task2_after_task2 = seq.second.test_accuracy;
    Ok(StitchRun {
        grid: StitchGrid {
            split,
            task1,
            entries,
            ft_e2_t1,
            ft_e2,
            sweeps,
            task1_after_task1: seq.task1_after_task1,
            task1_after_task2: seq.task1_after_task2,
            task2_after_task2,
            forgetting: seq.task1_after_task1 - seq.task1_after_task2,
        },
        task1: seq.first,
        task2: seq.second,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShorterConfig {
    /// Hidden depths to retrain; empty means the task-1 extractor length of
    /// the full network.
    pub depths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShorterRow {
    pub depth: usize,
    pub task1_after_task1: f64,
    pub task1_after_task2: f64,
    pub task2_after_task2: f64,
    /// Task-1 accuracy lost by training on task 2.
    pub forgetting: f64,
}

impl ShorterRow {
    fn from(depth: usize, seq: &Sequential) -> Self {
        Self {
            depth,
            task1_after_task1: seq.task1_after_task1,
            task1_after_task2: seq.task1_after_task2,
            task2_after_task2: seq.second.test_accuracy,
            forgetting: seq.task1_after_task1 - seq.task1_after_task2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShorterReport {
    pub full_depth: usize,
    pub task1_tunnel_start_95: usize,
    pub extractor_length: usize,
    /// Full depth first, then each requested depth.
    pub rows: Vec<ShorterRow>,
}

/// Sequential two-task training at full depth and at each truncated depth.
pub fn run_shorter_network_experiment(cfg: &ExperimentConfig) -> Result<ShorterReport> {
    cfg.validate()?;
    let tasks = load_tasks(cfg)?;
    let full = cfg.network.spec(tasks.train[0].dim(), tasks.train[0].num_classes)?;
    let seq = train_sequential(&full, &tasks, cfg)?;
    let task1 = analyze(&seq.first.network, &tasks.train[0], &tasks.test[0], seq.task1_after_task1, cfg)?;
    let extractor_length = task1.extractor_length();
    let depths = if cfg.shorter.depths.is_empty() {
        vec![extractor_length]
    } else {
        cfg.shorter.depths.clone()
    };
    let mut rows = vec![ShorterRow::from(full.depth(), &seq)];
    for depth in depths {
        let spec = truncate(&full, depth)?;
        rows.push(ShorterRow::from(depth, &train_sequential(&spec, &tasks, cfg)?));
    }
    Ok(ShorterReport {
        full_depth: full.depth(),
        task1_tunnel_start_95: task1.tunnel_start_95.layer,
        extractor_length,
        rows,
    })
}
