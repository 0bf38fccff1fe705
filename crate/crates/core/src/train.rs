//! Imitation training: masked cross-entropy against expert labels, Adam with
//! step-decayed learning rate, periodic checkpoints and a metrics CSV.
//!
//! Training runs on one thread with every random choice drawn from streams
//! keyed on the seed, so two runs with the same inputs write identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::checkpoint::{self, CheckpointMeta};
use crate::datagen::{Dataset, Label};
use crate::error::{Error, Result};
use crate::game::{Direction, Observation};
use crate::nn::{softmax_cross_entropy, Adam, LrSchedule, Matrix};
use crate::pin::{action_from_logits, PinPolicy, PolicyConfig, QuantMode, TeamBatch};
use crate::seed::rng_for;

const TAG_INIT: u64 = 0x494e_4954;
const TAG_EPOCH: u64 = 0x4550_4f43;
/// Validation accuracy is measured on at most this many examples.
const VALIDATION_CAP: usize = 4_096;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub policy: PolicyConfig,
    /// Teams (examples) per step.
    pub batch_size: usize,
    pub iterations: u64,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 writes only the
    /// final one.
    pub checkpoint_every: u64,
    /// Metrics row every this many iterations (and after the last one).
    pub log_every: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            policy: PolicyConfig::default(),
            batch_size: 256,
            iterations: 20_000,
            schedule: LrSchedule::default(),
            seed: 0,
            checkpoint_every: 5_000,
            log_every: 100,
            validation_fraction: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iteration count must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log interval must be positive"));
        }
        if !(self.schedule.base > 0.0) || !(self.schedule.drop_factor > 0.0) || self.schedule.drop_period == 0 {
            return Err(Error::config("learning-rate schedule must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    /// Accuracy of the current batch over labelled (non don't-care) agents.
    pub masked_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

pub const METRICS_HEADER: &str = "iteration,lr,loss,masked_accuracy,val_accuracy";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let val = r.val_accuracy.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{:e},{:.6},{:.6},{}",
            r.iteration, r.lr, r.loss, r.masked_accuracy, val
        );
    }
    s
}

/// Mean masked cross-entropy of a batch, its gradient with respect to the
/// logits, and the number of correct and labelled agents.
///
/// Agents labelled don't-care contribute nothing. A batch with no labelled
/// agent has zero loss and a zero gradient.
pub fn masked_loss(logits: &Matrix, labels: &[Label]) -> (f64, Matrix, usize, usize) {
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let labelled = labels.iter().filter(|l| l.class().is_some()).count();
    if labelled == 0 {
        return (0.0, grad, 0, 0);
    }
    let scale = 1.0 / labelled as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    for (a, label) in labels.iter().enumerate() {
        let Some(class) = label.class() else { continue };
        let z = logits.row(a);
        let (l, g) = softmax_cross_entropy(z, class);
        loss += l;
        for (dst, gv) in grad.row_mut(a).iter_mut().zip(g) {
            *dst = gv * scale;
        }
        let predicted = match action_from_logits(z) {
            Direction::Ccw => 0,
            Direction::Cw => 1,
        };
        if predicted == class {
            correct += 1;
        }
    }
    (loss * scale, grad, correct, labelled)
}

/// Fraction of labelled agents whose greedy action matches the label, over
/// `examples` chunked into batches.
pub fn labelled_accuracy(policy: &PinPolicy, teams: &[Vec<Observation>], labels: &[Vec<Label>]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (obs_chunk, lab_chunk) in teams.chunks(256).zip(labels.chunks(256)) {
        let batch = TeamBatch::new(obs_chunk);
        let out = policy.infer(&batch, QuantMode::Snap);
        let flat: Vec<Label> = lab_chunk.iter().flatten().copied().collect();
        let (_, _, c, t) = masked_loss(&out.logits, &flat);
        correct += c;
        total += t;
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

pub struct TrainOutcome {
    pub policy: PinPolicy,
    pub metrics: Vec<MetricsRow>,
    /// Checkpoints written, in order; the last one is the final policy.
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(iteration: u64) -> String {
    format!("checkpoint_{iteration:07}.ckpt")
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

/// Train a fresh policy on `dataset`. With `out_dir`, checkpoints and
/// `metrics.csv` are written there.
pub fn fit(dataset: &Dataset, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let fov = dataset.config.fov;
    let mask = dataset.validation_mask(config.validation_fraction);
    let mut train_obs = Vec::new();
    let mut train_labels = Vec::new();
    let mut held_out = Vec::new();
    for (e, &is_val) in dataset.examples.iter().zip(&mask) {
        if is_val {
            held_out.push(e);
        } else {
            train_obs.push(e.observations(fov));
            train_labels.push(e.labels.clone());
        }
    }
    // held-out shards are grouped by scenario, so thin evenly rather than truncate
    let keep = held_out.len().min(VALIDATION_CAP);
    let (val_obs, val_labels): (Vec<_>, Vec<_>) = (0..keep)
        .map(|i| held_out[i * held_out.len() / keep])
        .map(|e| (e.observations(fov), e.labels.clone()))
        .unzip();
    if train_obs.is_empty() {
        return Err(Error::config("dataset has no training examples"));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut policy = PinPolicy::new(config.policy, &mut rng_for(config.seed, &[TAG_INIT]))?;
    let mut adam = Adam::new(policy.param_count());
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();

    let mut order: Vec<usize> = (0..train_obs.len()).collect();
    let mut cursor = order.len();
    let mut epoch = 0u64;
    let mut window = (0.0, 0usize, 0usize, 0u64);

    for it in 1..=config.iterations {
        let mut picked = Vec::with_capacity(config.batch_size);
        while picked.len() < config.batch_size {
            if cursor == order.len() {
                order.sort_unstable();
                order.shuffle(&mut rng_for(config.seed, &[TAG_EPOCH, epoch]));
                epoch += 1;
                cursor = 0;
            }
            let take = (config.batch_size - picked.len()).min(order.len() - cursor);
            picked.extend_from_slice(&order[cursor..cursor + take]);
            cursor += take;
        }
        let teams: Vec<&[Observation]> = picked.iter().map(|&i| train_obs[i].as_slice()).collect();
        let labels: Vec<Label> = picked.iter().flat_map(|&i| train_labels[i].iter().copied()).collect();
        let batch = TeamBatch::new(&teams);

        let (out, cache) = policy.forward(&batch, QuantMode::Snap);
        let (loss, upstream, correct, labelled) = masked_loss(&out.logits, &labels);
        let lr = config.schedule.at(it - 1);
        if labelled > 0 {
            let grads = policy.backward(&batch, &cache, &upstream);
            let g = grads.param_slices();
            adam.step(&mut policy.param_slices_mut(), &g, lr);
        }
        window.0 += loss;
        window.1 += correct;
        window.2 += labelled;
        window.3 += 1;

        if it % config.log_every == 0 || it == config.iterations {
            let val_accuracy = if val_obs.is_empty() {
                None
            } else {
                Some(labelled_accuracy(&policy, &val_obs, &val_labels))
            };
            metrics.push(MetricsRow {
                iteration: it,
                lr,
                loss: window.0 / window.3 as f64,
                masked_accuracy: if window.2 == 0 {
                    0.0
                } else {
                    window.1 as f64 / window.2 as f64
                },
                val_accuracy,
            });
            window = (0.0, 0, 0, 0);
        }

        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 && it != config.iterations {
                let path = dir.join(checkpoint_name(it));
                checkpoint::save(&policy, &CheckpointMeta { fov, iteration: it }, &path)?;
                checkpoints.push(path);
            }
        }
    }

    if let Some(dir) = out_dir {
        let path = dir.join(FINAL_CHECKPOINT);
        checkpoint::save(
            &policy,
            &CheckpointMeta {
                fov,
                iteration: config.iterations,
            },
            &path,
        )?;
        checkpoints.push(path);
        let mpath = dir.join(METRICS_FILE);
        fs::write(&mpath, metrics_csv(&metrics)).map_err(|e| Error::io(&mpath, e))?;
        // what is written is what a later load sees
        checkpoint::round_to_f32(&mut policy);
    }
    Ok(TrainOutcome {
        policy,
        metrics,
        checkpoints,
    })
}
