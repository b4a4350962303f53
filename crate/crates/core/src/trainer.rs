//! Optimization loop: Adam with linear warmup/decay, the bilingual exposure
//! schedule for both conditions, a checkpoint schedule dense after the
//! language switch, and per-language mean-surprisal evaluation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PackedSequence, SpecialIds};
use crate::model::{
    backward, forward, loss, save_checkpoint, ForwardMode, ModelConfig, ModelError,
    TransformerParams,
};
use crate::report;
use crate::rng::{derive_seed, seeded_rng};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config ({field}): {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("{language} sequence pool is empty but the schedule draws from it")]
    EmptyPool { language: String },

    #[error("sequence of length {got} cannot be batched (expected {expected})")]
    BadSequenceLength { got: usize, expected: usize },

    #[error("non-finite gradient in {tensor} at update {step}")]
    NonFiniteGradient { tensor: String, step: u64 },

    #[error("non-finite training loss ({loss}) at step {step}")]
    NonFiniteLoss { loss: f64, step: u64 },

    #[error("empty evaluation set")]
    EmptyEvalSet,

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Bilingual exposure regime: `simultaneous` mixes L2 into every batch after
/// the switch, `sequential` replaces L1 entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Simultaneous,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSeeds {
    pub data: u64,
    pub dropout: u64,
    pub init: u64,
}

impl Default for TrainSeeds {
    fn default() -> Self {
        TrainSeeds { data: 1, dropout: 2, init: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// Step at which L2 data is introduced.
    pub switch_step: u64,
    pub condition: Condition,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub checkpoint_steps: Vec<u64>,
    pub seeds: TrainSeeds,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: the reference schedule shrunk 100x, with a batch
    /// small enough to train in minutes.
    fn default() -> Self {
        TrainConfig {
            total_steps: 1280,
            switch_step: 640,
            condition: Condition::Simultaneous,
            batch_size: 16,
            lr_peak: 1e-3,
            warmup_steps: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-6,
            checkpoint_steps: checkpoint_steps(1280, 640, 0.01),
            seeds: TrainSeeds::default(),
        }
    }
}

impl TrainConfig {
    /// The full-scale training recipe.
    pub fn reference_scale() -> Self {
        TrainConfig {
            total_steps: 128_000,
            switch_step: 64_000,
            condition: Condition::Simultaneous,
            batch_size: 128,
            lr_peak: 1e-4,
            warmup_steps: 10_000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-6,
            checkpoint_steps: checkpoint_steps(128_000, 64_000, 1.0),
            seeds: TrainSeeds::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |field: &str, reason: String| {
            Err(TrainError::InvalidConfig { field: field.to_string(), reason })
        };
        if self.switch_step == 0 || self.switch_step >= self.total_steps {
            return err(
                "switch_step",
                format!("must satisfy 0 < switch ({}) < total ({})", self.switch_step, self.total_steps),
            );
        }
        if self.warmup_steps >= self.total_steps {
            return err(
                "warmup_steps",
                format!("warmup ({}) must be below total ({})", self.warmup_steps, self.total_steps),
            );
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be positive".to_string());
        }
        if self.condition == Condition::Simultaneous && self.batch_size % 2 != 0 {
            return err(
                "batch_size",
                format!("simultaneous condition alternates languages within a batch; {} is odd", self.batch_size),
            );
        }
        if !(self.lr_peak > 0.0) || !self.lr_peak.is_finite() {
            return err("lr_peak", format!("must be positive and finite, got {}", self.lr_peak));
        }
        for (field, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return err(field, format!("must lie in [0, 1), got {beta}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return err("adam_eps", format!("must be positive, got {}", self.adam_eps));
        }
        if self.checkpoint_steps.windows(2).any(|w| w[0] >= w[1]) {
            return err("checkpoint_steps", "must be strictly increasing".to_string());
        }
        if self.checkpoint_steps.last().is_some_and(|&s| s > self.total_steps) {
            return err(
                "checkpoint_steps",
                format!("last entry exceeds total_steps ({})", self.total_steps),
            );
        }
        Ok(())
    }
}

/// Which language each batch slot draws from at a given step. Before the
/// switch every slot is L1; after it the sequential condition is all L2 and
/// the simultaneous condition alternates L1/L2 across slots.
#[derive(Debug, Clone, Copy)]
pub struct ExposureSchedule {
    pub condition: Condition,
    pub switch_step: u64,
}

impl ExposureSchedule {
    pub fn slot_is_l1(&self, step: u64, slot: usize) -> bool {
        if step < self.switch_step {
            return true;
        }
        match self.condition {
            Condition::Sequential => false,
            Condition::Simultaneous => slot % 2 == 0,
        }
    }

    pub fn l1_fraction(&self, step: u64, batch_size: usize) -> f64 {
        let n = (0..batch_size).filter(|&s| self.slot_is_l1(step, s)).count();
        n as f64 / batch_size as f64
    }
}

/// Linear ramp 0 -> lr_peak over warmup_steps, then linear decay back to 0
/// at total_steps.
pub fn lr_at(step: u64, config: &TrainConfig) -> f64 {
    debug_assert!(step <= config.total_steps);
    if step <= config.warmup_steps {
        if config.warmup_steps == 0 {
            return config.lr_peak;
        }
        config.lr_peak * step as f64 / config.warmup_steps as f64
    } else {
        let rest = (config.total_steps - config.warmup_steps) as f64;
        config.lr_peak * (config.total_steps - step) as f64 / rest
    }
}

/// The checkpoint schedule: the full-scale recipe saves every 10k steps up
/// to the switch, every 10 steps for the 200 steps after it, widening to
/// every 100, every 1000, and back to every 10k until the end. `scale`
/// multiplies every interval, so toy runs keep the dense-after-switch shape;
/// scaled steps are rounded to the nearest integer, deduplicated, and
/// clamped to [0, total_steps].
pub fn checkpoint_steps(total_steps: u64, switch_step: u64, scale: f64) -> Vec<u64> {
    let coarse = 10_000.0 * scale;
    let fine = 10.0 * scale;
    let mid = 100.0 * scale;
    let late = 1_000.0 * scale;
    let sw = switch_step as f64;
    let total = total_steps as f64;

    let mut raw: Vec<f64> = vec![0.0];
    let mut s = coarse;
    while s < sw {
        raw.push(s);
        s += coarse;
    }
    raw.push(sw);
    for k in 1..=20 {
        raw.push(sw + k as f64 * fine);
    }
    for k in 3..=10 {
        raw.push(sw + k as f64 * mid);
    }
    for k in 2..=6 {
        raw.push(sw + k as f64 * late);
    }
    let dense_end = sw + 6.0 * late;
    let mut g = (dense_end / coarse).ceil() * coarse;
    while g < total {
        raw.push(g);
        g += coarse;
    }
    raw.push(total);

    let mut steps: Vec<u64> = raw
        .into_iter()
        .map(|x| (x.round().max(0.0) as u64).min(total_steps))
        .collect();
    steps.sort_unstable();
    steps.dedup();
    steps
}

/// First and second moment accumulators, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    pub m: TransformerParams<S>,
    pub v: TransformerParams<S>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &TransformerParams<S>) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One Adam update, no weight decay:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   p <- p - lr * sqrt(1-b2^t)/(1-b1^t) * m / (sqrt(v) + eps)
/// Moment math and bias correction run in f64 whatever the parameter scalar.
pub fn adam_step<S: Scalar>(
    params: &mut TransformerParams<S>,
    grads: &TransformerParams<S>,
    state: &mut AdamState<S>,
    lr: f64,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    let attempted = state.step + 1;
    for (name, g) in grads.named_tensors() {
        if g.iter().any(|&x| !x.to_f64().is_finite()) {
            return Err(TrainError::NonFiniteGradient { tensor: name, step: attempted });
        }
    }
    state.step = attempted;
    let b1 = config.adam_beta1;
    let b2 = config.adam_beta2;
    let eps = config.adam_eps;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let step_size = lr * bc2.sqrt() / bc1;

    let ps = params.named_tensors_mut();
    let gs = grads.named_tensors();
    let ms = state.m.named_tensors_mut();
    let vs = state.v.named_tensors_mut();
    for (((pn, p), (gn, g)), ((_, m), (_, v))) in
        ps.into_iter().zip(gs).zip(ms.into_iter().zip(vs))
    {
        debug_assert_eq!(pn, gn);
        debug_assert_eq!(p.dim(), g.dim());
        let p = p.as_slice_mut().expect("standard layout");
        let g = g.as_slice().expect("standard layout");
        let m = m.as_slice_mut().expect("standard layout");
        let v = v.as_slice_mut().expect("standard layout");
        for i in 0..p.len() {
            let gi = g[i].to_f64();
            let mi = b1 * m[i].to_f64() + (1.0 - b1) * gi;
            let vi = b2 * v[i].to_f64() + (1.0 - b2) * gi * gi;
            m[i] = S::from_f64(mi);
            v[i] = S::from_f64(vi);
            p[i] = S::from_f64(p[i].to_f64() - step_size * mi / (vi.sqrt() + eps));
        }
    }
    Ok(())
}

/// A shuffled index view over a sequence pool. Exhaustion wraps around with
/// a reshuffle under a freshly derived seed.
struct SeqPool<'a> {
    seqs: &'a [PackedSequence],
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
    label: &'static str,
}

impl<'a> SeqPool<'a> {
    fn new(seqs: &'a [PackedSequence], seed: u64, label: &'static str) -> Self {
        let mut pool =
            SeqPool { seqs, order: (0..seqs.len()).collect(), cursor: 0, epoch: 0, seed, label };
        pool.shuffle();
        pool
    }

    fn shuffle(&mut self) {
        let mut rng =
            seeded_rng(derive_seed(self.seed, &format!("{}.epoch{}", self.label, self.epoch)));
        self.order.shuffle(&mut rng);
    }

    fn next(&mut self) -> &'a PackedSequence {
        if self.cursor == self.order.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.shuffle();
        }
        let seq = &self.seqs[self.order[self.cursor]];
        self.cursor += 1;
        seq
    }
}

/// One metrics log line; `step` is the index of the batch the update
/// consumed, `train_loss` is measured before the update.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub l1_frac: f64,
}

#[derive(Debug)]
pub struct TrainOutcome<S: Scalar> {
    pub params: TransformerParams<S>,
    pub metrics: Vec<MetricsRow>,
    pub checkpoint_paths: Vec<(u64, PathBuf)>,
}

pub fn checkpoint_filename(step: u64) -> String {
    format!("step_{step:07}.ckpt")
}

/// sha256 over the serialized run configuration, stamped on emitted tables.
pub fn config_digest(model_config: &ModelConfig, train_config: &TrainConfig) -> String {
    #[derive(Serialize)]
    struct Run<'a> {
        model: &'a ModelConfig,
        train: &'a TrainConfig,
    }
    let text = toml::to_string(&Run { model: model_config, train: train_config })
        .expect("config serializes");
    report::sha256_hex(text.as_bytes())
}

fn batch_views(seq: &PackedSequence, bos: u32) -> (Vec<u32>, Vec<u32>) {
    let w = &seq.token_ids;
    let mut input = Vec::with_capacity(w.len());
    input.push(bos);
    input.extend_from_slice(&w[..w.len() - 1]);
    (input, w.clone())
}

/// Trains a fresh model. The checkpoint saved at step s holds the parameters
/// after exactly s updates, so step 0 is the random initialization and the
/// switch-step checkpoint has seen only L1 batches. Writes checkpoints under
/// `out_dir/checkpoints/` and the metrics log to `out_dir/train_metrics.csv`.
pub fn train<S: Scalar>(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    l1_sequences: &[PackedSequence],
    l2_sequences: &[PackedSequence],
    out_dir: &Path,
) -> Result<TrainOutcome<S>, TrainError> {
    model_config.validate()?;
    train_config.validate()?;
    if l1_sequences.is_empty() {
        return Err(TrainError::EmptyPool { language: "L1".to_string() });
    }
    if l2_sequences.is_empty() {
        return Err(TrainError::EmptyPool { language: "L2".to_string() });
    }
    let expected_len = l1_sequences[0].token_ids.len();
    if expected_len == 0 || expected_len > model_config.max_seq_len {
        return Err(TrainError::BadSequenceLength {
            got: expected_len,
            expected: model_config.max_seq_len,
        });
    }
    for seq in l1_sequences.iter().chain(l2_sequences) {
        if seq.token_ids.len() != expected_len {
            return Err(TrainError::BadSequenceLength {
                got: seq.token_ids.len(),
                expected: expected_len,
            });
        }
    }

    let seeds = train_config.seeds;
    let schedule = ExposureSchedule {
        condition: train_config.condition,
        switch_step: train_config.switch_step,
    };
    let bos = SpecialIds::standard().bos;
    let mut l1_pool = SeqPool::new(l1_sequences, seeds.data, "pool.l1");
    let mut l2_pool = SeqPool::new(l2_sequences, seeds.data, "pool.l2");

    let ckpt_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let scheduled: BTreeSet<u64> = train_config.checkpoint_steps.iter().copied().collect();
    let mut checkpoint_paths: Vec<(u64, PathBuf)> = Vec::with_capacity(scheduled.len());

    let mut params = TransformerParams::<S>::init(model_config, seeds.init);
    let mut adam = AdamState::new(&params);
    let mut metrics: Vec<MetricsRow> = Vec::with_capacity(train_config.total_steps as usize);

    let save = |params: &TransformerParams<S>, step: u64, paths: &mut Vec<(u64, PathBuf)>| {
        let path = ckpt_dir.join(checkpoint_filename(step));
        save_checkpoint(params, model_config, &path)?;
        paths.push((step, path));
        Ok::<(), TrainError>(())
    };

    for step in 0..train_config.total_steps {
        if scheduled.contains(&step) {
            save(&params, step, &mut checkpoint_paths)?;
        }
        let mut batch = Vec::with_capacity(train_config.batch_size);
        let mut targets = Vec::with_capacity(train_config.batch_size);
        for slot in 0..train_config.batch_size {
            let seq = if schedule.slot_is_l1(step, slot) {
                l1_pool.next()
            } else {
                l2_pool.next()
            };
            let (input, target) = batch_views(seq, bos);
            batch.push(input);
            targets.push(target);
        }
        let mode =
            ForwardMode::Train { dropout_seed: derive_seed(seeds.dropout, &format!("step.{step}")) };
        let (train_loss, grads) = backward(&params, model_config, &batch, &targets, mode)?;
        if !train_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { loss: train_loss, step });
        }
        let lr = lr_at(step, train_config);
        adam_step(&mut params, &grads, &mut adam, lr, train_config)?;
        metrics.push(MetricsRow {
            step,
            lr,
            train_loss,
            l1_frac: schedule.l1_fraction(step, train_config.batch_size),
        });
    }
    if scheduled.contains(&train_config.total_steps) {
        save(&params, train_config.total_steps, &mut checkpoint_paths)?;
    }

    let digest = config_digest(model_config, train_config);
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                report::fmt_float(r.lr),
                report::fmt_float(r.train_loss),
                report::fmt_float(r.l1_frac),
            ]
        })
        .collect();
    report::write_csv(
        &out_dir.join("train_metrics.csv"),
        &digest,
        &["step", "lr", "train_loss", "l1_frac"],
        &rows,
    )?;

    Ok(TrainOutcome { params, metrics, checkpoint_paths })
}

/// Mean next-token surprisal (nats/token) over a packed eval set, eval mode,
/// with the same shifted-input convention as training.
pub fn eval_mean_surprisal<S: Scalar>(
    params: &TransformerParams<S>,
    config: &ModelConfig,
    eval_set: &[PackedSequence],
) -> Result<f64, TrainError> {
    if eval_set.is_empty() {
        return Err(TrainError::EmptyEvalSet);
    }
    let bos = SpecialIds::standard().bos;
    let mut nats = 0.0f64;
    let mut tokens = 0usize;
    for chunk in eval_set.chunks(64) {
        let mut batch = Vec::with_capacity(chunk.len());
        let mut targets = Vec::with_capacity(chunk.len());
        for seq in chunk {
            let (input, target) = batch_views(seq, bos);
            batch.push(input);
            targets.push(target);
        }
        let t = chunk[0].token_ids.len();
        let logits = forward(params, config, &batch, ForwardMode::Eval)?;
        let mean = loss(&logits, &targets, t, config.vocab_size)?;
        nats += mean * (chunk.len() * t) as f64;
        tokens += chunk.len() * t;
    }
    Ok(nats / tokens as f64)
}
