//! Mini-batch SGD on clip datasets, with top-k evaluation and best-checkpoint tracking.
//!
//! Each step runs the whole batch through one tape with batch-statistics
//! normalization. Worker threads only parallelize evaluation, which is per clip, so
//! a run is bit-identical for any thread count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autograd::{BatchStats, CrossEntropy, Gradients, Objective, Tape};
use crate::data::ClipRecord;
use crate::error::{Error, Result};
use crate::network::checkpoint::write_checkpoint;
use crate::network::model::Model;
use crate::network::spec::NetSpec;
use crate::nn::update_running_stats;
use crate::params::ParamStore;
use crate::tensor::{Real, VideoTensor};

pub const METRICS_FILE: &str = "metrics.tsv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: Real,
    pub momentum: Real,
    pub weight_decay: Real,
    /// Completed-epoch counts after which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: Real,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            epochs: 30,
            batch_size: 16,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            milestones: vec![20, 25],
            lr_decay: 0.1,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1) and weight decay non-negative".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> Real {
        let passed = self.milestones.iter().filter(|&&m| epoch > m).count();
        self.lr * self.lr_decay.powi(passed as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: Real,
    pub train_top1: Real,
    pub val_top1: Real,
    pub val_top5: Real,
}

impl EpochMetrics {
    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.4}\t{:.4}\t{:.4}",
            self.epoch, self.train_loss, self.train_top1, self.val_top1, self.val_top5
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub top1: Real,
    pub top5: Real,
    pub count: usize,
}

pub struct TrainOutcome {
    pub model: Model,
    /// Parameters of the best epoch by validation top-1 (the earliest on ties).
    pub best: ParamStore,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

/// Position of `label` when classes are ranked by descending logit, ties going to
/// the lower class index.
pub fn label_rank(logits: &[Real], label: usize) -> usize {
    let v = logits[label];
    logits
        .iter()
        .enumerate()
        .filter(|&(i, &x)| x > v || (x == v && i < label))
        .count()
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn check_clips(spec: &NetSpec, clips: &[ClipRecord]) -> Result<()> {
    for c in clips {
        if c.label >= spec.num_classes {
            return Err(Error::Config(format!(
                "clip label {} but {} has {} classes",
                c.label, spec.name, spec.num_classes
            )));
        }
    }
    Ok(())
}

/// Top-1 and top-5 accuracy of `model` over `clips`.
pub fn evaluate(model: &Model, store: &ParamStore, clips: &[ClipRecord], threads: usize) -> Result<Accuracy> {
    check_clips(&model.spec, clips)?;
    let ranks = pool(threads)?.install(|| {
        clips
            .par_iter()
            .map(|c| Ok(label_rank(&model.logits(store, &c.frames)?[0], c.label)))
            .collect::<Result<Vec<_>>>()
    })?;
    let n = clips.len().max(1) as Real;
    Ok(Accuracy {
        top1: ranks.iter().filter(|&&r| r < 1).count() as Real / n,
        top5: ranks.iter().filter(|&&r| r < 5).count() as Real / n,
        count: clips.len(),
    })
}

struct BatchStep {
    loss: Real,
    correct: usize,
    grads: Gradients,
    stats: Vec<BatchStats>,
}

fn batch_step(model: &Model, store: &ParamStore, clips: &[&ClipRecord]) -> Result<BatchStep> {
    let frames: Vec<&VideoTensor> = clips.iter().map(|c| &c.frames).collect();
    let labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
    let mut tape = Tape::new(store);
    tape.set_training(true);
    let x = tape.input(VideoTensor::stack_batch(&frames)?)?;
    let out = model.forward(&mut tape, x)?;
    let k = model.spec.num_classes;
    let correct = tape
        .value(out)
        .data()
        .chunks_exact(k)
        .zip(&labels)
        .filter(|(row, &l)| label_rank(row, l) == 0)
        .count();
    let (loss, seed) = CrossEntropy { labels }.eval(tape.value(out))?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    let grads = tape.backward(out, &seed)?;
    Ok(BatchStep {
        loss,
        correct,
        grads,
        stats: tape.batch_stats().to_vec(),
    })
}

/// Train `spec` from a fresh initialization seeded by `cfg.seed`.
///
/// With `out_dir`, writes one `metrics.tsv` line per epoch and `best.ckpt`
/// whenever validation top-1 strictly improves.
pub fn train(spec: &NetSpec, train_clips: &[ClipRecord], val_clips: &[ClipRecord], cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_clips.is_empty() {
        return Err(Error::Config("no training clips".into()));
    }
    check_clips(spec, train_clips)?;
    check_clips(spec, val_clips)?;
    let mut store = ParamStore::new();
    let model = Model::new(spec, &mut store, cfg.seed)?;
    let mut velocity = store.zeros_like();
    let mut best = store.clone();
    let mut best_top1 = Real::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut metrics = Vec::new();
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join(METRICS_FILE))?))
        }
        None => None,
    };
    let mut order: Vec<usize> = (0..train_clips.len()).collect();
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let clips: Vec<&ClipRecord> = batch.iter().map(|&i| &train_clips[i]).collect();
            let b = batch_step(&model, &store, &clips).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("step {step} (epoch {epoch}): {m}")),
                other => other,
            })?;
            loss_sum += b.loss * batch.len() as Real;
            correct += b.correct;
            for id in store.ids().collect::<Vec<_>>() {
                if !store.get(id).trainable {
                    continue;
                }
                let v = &mut velocity[id.index()];
                let w = store.value_mut(id);
                for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(&b.grads.params[id.index()]) {
                    *vi = cfg.momentum * *vi + gi + cfg.weight_decay * *wi;
                    *wi -= lr * *vi;
                }
                if w.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "step {step} (epoch {epoch}): parameter {} became non-finite",
                        store.get(id).name
                    )));
                }
            }
            update_running_stats(&mut store, &b.stats);
        }
        let val = evaluate(&model, &store, val_clips, cfg.threads)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_clips.len() as Real,
            train_top1: correct as Real / train_clips.len() as Real,
            val_top1: val.top1,
            val_top5: val.top5,
        };
        if let Some(w) = &mut log {
            writeln!(w, "{}", m.tsv_line())?;
            w.flush()?;
        }
        if m.val_top1 > best_top1 {
            best_top1 = m.val_top1;
            best_epoch = epoch;
            best = store.clone();
            if let Some(dir) = out_dir {
                write_checkpoint(&dir.join(BEST_CHECKPOINT), spec.hash(), &best)?;
            }
        }
        metrics.push(m);
    }
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        metrics,
    })
}
