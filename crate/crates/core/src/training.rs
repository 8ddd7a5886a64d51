//! Joint-loss optimization: gradient clipping, Adagrad, and the training loop
//! with periodic validation and best-k checkpoint retention.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{self, Loaded, Progress};
use crate::config::ClipMode;
use crate::data::Example;
use crate::error::{Error, Result};
use crate::evaluate::evaluate;
use crate::metrics::EvalReport;
use crate::model::{Dims, LossValues};
use crate::tensor::{Float, ParamId, ParameterStore, Tape};

/// Adagrad with per-element squared-gradient accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Adagrad {
    pub lr: Float,
    pub eps: Float,
    acc: Vec<Vec<Float>>,
}

impl Adagrad {
    pub fn new(store: &ParameterStore, lr: Float, eps: Float, init: Float) -> Self {
        Adagrad {
            lr,
            eps,
            acc: store.iter().map(|(_, _, t)| vec![init; t.numel()]).collect(),
        }
    }

    pub fn accumulator(&self, id: ParamId) -> &[Float] {
        &self.acc[id.index()]
    }

    pub fn set_accumulator(&mut self, id: ParamId, values: &[Float]) -> Result<()> {
        let slot = &mut self.acc[id.index()];
        if slot.len() != values.len() {
            return Err(Error::Checkpoint(format!(
                "accumulator {} has {} values, expected {}",
                id.index(),
                values.len(),
                slot.len()
            )));
        }
        slot.copy_from_slice(values);
        Ok(())
    }

    /// `acc += g²; p −= lr · g / (√acc + eps)` for every parameter, with `grads` indexed like the store.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &[Vec<Float>]) {
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let g = &grads[id.index()];
            let acc = &mut self.acc[id.index()];
            let p = store.get_mut(id).data_mut();
            for ((p, a), g) in p.iter_mut().zip(acc.iter_mut()).zip(g) {
                *a += g * g;
                *p -= self.lr * g / (a.sqrt() + self.eps);
            }
        }
    }
}

/// Clamps every element into `[lo, hi]`.
pub fn clip_values(grads: &mut [Vec<Float>], lo: Float, hi: Float) {
    for g in grads.iter_mut().flatten() {
        *g = g.clamp(lo, hi);
    }
}

/// Rescales so the global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Vec<Float>], max_norm: Float) {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<Float>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= k);
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub l_seq: Float,
    pub l_pic: Float,
    pub l_total: Float,
    pub val_rouge_l: Option<f64>,
    pub val_map: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Checkpoints and `log.csv` go here when set.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many optimizer steps in total (across resumes).
    pub max_steps: Option<usize>,
}

pub struct Trainer {
    pub model: Dims,
    pub optimizer: Adagrad,
    pub progress: Progress,
    /// `(val ROUGE-L, step, manifest path)` of retained checkpoints, best first.
    pub best: Vec<(f64, usize, PathBuf)>,
}

pub const LAST_CHECKPOINT: &str = "last.json";

impl Trainer {
    pub fn new(model: Dims) -> Self {
        let c = &model.config;
        let optimizer = Adagrad::new(&model.store, c.lr, c.adagrad_eps, c.adagrad_init);
        Trainer {
            model,
            optimizer,
            progress: Progress::default(),
            best: Vec::new(),
        }
    }

    pub fn resume(loaded: Loaded) -> Self {
        let mut t = Trainer::new(loaded.model);
        if let Some(opt) = loaded.optimizer {
            t.optimizer = opt;
        }
        t.progress = loaded.progress;
        t
    }

    /// Mean losses and mean gradients (indexed like the store) over `batch`.
    pub fn batch_gradients(&self, batch: &[&Example]) -> Result<(LossValues, Vec<Vec<Float>>)> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let store = &self.model.store;
        let net = &self.model.net;
        let per_sample: Vec<Result<_>> = batch
            .par_iter()
            .map(|ex| {
                let mut tape = Tape::with_params(store);
                let l = net.loss(&mut tape, ex)?;
                let values = LossValues {
                    seq: tape.data(l.seq)[0],
                    pic: tape.data(l.pic)[0],
                    total: tape.data(l.total)[0],
                };
                Ok((values, tape.backward(l.total)?.into_params()))
            })
            .collect();
        let mut grads: Vec<Vec<Float>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        let mut loss = LossValues::default();
        for r in per_sample {
            let (l, g) = r?;
            loss.seq += l.seq;
            loss.pic += l.pic;
            loss.total += l.total;
            for (id, gi) in g.iter() {
                for (s, v) in grads[id.index()].iter_mut().zip(gi) {
                    *s += v;
                }
            }
        }
        let k = 1.0 / batch.len() as Float;
        grads.iter_mut().flatten().for_each(|g| *g *= k);
        loss.seq *= k;
        loss.pic *= k;
        loss.total *= k;
        Ok((loss, grads))
    }

    fn param_norms(&self) -> Vec<(String, Float)> {
        let mut norms: Vec<(String, Float)> = self
            .model
            .store
            .iter()
            .map(|(_, n, t)| (n.to_string(), t.sq_norm().sqrt()))
            .collect();
        norms.sort_by(|a, b| b.1.total_cmp(&a.1));
        norms.truncate(5);
        norms
    }

    /// One optimizer step on `batch`; returns the batch-mean losses.
    pub fn step(&mut self, batch: &[&Example]) -> Result<LossValues> {
        let (loss, mut grads) = self.batch_gradients(batch)?;
        if !loss.total.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                batch: self.progress.step,
                param_norms: self.param_norms(),
            });
        }
        let c = &self.model.config;
        match c.clip_mode {
            ClipMode::Value => clip_values(&mut grads, c.clip_lo, c.clip_hi),
            ClipMode::Norm => clip_global_norm(&mut grads, c.clip_hi),
        }
        self.optimizer.step(&mut self.model.store, &grads);
        self.progress.step += 1;
        Ok(loss)
    }

    /// Sample order for `epoch`, a pure function of the seed and epoch.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut r = ChaCha8Rng::seed_from_u64(self.model.config.seed);
        r.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        order
    }

    fn validate(&mut self, val: &[Example], out_dir: Option<&Path>) -> Result<Option<EvalReport>> {
        if val.is_empty() {
            return Ok(None);
        }
        let (report, _) = evaluate(&self.model, val, self.model.config.beam_size)?;
        if let Some(dir) = out_dir {
            self.retain(&report, dir)?;
        }
        Ok(Some(report))
    }

    /// Saves a checkpoint if it ranks among the `keep_best` by validation ROUGE-L.
    fn retain(&mut self, report: &EvalReport, dir: &Path) -> Result<()> {
        let k = self.model.config.keep_best;
        let score = report.rouge_l;
        let pos = self.best.iter().position(|(s, _, _)| score > *s).unwrap_or(self.best.len());
        if pos >= k {
            return Ok(());
        }
        let path = dir.join(format!("best-step{:08}.json", self.progress.step));
        checkpoint::save(&path, &self.model, Some(&self.optimizer), self.progress, Some(report))?;
        self.best.insert(pos, (score, self.progress.step, path));
        while self.best.len() > k {
            let (_, _, p) = self.best.pop().expect("non-empty");
            checkpoint::remove(&p)?;
        }
        Ok(())
    }

    /// Runs epochs until `config.epochs` (or `max_steps`), calling `on_record` after every step.
    pub fn train(
        &mut self,
        train: &[Example],
        val: &[Example],
        opts: &TrainOptions,
        mut on_record: impl FnMut(&StepRecord),
    ) -> Result<Vec<StepRecord>> {
        if train.is_empty() {
            return Err(Error::data("training set is empty"));
        }
        let out_dir = opts.out_dir.as_deref();
        let mut log = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("log.csv");
                let fresh = self.progress.step == 0 || !path.exists();
                let file = fs::OpenOptions::new()
                    .create(true)
                    .append(!fresh)
                    .write(true)
                    .truncate(fresh)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some((csv::WriterBuilder::new().has_headers(fresh).from_writer(file), path))
            }
            None => None,
        };
        let b = self.model.config.batch_size;
        let per_epoch = train.len().div_ceil(b);
        let every = self.model.config.validate_every;
        let mut records = Vec::new();
        'epochs: while self.progress.epoch < self.model.config.epochs {
            let epoch = self.progress.epoch;
            let order = self.epoch_order(train.len(), epoch);
            let first = self.progress.step.saturating_sub(epoch * per_epoch).min(per_epoch);
            for chunk in order.chunks(b).skip(first) {
                if opts.max_steps.is_some_and(|m| self.progress.step >= m) {
                    break 'epochs;
                }
                let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
                let loss = self.step(&batch)?;
                let last_of_epoch = self.progress.step == (epoch + 1) * per_epoch;
                let due = if every == 0 { last_of_epoch } else { self.progress.step % every == 0 };
                if last_of_epoch {
                    self.progress.epoch += 1;
                }
                let report = if due { self.validate(val, out_dir)? } else { None };
                let rec = StepRecord {
                    step: self.progress.step,
                    epoch,
                    l_seq: loss.seq,
                    l_pic: loss.pic,
                    l_total: loss.total,
                    val_rouge_l: report.as_ref().map(|r| r.rouge_l),
                    val_map: report.as_ref().map(|r| r.map),
                };
                if let Some((w, path)) = log.as_mut() {
                    w.serialize(&rec).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
                    w.flush().map_err(|e| Error::io(path.as_path(), e))?;
                }
                on_record(&rec);
                records.push(rec);
            }
            if let Some(dir) = out_dir {
                checkpoint::save(&dir.join(LAST_CHECKPOINT), &self.model, Some(&self.optimizer), self.progress, None)?;
            }
        }
        if let Some(dir) = out_dir {
            checkpoint::save(&dir.join(LAST_CHECKPOINT), &self.model, Some(&self.optimizer), self.progress, None)?;
        }
        Ok(records)
    }
}
