//! Seeded training and evaluation over in-memory datasets.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{normalize_coords, resize_sequence, SkeletonSequence};
use crate::error::{Error, Result};
use crate::graph::SkeletonLayout;
use crate::model::{DynamicGcn, Modality, ModelConfig};
use crate::optim::{sgd_step, MultiStepLr, SgdConfig};
use crate::param::{Ctx, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Optimizer, schedule and batching of a run.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct TrainSettings {
    pub sgd: SgdConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epoch numbers (1-based) from which the learning rate is multiplied by `lr_decay` once more.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub seed: u64,
    pub modality: Modality,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            sgd: SgdConfig::default(),
            batch_size: 64,
            epochs: 65,
            milestones: vec![35, 55],
            lr_decay: 0.1,
            seed: 0,
            modality: Modality::Joint,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if let Some(m) = self.milestones.iter().find(|&&m| m == 0 || m >= self.epochs) {
            return Err(Error::Config(format!("milestone {m} must lie in 1..{}", self.epochs)));
        }
        if !(self.sgd.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("lr and lr_decay must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used throughout 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        // Milestone m decays from epoch m + 1 on, i.e. after m epochs have run.
        let sched = MultiStepLr { base: self.sgd.lr, milestones: self.milestones.clone(), factor: self.lr_decay };
        sched.lr_at(epoch.saturating_sub(1))
    }
}

/// Model-ready samples: each input is `[M, C, T, N]`.
#[derive(Clone, Debug)]
pub struct PreparedSet<F> {
    pub inputs: Vec<Tensor<F>>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

impl<F: Real> PreparedSet<F> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Subset in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    /// Stacks samples into `[B·M, C, T, N]`.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<F>, Vec<usize>)> {
        let first = self.inputs.get(*idx.first().ok_or_else(|| Error::Validation("empty batch".into()))?).ok_or_else(|| Error::Validation("batch index out of range".into()))?;
        let s = first.shape();
        let mut data = Vec::with_capacity(idx.len() * first.numel());
        for &i in idx {
            let x = self.inputs.get(i).ok_or_else(|| Error::Validation("batch index out of range".into()))?;
            data.extend_from_slice(x.data());
        }
        let x = Tensor::new(&[idx.len() * s[0], s[1], s[2], s[3]], data)?;
        Ok((x, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// Pads persons, resizes to the model's frame count, centers on the first
/// frame and derives the requested stream.
pub fn prepare_sequence<F: Real>(seq: &SkeletonSequence, layout: &SkeletonLayout, cfg: &ModelConfig, modality: Modality) -> Result<Tensor<F>> {
    if seq.joints() != layout.n_joints() {
        return Err(Error::Config(format!("sample {} has {} joints, layout '{}' has {}", seq.id, seq.joints(), layout.name(), layout.n_joints())));
    }
    if seq.dims() != cfg.in_channels {
        return Err(Error::Config(format!("sample {} has {} values per joint, model takes {}", seq.id, seq.dims(), cfg.in_channels)));
    }
    let s = seq.with_persons(cfg.persons)?;
    let s = resize_sequence(&s, cfg.frames)?;
    let s = normalize_coords(&s, layout)?;
    modality.apply(&s.to_tensor::<F>(), layout)
}

pub fn prepare_set<F: Real>(seqs: &[SkeletonSequence], layout: &SkeletonLayout, cfg: &ModelConfig, modality: Modality) -> Result<PreparedSet<F>> {
    let mut set = PreparedSet { inputs: Vec::with_capacity(seqs.len()), labels: Vec::new(), ids: Vec::new() };
    for s in seqs {
        if s.label >= cfg.n_classes {
            return Err(Error::Config(format!("sample {} has label {} but the model has {} classes", s.id, s.label, cfg.n_classes)));
        }
        set.inputs.push(prepare_sequence(s, layout, cfg, modality)?);
        set.labels.push(s.label);
        set.ids.push(s.id.clone());
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_top1: Option<f64>,
    pub eval_top5: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub top1: f64,
    pub top5: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// `[S, n_classes]`.
    pub logits: Tensor<f64>,
}

/// Eval-mode logits for every sample, `[S, n_classes]`.
pub fn predict_logits<F: Real>(model: &DynamicGcn<F>, store: &mut ParamStore<F>, set: &PreparedSet<F>, batch_size: usize) -> Result<Tensor<f64>> {
    if set.is_empty() {
        return Err(Error::Validation("no samples to evaluate".into()));
    }
    let k = model.config().n_classes;
    let mut out = Vec::with_capacity(set.len() * k);
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = set.batch(chunk)?;
        let mut ctx = Ctx::new(store, false);
        let xv = ctx.tape.constant(x);
        let y = model.forward(&mut ctx, xv)?;
        out.extend(ctx.tape.value(y).data().iter().map(|v| v.as_f64()));
    }
    Tensor::new(&[set.len(), k], out)
}

/// Top-1, top-5 (top-min(5, classes)) and confusion counts from logits.
pub fn score(logits: &Tensor<f64>, labels: &[usize]) -> Result<EvalResult> {
    let [s, k] = [logits.shape()[0], logits.shape()[1]];
    if labels.len() != s {
        return Err(Error::Validation(format!("{} labels for {s} logit rows", labels.len())));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    let (mut h1, mut h5) = (0usize, 0usize);
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        if y >= k {
            return Err(Error::Validation(format!("label {y} out of range for {k} classes")));
        }
        let pred = argmax(row);
        confusion[y][pred] += 1;
        let above = row.iter().filter(|&&v| v > row[y]).count();
        h1 += usize::from(pred == y);
        h5 += usize::from(above < 5.min(k));
    }
    Ok(EvalResult { top1: h1 as f64 / s as f64, top5: h5 as f64 / s as f64, confusion, logits: logits.clone() })
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate<F: Real>(model: &DynamicGcn<F>, store: &mut ParamStore<F>, set: &PreparedSet<F>, batch_size: usize) -> Result<EvalResult> {
    let logits = predict_logits(model, store, set, batch_size)?;
    score(&logits, &set.labels)
}

/// Sample order of 1-based `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// One pass over `set` in seeded order; returns mean loss and accuracy.
pub fn train_epoch<F: Real>(
    model: &DynamicGcn<F>,
    store: &mut ParamStore<F>,
    set: &PreparedSet<F>,
    settings: &TrainSettings,
    epoch: usize,
) -> Result<(f64, f64)> {
    let order = epoch_order(set.len(), settings.seed, epoch);
    let sgd = SgdConfig { lr: settings.lr_at(epoch), ..settings.sgd };
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for chunk in order.chunks(settings.batch_size) {
        let (x, labels) = set.batch(chunk)?;
        let mut ctx = Ctx::new(store, true);
        let xv = ctx.tape.constant(x);
        let logits = model.forward(&mut ctx, xv)?;
        let loss = ctx.tape.softmax_cross_entropy(logits, &labels)?;
        let l = ctx.tape.value(loss).data()[0].as_f64();
        if !l.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {l} in epoch {epoch}")));
        }
        let k = model.config().n_classes;
        for (row, &y) in ctx.tape.value(logits).data().chunks(k).zip(&labels) {
            let row: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            correct += usize::from(argmax(&row) == y);
        }
        ctx.backward(loss)?;
        drop(ctx);
        sgd_step(store, &sgd)?;
        loss_sum += l * chunk.len() as f64;
    }
    Ok((loss_sum / set.len() as f64, correct as f64 / set.len() as f64))
}

/// Full schedule. `on_epoch` sees each record as it is produced.
pub fn train<F: Real>(
    model: &DynamicGcn<F>,
    store: &mut ParamStore<F>,
    train_set: &PreparedSet<F>,
    eval_set: Option<&PreparedSet<F>>,
    settings: &TrainSettings,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    settings.validate()?;
    if train_set.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let mut log = Vec::with_capacity(settings.epochs);
    for epoch in 1..=settings.epochs {
        let (train_loss, train_acc) = train_epoch(model, store, train_set, settings, epoch)?;
        let ev = eval_set.map(|s| evaluate(model, store, s, settings.batch_size)).transpose()?;
        let rec = EpochRecord {
            epoch,
            train_loss,
            train_acc,
            eval_top1: ev.as_ref().map(|e| e.top1),
            eval_top5: ev.as_ref().map(|e| e.top5),
            lr: settings.lr_at(epoch),
        };
        on_epoch(&rec);
        log.push(rec);
    }
    Ok(log)
}
