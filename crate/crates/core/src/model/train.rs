use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build, ModelKind, Network, Prediction, PreparedSample, NUM_CLASSES};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, config: &Config) -> Self {
        Adam {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Per-epoch training record. Training OA is measured on the in-epoch
/// training-mode predictions; validation OA in inference mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub train_oa: Vec<f64>,
    pub val_oa: Vec<Option<f64>>,
    /// Cumulative wall-clock seconds at the end of each epoch. Not serialized,
    /// so the history of a run is reproducible byte for byte.
    #[serde(skip)]
    pub seconds: Vec<f64>,
}

impl TrainHistory {
    pub fn total_seconds(&self) -> f64 {
        self.seconds.last().copied().unwrap_or(0.0)
    }
}

fn class_counts(samples: &[PreparedSample]) -> [usize; NUM_CLASSES] {
    let mut c = [0; NUM_CLASSES];
    for s in samples {
        c[s.label] += 1;
    }
    c
}

/// Batches of `size` in order; a trailing batch of one joins its predecessor
/// since training-mode normalization needs two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = (start + size).min(order.len());
        if order.len() - end == 1 {
            end = order.len();
        }
        out.push(&order[start..end]);
        start = end;
    }
    out
}

/// Mini-batch training with seeded per-epoch shuffling. Deterministic for a
/// given seed, data and config regardless of thread count.
pub fn train(
    net: &mut dyn Network,
    train: &[PreparedSample],
    val: Option<&[PreparedSample]>,
    config: &Config,
) -> Result<TrainHistory> {
    let counts = class_counts(train);
    if let Some(h) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Stratification(format!(
            "training split has no samples of class {}",
            super::StressClass::ALL[h].name()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00);
    let mut adam = Adam::new(net.params().len(), config);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for idx in batches(&order, config.batch_size) {
            let batch: Vec<&PreparedSample> = idx.iter().map(|&i| &train[i]).collect();
            let r = net.batch_loss_grad(net.params(), &batch)?;
            if !r.loss.is_finite() || r.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite loss or gradient in epoch {epoch}")));
            }
            loss_sum += r.loss * batch.len() as f64;
            correct += r
                .predictions
                .iter()
                .zip(&batch)
                .filter(|(p, s)| p.label.index() == s.label)
                .count();
            adam.step(net.params_mut(), &r.grad);
            if let Some(stats) = &r.norm_stats {
                net.absorb_stats(stats);
            }
        }
        history.loss.push(loss_sum / train.len() as f64);
        history.train_oa.push(correct as f64 / train.len() as f64);
        history.val_oa.push(match val {
            Some(v) if !v.is_empty() => Some(accuracy(&evaluate(&*net, v)?, v)),
            _ => None,
        });
        history.seconds.push(started.elapsed().as_secs_f64());
        log::debug!(
            "epoch {} loss {:.6} train OA {:.4}",
            epoch + 1,
            history.loss[epoch],
            history.train_oa[epoch]
        );
    }
    Ok(history)
}

/// Inference-mode predictions, in sample order.
pub fn evaluate(net: &dyn Network, samples: &[PreparedSample]) -> Result<Vec<Prediction>> {
    samples.par_iter().map(|s| net.predict(s)).collect()
}

fn accuracy(preds: &[Prediction], samples: &[PreparedSample]) -> f64 {
    let hit = preds
        .iter()
        .zip(samples)
        .filter(|(p, s)| p.label.index() == s.label)
        .count();
    hit as f64 / samples.len() as f64
}

/// Training-mode loss over `samples` taken as one batch.
pub fn mean_loss(net: &dyn Network, samples: &[PreparedSample]) -> Result<f64> {
    let batch: Vec<&PreparedSample> = samples.iter().collect();
    Ok(net.batch_loss_grad(net.params(), &batch)?.loss)
}

/// Splits indices into `folds` groups, dealing each class's shuffled indices
/// round-robin so every fold receives every class.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::invalid("cross validation needs at least 2 folds"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x666f_6c64);
    let mut out = vec![Vec::new(); folds];
    for h in 0..NUM_CLASSES {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == h).collect();
        if idx.len() < folds {
            return Err(Error::Stratification(format!(
                "class {} has {} samples, fewer than {folds} folds",
                super::StressClass::ALL[h].name(),
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            out[j % folds].push(i);
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub history: TrainHistory,
    pub val_oa: f64,
    pub matrix: ConfusionMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub kind: ModelKind,
    pub folds: Vec<FoldReport>,
    pub mean_val_oa: f64,
    /// Sum of the per-fold validation matrices.
    pub pooled: ConfusionMatrix,
}

/// Stratified k-fold cross validation of a fresh `kind` network per fold.
pub fn cross_validate(
    kind: ModelKind,
    config: &Config,
    samples: &[PreparedSample],
    folds: usize,
) -> Result<CvReport> {
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let groups = stratified_folds(&labels, folds, config.seed)?;
    let mut reports = Vec::with_capacity(folds);
    let mut pooled = ConfusionMatrix::new(NUM_CLASSES);
    for (f, val_idx) in groups.iter().enumerate() {
        let mut in_val = vec![false; samples.len()];
        val_idx.iter().for_each(|&i| in_val[i] = true);
        let tr: Vec<PreparedSample> = (0..samples.len())
            .filter(|&i| !in_val[i])
            .map(|i| samples[i].clone())
            .collect();
        let va: Vec<PreparedSample> = val_idx.iter().map(|&i| samples[i].clone()).collect();
        let mut net = build(kind, config)?;
        let history = train(net.as_mut(), &tr, Some(&va), config)?;
        let preds = evaluate(net.as_ref(), &va)?;
        let mut m = ConfusionMatrix::new(NUM_CLASSES);
        for (p, s) in preds.iter().zip(&va) {
            m.add(p.label.index(), s.label)?;
            pooled.add(p.label.index(), s.label)?;
        }
        reports.push(FoldReport {
            fold: f,
            train_size: tr.len(),
            val_size: va.len(),
            history,
            val_oa: accuracy(&preds, &va),
            matrix: m,
        });
    }
    let mean_val_oa = reports.iter().map(|r| r.val_oa).sum::<f64>() / folds as f64;
    Ok(CvReport {
        kind,
        folds: reports,
        mean_val_oa,
        pooled,
    })
}
