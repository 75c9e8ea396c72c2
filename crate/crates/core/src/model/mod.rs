//! Network assembly, losses, ablation variants, the CNN baseline, and training.

mod baselines;
mod ffcdnn;
pub mod io;
mod train;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capsule::{squash, ClassCapsules};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::numerics::FftPlan;
use crate::numerics::dft::half_spectrum;
use crate::vi::{AgentPatch, Channel};

pub use baselines::{Cnn, FfcOnly, LinearBase};
pub use ffcdnn::{Ffcdnn, FfcdnnOutput};
pub use train::{
    cross_validate, evaluate, mean_loss, stratified_folds, train, Adam, CvReport, TrainHistory,
};

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StressClass {
    Healthy = 0,
    YellowRust = 1,
    NitrogenDeficiency = 2,
}

impl StressClass {
    pub const ALL: [StressClass; 3] = [
        StressClass::Healthy,
        StressClass::YellowRust,
        StressClass::NitrogenDeficiency,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        StressClass::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("class index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            StressClass::Healthy => "Healthy",
            StressClass::YellowRust => "YellowRust",
            StressClass::NitrogenDeficiency => "NitrogenDeficiency",
        }
    }
}

impl fmt::Display for StressClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StressClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(i) = s.parse::<usize>() {
            return StressClass::from_index(i);
        }
        StressClass::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown class '{s}'")))
    }
}

/// Classifier output for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: StressClass,
    /// Per-class scores in [0, 1): activated capsule lengths, or softmax
    /// probabilities for the baselines.
    pub lengths: [f64; NUM_CLASSES],
    /// Winning score minus runner-up.
    pub margin: f64,
    /// More than one class attained the maximum; the lowest index won.
    pub tie: bool,
}

impl Prediction {
    /// Argmax with lowest-index tie-breaking.
    pub fn from_scores(scores: [f64; NUM_CLASSES]) -> Self {
        let mut best = 0;
        for h in 1..NUM_CLASSES {
            if scores[h] > scores[best] {
                best = h;
            }
        }
        let runner_up = (0..NUM_CLASSES)
            .filter(|&h| h != best)
            .map(|h| scores[h])
            .fold(f64::NEG_INFINITY, f64::max);
        Prediction {
            label: StressClass::ALL[best],
            lengths: scores,
            margin: scores[best] - runner_up,
            tie: runner_up == scores[best],
        }
    }
}

/// Applies the squash activation to each class capsule and picks the longest.
pub fn classify(capsules: &ClassCapsules) -> Prediction {
    let mut scores = [0.0; NUM_CLASSES];
    for (h, s) in scores.iter_mut().enumerate().take(capsules.count()) {
        *s = crate::capsule::norm(&squash(capsules.vector(h)));
    }
    Prediction::from_scores(scores)
}

/// Margins of the capsule loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossMargins {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda_down: f64,
}

impl Default for LossMargins {
    fn default() -> Self {
        LossMargins {
            m_plus: 0.9,
            m_minus: 0.1,
            lambda_down: 0.5,
        }
    }
}

impl From<&Config> for LossMargins {
    fn from(c: &Config) -> Self {
        LossMargins {
            m_plus: c.m_plus,
            m_minus: c.m_minus,
            lambda_down: c.lambda_down,
        }
    }
}

/// Capsule margin loss and its gradient with respect to the capsule values.
pub fn margin_loss_grad(
    capsules: &ClassCapsules,
    label: usize,
    m: &LossMargins,
) -> Result<(f64, Vec<f64>)> {
    if label >= capsules.count() {
        return Err(Error::invalid(format!(
            "label {label} outside {} classes",
            capsules.count()
        )));
    }
    let dim = capsules.dim;
    let mut loss = 0.0;
    let mut grad = vec![0.0; capsules.values.len()];
    for (h, v) in capsules.values.chunks_exact(dim).enumerate() {
        let len = crate::capsule::norm(v);
        let dl = if h == label {
            let gap = (m.m_plus - len).max(0.0);
            loss += gap * gap;
            -2.0 * gap
        } else {
            let gap = (len - m.m_minus).max(0.0);
            loss += m.lambda_down * gap * gap;
            2.0 * m.lambda_down * gap
        };
        if dl != 0.0 && len > 0.0 {
            for (g, x) in grad[h * dim..(h + 1) * dim].iter_mut().zip(v) {
                *g = dl * x / len;
            }
        }
    }
    Ok((loss, grad))
}

pub fn margin_loss(capsules: &ClassCapsules, label: usize, m: &LossMargins) -> Result<f64> {
    margin_loss_grad(capsules, label, m).map(|(l, _)| l)
}

/// Softmax probabilities and cross-entropy gradient with respect to the logits.
pub(crate) fn softmax_xent(logits: &[f64; NUM_CLASSES], label: usize) -> (f64, [f64; NUM_CLASSES], [f64; NUM_CLASSES]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; NUM_CLASSES];
    let mut s = 0.0;
    for (pi, l) in p.iter_mut().zip(logits) {
        *pi = (l - m).exp();
        s += *pi;
    }
    p.iter_mut().for_each(|x| *x /= s);
    let loss = -(p[label].max(1e-300)).ln();
    let mut g = p;
    g[label] -= 1.0;
    (loss, p, g)
}

/// Which network a parameter file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Linear softmax on the raw VI series.
    Base,
    /// FFC features, then linear softmax.
    FfcOnly,
    /// The complete network.
    Full,
    /// Temporal CNN baseline.
    Cnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Base => "base",
            ModelKind::FfcOnly => "ffc",
            ModelKind::Full => "full",
            ModelKind::Cnn => "cnn",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ModelKind::Base => 0,
            ModelKind::FfcOnly => 1,
            ModelKind::Full => 2,
            ModelKind::Cnn => 3,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(ModelKind::Base),
            1 => Ok(ModelKind::FfcOnly),
            2 => Ok(ModelKind::Full),
            3 => Ok(ModelKind::Cnn),
            _ => Err(Error::ModelFormat(format!("unknown model kind code {c}"))),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(ModelKind::Base),
            "ffc" | "ffc_only" => Ok(ModelKind::FfcOnly),
            "full" | "ffcdnn" => Ok(ModelKind::Full),
            "cnn" => Ok(ModelKind::Cnn),
            other => Err(Error::invalid(format!("unknown model kind '{other}'"))),
        }
    }
}

/// A labeled patch with its half spectra precomputed, `[pixel][bin]` per channel.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub patch: AgentPatch,
    pub label: usize,
    pub spectra: [Vec<Complex64>; 2],
}

pub fn prepare_one(patch: AgentPatch, label: usize, plan: &FftPlan) -> Result<PreparedSample> {
    if plan.len() != patch.steps() {
        return Err(Error::dim(format!(
            "patch has {} steps, plan expects {}",
            patch.steps(),
            plan.len()
        )));
    }
    if label >= NUM_CLASSES {
        return Err(Error::invalid(format!("label {label} out of range")));
    }
    let spec = |ch: Channel| -> Vec<Complex64> {
        patch
            .channel(ch)
            .chunks_exact(patch.steps())
            .flat_map(|s| half_spectrum(plan, s))
            .collect()
    };
    let spectra = [spec(Channel::Lai), spec(Channel::Lcc)];
    Ok(PreparedSample {
        patch,
        label,
        spectra,
    })
}

/// Precomputes spectra for a labeled dataset; order is preserved.
pub fn prepare(samples: Vec<(AgentPatch, usize)>) -> Result<Vec<PreparedSample>> {
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let plan = FftPlan::new(first.0.steps())?;
    samples
        .into_par_iter()
        .map(|(p, l)| prepare_one(p, l, &plan))
        .collect()
}

/// Loss, mean gradient and predictions of one training-mode batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    /// Mean per-sample loss.
    pub loss: f64,
    /// Mean gradient, same layout as the parameters.
    pub grad: Vec<f64>,
    pub predictions: Vec<Prediction>,
    /// Batch statistics for any normalization running averages.
    pub norm_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Common surface of every trainable network.
pub trait Network: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Training-mode loss and gradient at `params`, which need not be the
    /// network's own (gradient checks perturb them).
    fn batch_loss_grad(&self, params: &[f64], batch: &[&PreparedSample]) -> Result<BatchResult>;

    /// Folds batch statistics into inference-time state. No-op by default.
    fn absorb_stats(&mut self, _stats: &(Vec<f64>, Vec<f64>)) {}

    fn predict(&self, sample: &PreparedSample) -> Result<Prediction>;

    /// The inference-mode vector the classifier head reads.
    fn representation(&self, sample: &PreparedSample) -> Result<Vec<f64>>;

    /// Non-trainable state persisted alongside the parameters.
    fn state(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_state(&mut self, state: &[f64]) -> Result<()> {
        if state.is_empty() {
            Ok(())
        } else {
            Err(Error::ModelFormat("unexpected state block".into()))
        }
    }
}

/// Builds an untrained network of `kind` from the config, seeded by `config.seed`.
pub fn build(kind: ModelKind, config: &Config) -> Result<Box<dyn Network>> {
    Ok(match kind {
        ModelKind::Base => Box::new(LinearBase::new(config)?),
        ModelKind::FfcOnly => Box::new(FfcOnly::new(config)?),
        ModelKind::Full => Box::new(Ffcdnn::new(config)?),
        ModelKind::Cnn => Box::new(Cnn::new(config)?),
    })
}

/// The three ablation rungs, in increasing order of machinery.
pub fn ablation_variant(kind: ModelKind, config: &Config) -> Result<Box<dyn Network>> {
    if kind == ModelKind::Cnn {
        return Err(Error::invalid("the CNN is a baseline, not an ablation rung"));
    }
    build(kind, config)
}

pub(crate) fn check_patch(patch: &AgentPatch, config_k: usize, config_k1: usize) -> Result<()> {
    if patch.k() != config_k || patch.steps() != config_k1 {
        return Err(Error::dim(format!(
            "patch is {}x{}x{}, model expects {}x{}x{}",
            patch.k(),
            patch.k(),
            patch.steps(),
            config_k,
            config_k,
            config_k1
        )));
    }
    Ok(())
}

/// Sums per-sample gradients in sample order so results do not depend on thread count.
pub(crate) fn ordered_sum(parts: Vec<Vec<f64>>, len: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps(vectors: &[&[f64]]) -> ClassCapsules {
        ClassCapsules {
            dim: vectors[0].len(),
            values: vectors.iter().flat_map(|v| v.iter().copied()).collect(),
        }
    }

    #[test]
    fn argmax_and_ties() {
        let p = Prediction::from_scores([0.9, 0.1, 0.1]);
        assert_eq!(p.label, StressClass::Healthy);
        assert!(!p.tie);
        assert!((p.margin - 0.8).abs() < 1e-15);
        let t = Prediction::from_scores([0.3, 0.3, 0.3]);
        assert_eq!(t.label, StressClass::Healthy);
        assert!(t.tie);
        let mid = Prediction::from_scores([0.1, 0.5, 0.5]);
        assert_eq!(mid.label, StressClass::YellowRust);
        assert!(mid.tie);
    }

    #[test]
    fn classify_zero_capsules_is_a_tie() {
        let p = classify(&caps(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]));
        assert!(p.tie);
        assert_eq!(p.label, StressClass::Healthy);
    }

    #[test]
    fn margin_loss_fixed_values() {
        let m = LossMargins::default();
        let c = caps(&[&[0.95, 0.0], &[0.0, 0.05], &[0.05, 0.0]]);
        assert_eq!(margin_loss(&c, 0, &m).unwrap(), 0.0);
        let z = caps(&[&[0.0], &[0.0], &[0.0]]);
        assert!((margin_loss(&z, 2, &m).unwrap() - 0.81).abs() < 1e-15);
        assert!(margin_loss(&z, 3, &m).is_err());
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("ffc".parse::<ModelKind>().unwrap(), ModelKind::FfcOnly);
        assert_eq!(ModelKind::from_code(ModelKind::Cnn.code()).unwrap(), ModelKind::Cnn);
        assert!("svm".parse::<ModelKind>().is_err());
        assert_eq!("yellowrust".parse::<StressClass>().unwrap(), StressClass::YellowRust);
        assert_eq!("2".parse::<StressClass>().unwrap(), StressClass::NitrogenDeficiency);
    }
}
