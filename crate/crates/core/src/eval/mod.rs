//! Accuracy metrics, discriminant projection, severity R², and timing.

mod cda;
mod metrics;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cda::{cda_project, CdaProjection};
pub use metrics::{confusion_metrics, ConfusionMatrix, MetricReport};

/// R² of a univariate least-squares fit of severity on each component,
/// clamped to [0, 1]. `features` is `[sample][component]`.
pub fn r2_by_component(features: &[Vec<f64>], severity: &[f64]) -> Result<Vec<f64>> {
    if features.len() != severity.len() {
        return Err(Error::dim("features and severity differ in length"));
    }
    if features.len() < 3 {
        return Err(Error::InsufficientData("R² needs at least 3 samples".into()));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::dim("feature vectors must share a length"));
    }
    let n = severity.len() as f64;
    let ys = severity.iter().sum::<f64>() / n;
    let syy: f64 = severity.iter().map(|y| (y - ys) * (y - ys)).sum();
    if syy <= 0.0 {
        return Err(Error::DegenerateDenominator("severity has zero variance".into()));
    }
    Ok((0..d)
        .map(|j| {
            let xs = features.iter().map(|f| f[j]).sum::<f64>() / n;
            let (mut sxx, mut sxy) = (0.0, 0.0);
            for (f, y) in features.iter().zip(severity) {
                let dx = f[j] - xs;
                sxx += dx * dx;
                sxy += dx * (y - ys);
            }
            if sxx <= 0.0 {
                return 0.0;
            }
            let ss_res = syy - sxy * sxy / sxx;
            (1.0 - ss_res / syy).clamp(0.0, 1.0)
        })
        .collect())
}

/// Wall-clock duration of one task, optionally relative to a reference task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub task: String,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reference: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ratio: Option<f64>,
}

impl Timing {
    pub fn relative_to(mut self, reference: &Timing) -> Self {
        self.reference = Some(reference.task.clone());
        self.ratio = (reference.seconds > 0.0).then(|| self.seconds / reference.seconds);
        self
    }
}

/// Runs `f` once and measures it with a monotonic clock.
pub fn time_run<T>(task: &str, f: impl FnOnce() -> T) -> (T, Timing) {
    let start = Instant::now();
    let out = f();
    let t = Timing {
        task: task.to_string(),
        seconds: start.elapsed().as_secs_f64(),
        reference: None,
        ratio: None,
    };
    (out, t)
}
