//! Direct versus frequency-domain circular convolution timings.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::dft::{circular_convolve_direct, circular_convolve_fft};
use crate::numerics::FftPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    /// Median seconds per convolution.
    pub direct_s: f64,
    pub fft_s: f64,
    /// Coefficient of variation over the repetitions.
    pub direct_cv: f64,
    pub fft_cv: f64,
}

impl BenchRow {
    pub fn speedup(&self) -> f64 {
        self.direct_s / self.fft_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Smallest measured N from which the FFT route wins at every larger N.
    pub crossover: Option<usize>,
}

/// Median and coefficient of variation of per-call seconds. Each repetition
/// loops enough calls to run for at least `min_s`.
fn measure(reps: usize, min_s: f64, mut f: impl FnMut()) -> (f64, f64) {
    let start = Instant::now();
    f();
    let once = start.elapsed().as_secs_f64().max(1e-9);
    let calls = ((min_s / once).ceil() as usize).max(1);
    let mut samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..calls {
                f();
            }
            t.elapsed().as_secs_f64() / calls as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let median = samples[samples.len() / 2];
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / samples.len() as f64;
    (median, if mean > 0.0 { var.sqrt() / mean } else { 0.0 })
}

/// Times both convolution routes with full-length kernels at each size.
pub fn run(sizes: &[usize], reps: usize, seed: u64) -> Result<BenchReport> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::invalid("bench sizes must be positive"));
    }
    if reps == 0 {
        return Err(Error::invalid("bench needs at least one repetition"));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(sorted.len());
    for &n in &sorted {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let plan = FftPlan::new(n)?;
        let (direct_s, direct_cv) = measure(reps, 0.01, || {
            black_box(circular_convolve_direct(black_box(&a), black_box(&b)));
        });
        let (fft_s, fft_cv) = measure(reps, 0.01, || {
            black_box(circular_convolve_fft(&plan, black_box(&a), black_box(&b)));
        });
        log::info!("N={n}: direct {direct_s:.3e}s fft {fft_s:.3e}s");
        rows.push(BenchRow {
            n,
            direct_s,
            fft_s,
            direct_cv,
            fft_cv,
        });
    }
    let crossover = rows
        .iter()
        .rposition(|r| r.fft_s >= r.direct_s)
        .map_or(Some(0), |i| Some(i + 1))
        .and_then(|i| rows.get(i))
        .map(|r| r.n);
    Ok(BenchReport { rows, crossover })
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,direct_s,fft_s,speedup,direct_cv,fft_cv\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6e},{:.6e},{:.4},{:.4},{:.4}",
                r.n,
                r.direct_s,
                r.fft_s,
                r.speedup(),
                r.direct_cv,
                r.fft_cv
            );
        }
        s
    }
}
