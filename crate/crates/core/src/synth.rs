//! Synthetic labeled patches with band-limited stress signatures.
//!
//! A sample is a double-logistic season (LAI proxy, with a scaled copy for
//! the LCC proxy), a slow background drift in bins 0 and 1, class-band
//! sinusoids whose amplitude grows with severity, and white noise. Stress
//! and phenology are shared across the patch with per-pixel jitter.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::StressClass;
use crate::vi::{AgentPatch, Channel};

/// Frequency bands carrying one class's stress signal, per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSignature {
    pub class: StressClass,
    pub lai: Option<(usize, usize)>,
    pub lcc: Option<(usize, usize)>,
    pub gain_lai: f64,
    pub gain_lcc: f64,
}

impl ClassSignature {
    pub fn of(class: StressClass, config: &Config) -> Self {
        let (lai, lcc, gain_lai, gain_lcc) = match class {
            StressClass::Healthy => (None, None, 0.0, 0.0),
            StressClass::YellowRust => (
                Some(config.yr_bands_lai),
                Some(config.yr_bands_lcc),
                config.yr_gain_lai,
                config.yr_gain_lcc,
            ),
            StressClass::NitrogenDeficiency => (
                Some(config.nd_bands_lai),
                Some(config.nd_bands_lcc),
                config.nd_gain_lai,
                config.nd_gain_lcc,
            ),
        };
        ClassSignature {
            class,
            lai,
            lcc,
            gain_lai,
            gain_lcc,
        }
    }

    pub fn band(&self, ch: Channel) -> Option<(usize, usize)> {
        match ch {
            Channel::Lai => self.lai,
            Channel::Lcc => self.lcc,
        }
    }

    pub fn gain(&self, ch: Channel) -> f64 {
        match ch {
            Channel::Lai => self.gain_lai,
            Channel::Lcc => self.gain_lcc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub patch: AgentPatch,
    pub label: StressClass,
    /// 0 to 100; disease index for yellow rust, fertilizer deficit for nitrogen.
    pub severity: f64,
}

/// Disease-index labeling: below 20 is healthy.
pub fn label_di(di: f64) -> Result<StressClass> {
    if !(0.0..=100.0).contains(&di) {
        return Err(Error::invalid(format!("disease index {di} outside [0, 100]")));
    }
    Ok(if di < 20.0 {
        StressClass::Healthy
    } else {
        StressClass::YellowRust
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FertilizerMode {
    /// Plot experiment: 200 kg/ha and above is healthy.
    Controlled,
    /// Farm survey: below 150 kg/ha is deficient.
    Survey,
}

pub fn label_fertilizer(rate_kg_ha: f64, mode: FertilizerMode) -> Result<StressClass> {
    if rate_kg_ha.is_nan() || rate_kg_ha < 0.0 {
        return Err(Error::invalid(format!("fertilizer rate {rate_kg_ha} must be non-negative")));
    }
    let deficient = match mode {
        FertilizerMode::Controlled => rate_kg_ha < 200.0,
        FertilizerMode::Survey => rate_kg_ha < 150.0,
    };
    Ok(if deficient {
        StressClass::NitrogenDeficiency
    } else {
        StressClass::Healthy
    })
}

/// Per-class counts for `n` samples by largest remainder; ties go to the lower class.
pub fn class_counts(n: usize, mix: &[f64; 3]) -> Result<[usize; 3]> {
    if mix.iter().any(|p| !p.is_finite() || *p < 0.0) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("class mix {mix:?} must be non-negative and sum to 1")));
    }
    let exact: Vec<f64> = mix.iter().map(|p| p * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = n - counts.iter().sum::<usize>();
    for &h in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if mix[h] > 0.0 {
            counts[h] += 1;
            left -= 1;
        }
    }
    Ok(counts)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One sample of the given class and severity. Severity 0 adds no stress
/// signal whatever the class.
pub fn synth_patch<R: Rng + ?Sized>(
    config: &Config,
    class: StressClass,
    severity: f64,
    rng: &mut R,
) -> Result<AgentPatch> {
    if !(0.0..=100.0).contains(&severity) {
        return Err(Error::invalid(format!("severity {severity} outside [0, 100]")));
    }
    let n = config.k1;
    let days = config.day_grid().days();
    let sig = ClassSignature::of(class, config);
    let noise = Normal::new(0.0, config.noise_sigma_vi.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let unit = Normal::<f64>::new(0.0, 1.0).expect("unit normal");

    // Season shared by the patch.
    let sos = rng.gen_range(80.0..110.0);
    let eos = rng.gen_range(230.0..270.0);
    let r_up = rng.gen_range(8.0..14.0);
    let r_down = rng.gen_range(8.0..14.0);
    let vmin = rng.gen_range(0.05..0.15);
    let vmax = rng.gen_range(0.45..0.75);
    let lcc_scale = rng.gen_range(0.7..0.9);
    let drift_dc = config.drift_amplitude_vi * rng.gen_range(-1.0..1.0);
    let drift_amp = config.drift_amplitude_vi * rng.gen::<f64>();
    let drift_phase = rng.gen_range(0.0..2.0 * PI);

    // Stress sinusoids: one random phase per bin and channel.
    let a = severity / 100.0;
    let mut tones: Vec<(Channel, usize, f64, f64)> = Vec::new();
    for ch in [Channel::Lai, Channel::Lcc] {
        if let Some((lo, hi)) = sig.band(ch) {
            if hi > n / 2 || lo == 0 {
                return Err(Error::Config(format!("stress band {lo}-{hi} outside 1..{}", n / 2)));
            }
            for j in lo..=hi {
                tones.push((ch, j, a * sig.gain(ch), rng.gen_range(0.0..2.0 * PI)));
            }
        }
    }

    let k = config.k;
    let mut patch = AgentPatch::zeros(k, n)?;
    for row in 0..k {
        for col in 0..k {
            let shift = 3.0 * unit.sample(rng);
            let level = 1.0 + 0.05 * unit.sample(rng);
            let patchiness = (1.0 + 0.15 * unit.sample(rng)).max(0.0);
            for (t, &d) in days.iter().enumerate() {
                let season = vmin
                    + (vmax - vmin) * level * (logistic((d - sos - shift) / r_up) - logistic((d - eos - shift) / r_down));
                let drift = drift_dc + drift_amp * (2.0 * PI * t as f64 / n as f64 + drift_phase).cos();
                let mut v = [season + drift, lcc_scale * season + 0.5 * drift];
                for &(ch, j, amp, phase) in &tones {
                    v[ch as usize] += patchiness * amp * (2.0 * PI * (j * t) as f64 / n as f64 + phase).cos();
                }
                patch.set(row, col, t, Channel::Lai, v[0] + noise.sample(rng));
                patch.set(row, col, t, Channel::Lcc, v[1] + noise.sample(rng));
            }
        }
    }
    Ok(patch)
}

/// Severity drawn in `[severity_min_pct, severity_max_pct]` with a Beta(2, 3)
/// shape, which leans toward moderate values.
fn draw_severity<R: Rng + ?Sized>(config: &Config, rng: &mut R) -> f64 {
    let beta = Beta::new(2.0, 3.0).expect("valid beta");
    let (lo, hi) = (config.severity_min_pct, config.severity_max_pct);
    lo + (hi - lo) * beta.sample(rng)
}

/// `n` labeled samples; deterministic in `config.seed`, with one derived
/// random stream per sample.
pub fn generate(config: &Config, n: usize) -> Result<Vec<SynthSample>> {
    if !(0.0..=config.severity_max_pct).contains(&config.severity_min_pct) || config.severity_max_pct > 100.0 {
        return Err(Error::Config("severity range must satisfy 0 <= min <= max <= 100".into()));
    }
    let counts = class_counts(n, &config.class_mix)?;
    let mut intended: Vec<StressClass> = StressClass::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&c, m)| std::iter::repeat_n(c, m))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    intended.shuffle(&mut rng);
    intended
        .into_par_iter()
        .enumerate()
        .map(|(i, class)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64 + 1);
            let severity = match class {
                StressClass::Healthy => 0.0,
                _ => draw_severity(config, &mut rng),
            };
            let label = match class {
                StressClass::Healthy => StressClass::Healthy,
                StressClass::YellowRust => label_di(severity)?,
                StressClass::NitrogenDeficiency => {
                    let rate = 200.0 * (1.0 - severity / 100.0);
                    label_fertilizer(rate, FertilizerMode::Controlled)?
                }
            };
            let patch = synth_patch(config, class, severity, &mut rng)?;
            Ok(SynthSample {
                patch,
                label,
                severity,
            })
        })
        .collect()
}

/// Writes `patches.csv` and `labels.csv` into `dir`.
pub fn write_dataset(dir: &Path, samples: &[SynthSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut p = String::from("sample_id,row,col,step,vi_lai,vi_lcc\n");
    let mut l = String::from("sample_id,label,severity\n");
    for (id, s) in samples.iter().enumerate() {
        let k = s.patch.k();
        for row in 0..k {
            for col in 0..k {
                for t in 0..s.patch.steps() {
                    let _ = writeln!(
                        p,
                        "{id},{row},{col},{t},{},{}",
                        s.patch.get(row, col, t, Channel::Lai),
                        s.patch.get(row, col, t, Channel::Lcc)
                    );
                }
            }
        }
        let _ = writeln!(l, "{id},{},{}", s.label.name(), s.severity);
    }
    fs::write(dir.join("patches.csv"), p)?;
    fs::write(dir.join("labels.csv"), l)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PatchRow {
    sample_id: usize,
    row: usize,
    col: usize,
    step: usize,
    vi_lai: f64,
    vi_lcc: f64,
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    sample_id: usize,
    label: String,
    severity: f64,
}

/// Reads a dataset written by [`write_dataset`]; patch geometry comes from
/// `k` and `steps`.
pub fn read_dataset(dir: &Path, k: usize, steps: usize) -> Result<Vec<SynthSample>> {
    let mut labels = Vec::new();
    let mut rdr = csv::Reader::from_path(dir.join("labels.csv"))?;
    for (i, rec) in rdr.deserialize::<LabelRow>().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        if rec.sample_id != labels.len() {
            return Err(Error::parse(line, format!("sample_id {} out of sequence", rec.sample_id)));
        }
        let label: StressClass = rec.label.parse().map_err(|e: Error| Error::parse(line, e.to_string()))?;
        labels.push((label, rec.severity));
    }
    let per = k * k * steps * 2;
    let mut values = vec![vec![f64::NAN; per]; labels.len()];
    let mut rdr = csv::Reader::from_path(dir.join("patches.csv"))?;
    for (i, rec) in rdr.deserialize::<PatchRow>().enumerate() {
        let line = i + 2;
        let r = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        if r.sample_id >= labels.len() || r.row >= k || r.col >= k || r.step >= steps {
            return Err(Error::parse(line, "index outside the configured patch geometry"));
        }
        let base = ((r.row * k + r.col) * steps + r.step) * 2;
        values[r.sample_id][base] = r.vi_lai;
        values[r.sample_id][base + 1] = r.vi_lcc;
    }
    values
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(id, (v, (label, severity)))| {
            if v.iter().any(|x| x.is_nan()) {
                return Err(Error::InsufficientData(format!("sample {id} has missing patch values")));
            }
            Ok(SynthSample {
                patch: AgentPatch::new(k, steps, v)?,
                label,
                severity,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn di_threshold() {
        assert_eq!(label_di(19.9).unwrap(), StressClass::Healthy);
        assert_eq!(label_di(20.0).unwrap(), StressClass::YellowRust);
        assert_eq!(label_di(0.0).unwrap(), StressClass::Healthy);
        assert!(label_di(100.5).is_err());
    }

    #[test]
    fn fertilizer_modes() {
        use FertilizerMode::*;
        assert_eq!(label_fertilizer(200.0, Controlled).unwrap(), StressClass::Healthy);
        assert_eq!(label_fertilizer(100.0, Controlled).unwrap(), StressClass::NitrogenDeficiency);
        assert_eq!(label_fertilizer(149.0, Survey).unwrap(), StressClass::NitrogenDeficiency);
        assert_eq!(label_fertilizer(150.0, Survey).unwrap(), StressClass::Healthy);
        assert!(label_fertilizer(-1.0, Survey).is_err());
    }

    #[test]
    fn largest_remainder_counts() {
        assert_eq!(class_counts(10, &[1.0 / 3.0; 3]).unwrap(), [4, 3, 3]);
        assert_eq!(class_counts(5, &[1.0, 0.0, 0.0]).unwrap(), [5, 0, 0]);
        assert!(class_counts(5, &[0.5, 0.5, 0.5]).is_err());
    }
}
