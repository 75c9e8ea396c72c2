//! Flat `key = value` configuration.
//!
//! One key per line, `#` starts a comment, unknown keys are rejected. Units
//! appear in key names where a value has one. [`Config::to_text`] writes
//! every key in a fixed order, so the dump doubles as documentation of the
//! defaults and as the canonical form embedded in model files.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::capsule::PrimaryLayout;
use crate::error::{Error, Result};
use crate::ffc::{BandMask, FfcGeometry, PoolBands};
use crate::vi::{BandMapping, DayGrid, ViParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,

    // patches
    pub k: usize,
    pub k1: usize,
    pub grid_start_day: f64,
    pub grid_end_day: f64,

    // pre-filter
    pub soil_slope: f64,
    pub clair_alpha: f64,
    pub wdvi_inf: f64,
    pub s2_band_mapping: BandMapping,

    // FFC
    pub band_low: usize,
    pub band_high: usize,
    pub k2: usize,
    /// Explicit pooling bands `lo-hi;lo-hi;...`; empty means K2 equal bands.
    pub pool_bands: String,

    // capsules
    pub d_p: usize,
    pub d_c: usize,
    pub k3: usize,
    pub routing_iters: usize,
    pub norm_momentum: f64,

    // loss
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda_down: f64,

    // optimizer
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    // CNN baseline
    pub cnn_widths: Vec<usize>,
    pub cnn_kernel_len: usize,
    pub cnn_hidden: usize,

    // synthetic generator
    pub n_samples: usize,
    pub class_mix: [f64; 3],
    pub noise_sigma_vi: f64,
    pub severity_min_pct: f64,
    pub severity_max_pct: f64,
    /// Peak tone amplitude in VI units at severity 100, per class and channel.
    pub yr_gain_lai: f64,
    pub yr_gain_lcc: f64,
    pub nd_gain_lai: f64,
    pub nd_gain_lcc: f64,
    pub yr_bands_lai: (usize, usize),
    pub yr_bands_lcc: (usize, usize),
    pub nd_bands_lai: (usize, usize),
    pub nd_bands_lcc: (usize, usize),
    pub drift_amplitude_vi: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 7,
            k: 3,
            k1: 52,
            grid_start_day: 0.0,
            grid_end_day: 357.0,
            soil_slope: 1.0,
            clair_alpha: 0.4,
            wdvi_inf: 0.6,
            s2_band_mapping: BandMapping::default(),
            band_low: 2,
            band_high: 15,
            k2: 14,
            pool_bands: String::new(),
            d_p: 8,
            d_c: 16,
            k3: 32,
            routing_iters: 3,
            norm_momentum: 0.1,
            m_plus: 0.9,
            m_minus: 0.1,
            lambda_down: 0.5,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 30,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            cnn_widths: vec![16, 32, 32, 64],
            cnn_kernel_len: 3,
            cnn_hidden: 64,
            n_samples: 5000,
            class_mix: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            noise_sigma_vi: 0.01,
            severity_min_pct: 40.0,
            severity_max_pct: 100.0,
            yr_gain_lai: 0.085,
            yr_gain_lcc: 0.055,
            nd_gain_lai: 0.06,
            nd_gain_lcc: 0.025,
            yr_bands_lai: (2, 4),
            yr_bands_lcc: (2, 4),
            nd_bands_lai: (5, 15),
            nd_bands_lcc: (6, 13),
            drift_amplitude_vi: 0.3,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_range(key: &str, value: &str) -> Result<(usize, usize)> {
    let (a, b) = value
        .split_once('-')
        .ok_or_else(|| Error::Config(format!("key '{key}' expects lo-hi, got '{value}'")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_fraction(key: &str, s: &str) -> Result<f64> {
    match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (parse(key, a.trim())?, parse(key, b.trim())?);
            Ok(a / b)
        }
        None => parse(key, s),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Config::from_text(&text)
    }

    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n + 1, format!("expected key = value, got '{line}'")))?;
            c.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(n + 1, e.to_string()))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "K1" => self.k1 = parse(key, v)?,
            "grid_start_day" => self.grid_start_day = parse(key, v)?,
            "grid_end_day" => self.grid_end_day = parse(key, v)?,
            "soil_slope" => self.soil_slope = parse(key, v)?,
            "clair_alpha" => self.clair_alpha = parse(key, v)?,
            "wdvi_inf" => self.wdvi_inf = parse(key, v)?,
            "s2_band_mapping" => self.s2_band_mapping = v.parse()?,
            "band_low" => self.band_low = parse(key, v)?,
            "band_high" => self.band_high = parse(key, v)?,
            "K2" => self.k2 = parse(key, v)?,
            "pool_bands" => self.pool_bands = v.to_string(),
            "d_p" => self.d_p = parse(key, v)?,
            "d_c" => self.d_c = parse(key, v)?,
            "K3" => self.k3 = parse(key, v)?,
            "routing_iters" => self.routing_iters = parse(key, v)?,
            "norm_momentum" => self.norm_momentum = parse(key, v)?,
            "m_plus" => self.m_plus = parse(key, v)?,
            "m_minus" => self.m_minus = parse(key, v)?,
            "lambda_down" => self.lambda_down = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "cnn_widths" => self.cnn_widths = parse_list(key, v)?,
            "cnn_kernel_len" => self.cnn_kernel_len = parse(key, v)?,
            "cnn_hidden" => self.cnn_hidden = parse(key, v)?,
            "n_samples" => self.n_samples = parse(key, v)?,
            "class_mix" => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|s| parse_fraction(key, s.trim()))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(Error::Config("class_mix needs three proportions".into()));
                }
                self.class_mix = [parts[0], parts[1], parts[2]];
            }
            "noise_sigma_vi" => self.noise_sigma_vi = parse(key, v)?,
            "severity_min_pct" => self.severity_min_pct = parse(key, v)?,
            "severity_max_pct" => self.severity_max_pct = parse(key, v)?,
            "yr_gain_lai" => self.yr_gain_lai = parse(key, v)?,
            "yr_gain_lcc" => self.yr_gain_lcc = parse(key, v)?,
            "nd_gain_lai" => self.nd_gain_lai = parse(key, v)?,
            "nd_gain_lcc" => self.nd_gain_lcc = parse(key, v)?,
            "yr_bands_lai" => self.yr_bands_lai = parse_range(key, v)?,
            "yr_bands_lcc" => self.yr_bands_lcc = parse_range(key, v)?,
            "nd_bands_lai" => self.nd_bands_lai = parse_range(key, v)?,
            "nd_bands_lcc" => self.nd_bands_lcc = parse_range(key, v)?,
            "drift_amplitude_vi" => self.drift_amplitude_vi = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Canonical text form: every key, fixed order, round-trips through [`Config::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("k", self.k.to_string());
        kv("K1", self.k1.to_string());
        kv("grid_start_day", self.grid_start_day.to_string());
        kv("grid_end_day", self.grid_end_day.to_string());
        kv("soil_slope", self.soil_slope.to_string());
        kv("clair_alpha", self.clair_alpha.to_string());
        kv("wdvi_inf", self.wdvi_inf.to_string());
        kv("s2_band_mapping", self.s2_band_mapping.to_string());
        kv("band_low", self.band_low.to_string());
        kv("band_high", self.band_high.to_string());
        kv("K2", self.k2.to_string());
        kv("pool_bands", self.pool_bands.clone());
        kv("d_p", self.d_p.to_string());
        kv("d_c", self.d_c.to_string());
        kv("K3", self.k3.to_string());
        kv("routing_iters", self.routing_iters.to_string());
        kv("norm_momentum", self.norm_momentum.to_string());
        kv("m_plus", self.m_plus.to_string());
        kv("m_minus", self.m_minus.to_string());
        kv("lambda_down", self.lambda_down.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("adam_beta1", self.adam_beta1.to_string());
        kv("adam_beta2", self.adam_beta2.to_string());
        kv("adam_eps", self.adam_eps.to_string());
        kv(
            "cnn_widths",
            self.cnn_widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("cnn_kernel_len", self.cnn_kernel_len.to_string());
        kv("cnn_hidden", self.cnn_hidden.to_string());
        kv("n_samples", self.n_samples.to_string());
        kv(
            "class_mix",
            self.class_mix.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("noise_sigma_vi", self.noise_sigma_vi.to_string());
        kv("severity_min_pct", self.severity_min_pct.to_string());
        kv("severity_max_pct", self.severity_max_pct.to_string());
        kv("yr_gain_lai", self.yr_gain_lai.to_string());
        kv("yr_gain_lcc", self.yr_gain_lcc.to_string());
        kv("nd_gain_lai", self.nd_gain_lai.to_string());
        kv("nd_gain_lcc", self.nd_gain_lcc.to_string());
        let range = |r: (usize, usize)| format!("{}-{}", r.0, r.1);
        kv("yr_bands_lai", range(self.yr_bands_lai));
        kv("yr_bands_lcc", range(self.yr_bands_lcc));
        kv("nd_bands_lai", range(self.nd_bands_lai));
        kv("nd_bands_lcc", range(self.nd_bands_lcc));
        kv("drift_amplitude_vi", self.drift_amplitude_vi.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 || self.k.is_multiple_of(2) {
            return bad(format!("k = {} must be odd", self.k));
        }
        if self.k1 < 2 || !self.k1.is_multiple_of(2) {
            return bad(format!("K1 = {} must be even", self.k1));
        }
        if self.grid_end_day <= self.grid_start_day {
            return bad("grid_end_day must exceed grid_start_day".into());
        }
        self.ffc_geometry()?;
        let layout = self.primary_layout()?;
        if layout.count() != self.k3 {
            return bad(format!(
                "K3 = {} but {} branches x ceil({} features / d_p {}) gives {} primary capsules",
                self.k3,
                layout.branches,
                layout.features_per_branch,
                self.d_p,
                layout.count()
            ));
        }
        if self.d_c == 0 || self.routing_iters == 0 {
            return bad("d_c and routing_iters must be positive".into());
        }
        if !(self.m_minus >= 0.0 && self.m_minus < self.m_plus && self.m_plus <= 1.0 && self.lambda_down >= 0.0) {
            return bad("margins must satisfy 0 <= m_minus < m_plus <= 1 and lambda_down >= 0".into());
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return bad("learning_rate and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.norm_momentum) {
            return bad("norm_momentum must lie in [0, 1]".into());
        }
        if self.cnn_widths.is_empty() || self.cnn_kernel_len.is_multiple_of(2) || self.cnn_hidden == 0 {
            return bad("cnn_widths non-empty, cnn_kernel_len odd, cnn_hidden positive".into());
        }
        let total: f64 = self.class_mix.iter().sum();
        if self.class_mix.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return bad(format!("class_mix {:?} must be non-negative and sum to 1", self.class_mix));
        }
        if !(0.0 <= self.severity_min_pct
            && self.severity_min_pct <= self.severity_max_pct
            && self.severity_max_pct <= 100.0)
        {
            return bad("severity range must satisfy 0 <= min <= max <= 100".into());
        }
        if self.noise_sigma_vi < 0.0 || self.drift_amplitude_vi < 0.0 {
            return bad("noise and drift amplitudes must be non-negative".into());
        }
        if [self.yr_gain_lai, self.yr_gain_lcc, self.nd_gain_lai, self.nd_gain_lcc].iter().any(|&g| g <= 0.0) {
            return bad("stress gains must be positive".into());
        }
        for r in [self.yr_bands_lai, self.yr_bands_lcc, self.nd_bands_lai, self.nd_bands_lcc] {
            if r.0 < 1 || r.0 > r.1 || r.1 > self.k1 / 2 {
                return bad(format!("signature band {}-{} outside 1..={}", r.0, r.1, self.k1 / 2));
            }
        }
        Ok(())
    }

    pub fn band_mask(&self) -> Result<BandMask> {
        BandMask::new(self.band_low, self.band_high, self.k1)
    }

    pub fn pool(&self) -> Result<PoolBands> {
        let mask = self.band_mask()?;
        if self.pool_bands.trim().is_empty() {
            return PoolBands::equal(&mask, self.k2);
        }
        let bands = self
            .pool_bands
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_range("pool_bands", s))
            .collect::<Result<Vec<_>>>()?;
        if bands.len() != self.k2 {
            return Err(Error::Config(format!(
                "pool_bands lists {} bands but K2 = {}",
                bands.len(),
                self.k2
            )));
        }
        PoolBands::new(bands, &mask)
    }

    pub fn ffc_geometry(&self) -> Result<FfcGeometry> {
        FfcGeometry::new(self.k, self.k1, self.band_mask()?, self.pool()?)
    }

    pub fn primary_layout(&self) -> Result<PrimaryLayout> {
        PrimaryLayout::new(self.d_p, 2, self.k * self.k, self.k2)
    }

    pub fn vi_params(&self) -> ViParams {
        ViParams {
            soil_slope: self.soil_slope,
            clair_alpha: self.clair_alpha,
            wdvi_inf: self.wdvi_inf,
            mapping: self.s2_band_mapping,
        }
    }

    pub fn day_grid(&self) -> DayGrid {
        DayGrid {
            start_day: self.grid_start_day,
            end_day: self.grid_end_day,
            steps: self.k1,
        }
    }

    /// A small configuration (k = 1, K1 = 8) used by gradient checks and quick tests.
    pub fn miniature() -> Self {
        Config {
            k: 1,
            k1: 8,
            band_low: 1,
            band_high: 3,
            k2: 3,
            d_p: 2,
            d_c: 3,
            k3: 4,
            routing_iters: 3,
            cnn_widths: vec![3, 4, 4, 5],
            cnn_hidden: 4,
            yr_bands_lai: (1, 1),
            yr_bands_lcc: (1, 1),
            nd_bands_lai: (2, 3),
            nd_bands_lcc: (2, 3),
            ..Config::default()
        }
    }
}
