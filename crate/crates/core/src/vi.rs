//! Vegetation-index pre-filter: WDVI-derived LAI proxy, TCARI/OSAVI LCC proxy,
//! and assembly of uniform-grid network input patches.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::s2::{Band, SeriesCollection, Sentinel2Record};

fn check_reflectance(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && (0.0..=1.5).contains(&v)) {
        return Err(Error::invalid(format!("{name} reflectance {v} outside [0, 1.5]")));
    }
    Ok(())
}

/// Weighted difference vegetation index `nir - a * red`.
pub fn wdvi(nir: f64, red: f64, soil_slope: f64) -> Result<f64> {
    check_reflectance("nir", nir)?;
    check_reflectance("red", red)?;
    if !(soil_slope > 0.0 && soil_slope.is_finite()) {
        return Err(Error::invalid(format!("soil slope {soil_slope} must be positive")));
    }
    Ok(nir - soil_slope * red)
}

/// TCARI / OSAVI ratio from reflectance at 550, 670, 700 and 800 nm.
pub fn tcari_osavi(r550: f64, r670: f64, r700: f64, r800: f64) -> Result<f64> {
    for (name, v) in [("r550", r550), ("r670", r670), ("r700", r700), ("r800", r800)] {
        check_reflectance(name, v)?;
    }
    if r670 <= 0.0 {
        return Err(Error::DegenerateDenominator("r670 must be positive".into()));
    }
    let tcari = 3.0 * ((r700 - r670) - 0.2 * (r700 - r550) * (r700 / r670));
    let osavi = 1.16 * (r800 - r670) / (r800 + r670 + 0.16);
    if osavi.abs() <= 1e-6 {
        return Err(Error::DegenerateDenominator(format!("OSAVI {osavi:e} too close to zero")));
    }
    Ok(tcari / osavi)
}

/// LAI proxy by exponential inversion of WDVI:
/// `-(1/alpha) * ln(1 - wdvi / wdvi_inf)`.
pub fn vi_lai(wdvi: f64, alpha: f64, wdvi_inf: f64) -> Result<f64> {
    if !(alpha > 0.0 && wdvi_inf > 0.0) {
        return Err(Error::invalid("alpha and wdvi_inf must be positive"));
    }
    if !wdvi.is_finite() || wdvi < 0.0 {
        return Err(Error::invalid(format!("wdvi {wdvi} must be finite and non-negative")));
    }
    if wdvi >= wdvi_inf {
        return Err(Error::Saturation { wdvi, wdvi_inf });
    }
    Ok(-(-wdvi / wdvi_inf).ln_1p() / alpha)
}

/// Which Sentinel-2 band stands in for each wavelength the indices need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandMapping {
    pub r550: Band,
    pub r670: Band,
    pub r700: Band,
    pub r800: Band,
    pub nir: Band,
    pub red: Band,
}

impl Default for BandMapping {
    fn default() -> Self {
        BandMapping {
            r550: Band::B3,
            r670: Band::B4,
            r700: Band::B5,
            r800: Band::B8,
            nir: Band::B8,
            red: Band::B4,
        }
    }
}

impl fmt::Display for BandMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "r550={};r670={};r700={};r800={};nir={};red={}",
            self.r550, self.r670, self.r700, self.r800, self.nir, self.red
        )
    }
}

impl FromStr for BandMapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = BandMapping::default();
        for part in s.split([';', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            let (key, band) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("band mapping entry '{part}' lacks '='")))?;
            let band: Band = band.parse()?;
            match key.trim() {
                "r550" => m.r550 = band,
                "r670" => m.r670 = band,
                "r700" => m.r700 = band,
                "r800" => m.r800 = band,
                "nir" => m.nir = band,
                "red" => m.red = band,
                other => return Err(Error::Config(format!("unknown band mapping key '{other}'"))),
            }
        }
        Ok(m)
    }
}

/// Calibration constants of the pre-filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ViParams {
    pub soil_slope: f64,
    pub clair_alpha: f64,
    pub wdvi_inf: f64,
    pub mapping: BandMapping,
}

impl Default for ViParams {
    fn default() -> Self {
        ViParams {
            soil_slope: 1.0,
            clair_alpha: 0.4,
            wdvi_inf: 0.6,
            mapping: BandMapping::default(),
        }
    }
}

/// LAI and LCC proxies for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViPair {
    pub vi_lai: f64,
    pub vi_lcc: f64,
}

pub fn vi_pair(record: &Sentinel2Record, p: &ViParams) -> Result<ViPair> {
    let m = &p.mapping;
    let w = wdvi(record.band(m.nir), record.band(m.red), p.soil_slope)?;
    Ok(ViPair {
        vi_lai: vi_lai(w, p.clair_alpha, p.wdvi_inf)?,
        vi_lcc: tcari_osavi(
            record.band(m.r550),
            record.band(m.r670),
            record.band(m.r700),
            record.band(m.r800),
        )?,
    })
}

/// Index of a patch channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Lai = 0,
    Lcc = 1,
}

/// Network input: `k x k` pixels, `steps` uniform time steps, two channels.
///
/// Values are stored as `[row][col][step][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPatch {
    k: usize,
    steps: usize,
    values: Vec<f64>,
}

impl AgentPatch {
    pub fn new(k: usize, steps: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("patch side must be at least 1"));
        }
        if steps == 0 || !steps.is_multiple_of(2) {
            return Err(Error::invalid(format!("time steps {steps} must be even and positive")));
        }
        if values.len() != k * k * steps * 2 {
            return Err(Error::dim(format!(
                "{k}x{k}x{steps}x2 patch needs {} values, got {}",
                k * k * steps * 2,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("patch contains non-finite values"));
        }
        Ok(AgentPatch { k, steps, values })
    }

    pub fn zeros(k: usize, steps: usize) -> Result<Self> {
        AgentPatch::new(k, steps, vec![0.0; k * k * steps * 2])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize, step: usize, ch: Channel) -> f64 {
        self.values[((row * self.k + col) * self.steps + step) * 2 + ch as usize]
    }

    pub fn set(&mut self, row: usize, col: usize, step: usize, ch: Channel, v: f64) {
        self.values[((row * self.k + col) * self.steps + step) * 2 + ch as usize] = v;
    }

    /// One channel as `[pixel][step]` with pixels in row-major order.
    pub fn channel(&self, ch: Channel) -> Vec<f64> {
        self.values.iter().skip(ch as usize).step_by(2).copied().collect()
    }

    /// Series of one pixel in one channel.
    pub fn series(&self, row: usize, col: usize, ch: Channel) -> Vec<f64> {
        (0..self.steps).map(|t| self.get(row, col, t, ch)).collect()
    }
}

/// `steps` equally spaced days from `start_day` to `end_day` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayGrid {
    pub start_day: f64,
    pub end_day: f64,
    pub steps: usize,
}

impl DayGrid {
    pub fn day(&self, t: usize) -> f64 {
        if self.steps == 1 {
            return self.start_day;
        }
        self.start_day + (self.end_day - self.start_day) * t as f64 / (self.steps - 1) as f64
    }

    pub fn days(&self) -> Vec<f64> {
        (0..self.steps).map(|t| self.day(t)).collect()
    }
}

/// Linear interpolation of irregular observations onto `days`, holding the
/// first/last value outside the observed range.
pub fn interpolate_series(obs_days: &[f64], obs_values: &[f64], days: &[f64]) -> Result<Vec<f64>> {
    if obs_days.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} observation(s); interpolation needs at least 2",
            obs_days.len()
        )));
    }
    if obs_days.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("observation days must be sorted"));
    }
    if obs_days[0] == obs_days[obs_days.len() - 1] {
        return Err(Error::InsufficientData("all observations share one date".into()));
    }
    Ok(days
        .iter()
        .map(|&d| crate::s2::interpolate(obs_days, obs_values, d))
        .collect())
}

/// A patch centered on one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPatch {
    pub row: usize,
    pub col: usize,
    pub patch: AgentPatch,
}

/// Builds one patch per pixel (row-major order): VI pairs are computed per
/// record, interpolated onto the grid, and `k x k` neighbourhoods assembled
/// with clamp-to-border.
pub fn build_patches(
    series: &SeriesCollection,
    k: usize,
    grid: &DayGrid,
    params: &ViParams,
) -> Result<Vec<PixelPatch>> {
    if k.is_multiple_of(2) {
        return Err(Error::invalid(format!("patch side {k} must be odd")));
    }
    if grid.steps == 0 || !grid.steps.is_multiple_of(2) {
        return Err(Error::invalid(format!("grid steps {} must be even", grid.steps)));
    }
    if series.is_empty() {
        return Ok(Vec::new());
    }
    let days = grid.days();
    let keys: Vec<(usize, usize)> = series.pixels.keys().copied().collect();
    let interpolated: Vec<(Vec<f64>, Vec<f64>)> = keys
        .par_iter()
        .map(|key| {
            let recs = &series.pixels[key];
            if recs.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "pixel ({}, {}) has {} observation(s)",
                    key.0,
                    key.1,
                    recs.len()
                )));
            }
            let obs_days: Vec<f64> = recs.iter().map(|r| r.date as f64).collect();
            let pairs = recs
                .iter()
                .map(|r| vi_pair(r, params))
                .collect::<Result<Vec<_>>>()?;
            let lai: Vec<f64> = pairs.iter().map(|p| p.vi_lai).collect();
            let lcc: Vec<f64> = pairs.iter().map(|p| p.vi_lcc).collect();
            Ok((
                interpolate_series(&obs_days, &lai, &days)?,
                interpolate_series(&obs_days, &lcc, &days)?,
            ))
        })
        .collect::<Result<_>>()?;

    let rows = keys.iter().map(|k| k.0).max().unwrap() + 1;
    let cols = keys.iter().map(|k| k.1).max().unwrap() + 1;
    let lookup = |r: usize, c: usize| -> Result<&(Vec<f64>, Vec<f64>)> {
        keys.binary_search(&(r, c))
            .map(|i| &interpolated[i])
            .map_err(|_| Error::InsufficientData(format!("pixel ({r}, {c}) has no observations")))
    };
    let half = (k / 2) as isize;
    keys.iter()
        .map(|&(r0, c0)| {
            let mut values = vec![0.0; k * k * grid.steps * 2];
            for di in 0..k {
                for dj in 0..k {
                    let r = (r0 as isize + di as isize - half).clamp(0, rows as isize - 1) as usize;
                    let c = (c0 as isize + dj as isize - half).clamp(0, cols as isize - 1) as usize;
                    let (lai, lcc) = lookup(r, c)?;
                    for t in 0..grid.steps {
                        let base = ((di * k + dj) * grid.steps + t) * 2;
                        values[base] = lai[t];
                        values[base + 1] = lcc[t];
                    }
                }
            }
            Ok(PixelPatch {
                row: r0,
                col: c0,
                patch: AgentPatch::new(k, grid.steps, values)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wdvi_examples() {
        assert_eq!(wdvi(0.4, 0.1, 1.0).unwrap(), 0.30000000000000004);
        assert!(wdvi(0.3, 0.2, 1.5).unwrap().abs() < 1e-15);
        assert!(wdvi(0.3, 0.2, 0.0).is_err());
        assert!(wdvi(1.6, 0.2, 1.0).is_err());
    }

    #[test]
    fn tcari_osavi_cancellations() {
        assert_eq!(tcari_osavi(0.2, 0.2, 0.2, 0.5).unwrap(), 0.0);
        assert_eq!(tcari_osavi(0.07, 0.07, 0.07, 0.4).unwrap(), 0.0);
    }

    #[test]
    fn tcari_osavi_degenerate() {
        assert!(matches!(
            tcari_osavi(0.1, 0.0, 0.1, 0.4),
            Err(Error::DegenerateDenominator(_))
        ));
        assert!(matches!(
            tcari_osavi(0.1, 0.2, 0.3, 0.2),
            Err(Error::DegenerateDenominator(_))
        ));
    }

    #[test]
    fn vi_lai_fixed_points() {
        assert_eq!(vi_lai(0.0, 0.4, 0.6).unwrap(), 0.0);
        let w = 0.6 * (1.0 - (-0.4f64).exp());
        assert!((vi_lai(w, 0.4, 0.6).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(vi_lai(0.6, 0.4, 0.6), Err(Error::Saturation { .. })));
        assert!(vi_lai(-0.01, 0.4, 0.6).is_err());
    }

    #[test]
    fn mapping_round_trips_through_text() {
        let m = BandMapping {
            r700: Band::B6,
            ..BandMapping::default()
        };
        assert_eq!(m.to_string().parse::<BandMapping>().unwrap(), m);
        assert!("r999=B2".parse::<BandMapping>().is_err());
    }

    #[test]
    fn patch_rejects_odd_steps() {
        assert!(AgentPatch::zeros(3, 7).is_err());
        assert!(AgentPatch::new(1, 4, vec![0.0; 7]).is_err());
    }

    #[test]
    fn interpolation_is_exact_at_observations() {
        let d = [0.0, 10.0, 25.0];
        let v = [1.0, 3.0, -2.0];
        assert_eq!(interpolate_series(&d, &v, &d).unwrap(), v.to_vec());
        assert!(interpolate_series(&[5.0, 5.0], &[1.0, 2.0], &d).is_err());
        assert!(interpolate_series(&[5.0], &[1.0], &d).is_err());
    }
}
