//! Sentinel-2 band simulation from ground hyperspectra and series ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The seven visible/red-edge/NIR bands the pipeline consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
    B8,
}

impl Band {
    pub const ALL: [Band; 7] = [
        Band::B2,
        Band::B3,
        Band::B4,
        Band::B5,
        Band::B6,
        Band::B7,
        Band::B8,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::B2 => "B2",
            Band::B3 => "B3",
            Band::B4 => "B4",
            Band::B5 => "B5",
            Band::B6 => "B6",
            Band::B7 => "B7",
            Band::B8 => "B8",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Band::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown band '{s}'")))
    }
}

/// Ground reflectance sampled on a strictly increasing wavelength grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSpectrum {
    wavelengths_nm: Vec<f64>,
    reflectance: Vec<f64>,
}

impl HyperSpectrum {
    pub fn new(wavelengths_nm: Vec<f64>, reflectance: Vec<f64>) -> Result<Self> {
        if wavelengths_nm.len() != reflectance.len() {
            return Err(Error::dim(format!(
                "{} wavelengths but {} reflectances",
                wavelengths_nm.len(),
                reflectance.len()
            )));
        }
        if wavelengths_nm.len() < 2 {
            return Err(Error::invalid("spectrum needs at least two samples"));
        }
        check_increasing(&wavelengths_nm)?;
        if wavelengths_nm[0] < 400.0 || wavelengths_nm[wavelengths_nm.len() - 1] > 1000.0 {
            return Err(Error::invalid("spectrum wavelengths must lie within [400, 1000] nm"));
        }
        if let Some(r) = reflectance
            .iter()
            .find(|r| !(r.is_finite() && (0.0..=1.5).contains(*r)))
        {
            return Err(Error::invalid(format!("reflectance {r} outside [0, 1.5]")));
        }
        Ok(HyperSpectrum {
            wavelengths_nm,
            reflectance,
        })
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn reflectance(&self) -> &[f64] {
        &self.reflectance
    }

    pub fn at(&self, wavelength_nm: f64) -> f64 {
        interpolate(&self.wavelengths_nm, &self.reflectance, wavelength_nm)
    }
}

/// Relative spectral response of one band.
#[derive(Debug, Clone, PartialEq)]
pub struct RsrCurve {
    pub band: Band,
    wavelengths_nm: Vec<f64>,
    response: Vec<f64>,
}

impl RsrCurve {
    pub fn new(band: Band, wavelengths_nm: Vec<f64>, response: Vec<f64>) -> Result<Self> {
        if wavelengths_nm.len() != response.len() || wavelengths_nm.len() < 2 {
            return Err(Error::dim(format!(
                "RSR for {band} needs matching wavelength/response columns with at least two rows"
            )));
        }
        check_increasing(&wavelengths_nm)?;
        if let Some(r) = response
            .iter()
            .find(|r| !(r.is_finite() && (0.0..=1.0).contains(*r)))
        {
            return Err(Error::invalid(format!("RSR response {r} outside [0, 1]")));
        }
        Ok(RsrCurve {
            band,
            wavelengths_nm,
            response,
        })
    }

    pub fn start_nm(&self) -> f64 {
        self.wavelengths_nm[0]
    }

    pub fn end_nm(&self) -> f64 {
        self.wavelengths_nm[self.wavelengths_nm.len() - 1]
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn at(&self, wavelength_nm: f64) -> f64 {
        interpolate(&self.wavelengths_nm, &self.response, wavelength_nm)
    }

    /// Same curve with every response multiplied by `c`, clamped into `[0, 1]`
    /// only by the caller's choice of `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        RsrCurve::new(
            self.band,
            self.wavelengths_nm.clone(),
            self.response.iter().map(|r| r * c).collect(),
        )
    }
}

fn check_increasing(xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite wavelength"));
    }
    if let Some(w) = xs.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "wavelengths must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Piecewise-linear interpolation on a sorted grid; clamps outside it.
pub(crate) fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let hi = xs.partition_point(|&v| v <= x);
    let lo = hi - 1;
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

/// Band-equivalent reflectance `int(R * RSR) / int(RSR)` over the RSR support.
///
/// Both curves are linearly interpolated onto the union of their wavelength
/// grids inside `[start, end]`, and both integrals use the trapezoidal rule.
pub fn simulate_band(spectrum: &HyperSpectrum, rsr: &RsrCurve) -> Result<f64> {
    let (lo, hi) = (rsr.start_nm(), rsr.end_nm());
    let sw = spectrum.wavelengths();
    if sw[0] > lo || sw[sw.len() - 1] < hi {
        return Err(Error::Coverage {
            have_lo: sw[0],
            have_hi: sw[sw.len() - 1],
            need_lo: lo,
            need_hi: hi,
        });
    }
    let mut grid: Vec<f64> = sw
        .iter()
        .copied()
        .filter(|&w| w > lo && w < hi)
        .chain(rsr.wavelengths().iter().copied())
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut num = 0.0;
    let mut den = 0.0;
    let mut prev: Option<(f64, f64, f64)> = None;
    for &w in &grid {
        let r = rsr.at(w);
        let p = spectrum.at(w) * r;
        if let Some((w0, p0, r0)) = prev {
            let h = w - w0;
            num += 0.5 * h * (p0 + p);
            den += 0.5 * h * (r0 + r);
        }
        prev = Some((w, p, r));
    }
    if den <= 0.0 {
        return Err(Error::DegenerateBand(rsr.band.to_string()));
    }
    Ok(num / den)
}

/// A 2-D raster in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(format!(
                "{rows}x{cols} raster needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Raster { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }
}

/// Nearest-neighbour upsampling by 2: every 20 m cell fills its 2x2 block at 10 m.
pub fn resample_nearest<T: Copy>(grid: &Raster<T>) -> Result<Raster<T>> {
    if grid.data.is_empty() {
        return Err(Error::invalid("cannot resample an empty raster"));
    }
    let (rows, cols) = (grid.rows * 2, grid.cols * 2);
    let data = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| grid.get(r / 2, c / 2))
        .collect();
    Raster::new(rows, cols, data)
}

/// One pixel observation on one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sentinel2Record {
    pub row: usize,
    pub col: usize,
    /// Day-of-season index.
    pub date: i64,
    /// Reflectance for B2..B8, indexed by [`Band::index`].
    pub bands: [f64; 7],
}

impl Sentinel2Record {
    pub fn band(&self, b: Band) -> f64 {
        self.bands[b.index()]
    }
}

/// Records grouped per pixel, each group sorted by date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesCollection {
    pub pixels: BTreeMap<(usize, usize), Vec<Sentinel2Record>>,
}

impl SeriesCollection {
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn records(&self) -> impl Iterator<Item = &Sentinel2Record> {
        self.pixels.values().flatten()
    }

    /// Groups records by pixel and sorts by date, rejecting duplicate (pixel, date).
    pub fn from_records(records: Vec<(usize, Sentinel2Record)>) -> Result<Self> {
        let mut pixels: BTreeMap<(usize, usize), Vec<(usize, Sentinel2Record)>> = BTreeMap::new();
        for (line, rec) in records {
            pixels.entry((rec.row, rec.col)).or_default().push((line, rec));
        }
        let mut out = BTreeMap::new();
        for (key, mut recs) in pixels {
            recs.sort_by_key(|(_, r)| r.date);
            if let Some(w) = recs.windows(2).find(|w| w[0].1.date == w[1].1.date) {
                return Err(Error::parse(
                    w[1].0.max(w[0].0),
                    format!(
                        "duplicate observation for pixel ({}, {}) on day {} (dates must be strictly increasing per pixel)",
                        key.0, key.1, w[1].1.date
                    ),
                ));
            }
            out.insert(key, recs.into_iter().map(|(_, r)| r).collect());
        }
        Ok(SeriesCollection { pixels: out })
    }
}

const SERIES_HEADER: [&str; 10] = ["row", "col", "date", "B2", "B3", "B4", "B5", "B6", "B7", "B8"];

fn column_map(headers: &csv::StringRecord, wanted: &[&str]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::parse(1, format!("missing column '{name}'")))
        })
        .collect()
}

fn field<T: FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<T> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| Error::parse(line, format!("missing field '{name}'")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("cannot parse '{raw}' as {name}")))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn line_of(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map_or(fallback, |p| p.line() as usize)
}

/// Parses a series CSV (`row,col,date,B2,...,B8`).
pub fn parse_series<R: Read>(input: R) -> Result<SeriesCollection> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let cols = column_map(&headers, &SERIES_HEADER)?;
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(i + 2, e.to_string()))?;
        let line = line_of(&rec, i + 2);
        let mut bands = [0.0; 7];
        for (b, slot) in bands.iter_mut().enumerate() {
            let v: f64 = field(&rec, cols[3 + b], SERIES_HEADER[3 + b], line)?;
            if !(v.is_finite() && (0.0..=1.5).contains(&v)) {
                return Err(Error::parse(
                    line,
                    format!("{} reflectance {v} outside [0, 1.5]", SERIES_HEADER[3 + b]),
                ));
            }
            *slot = v;
        }
        records.push((
            line,
            Sentinel2Record {
                row: field(&rec, cols[0], "row", line)?,
                col: field(&rec, cols[1], "col", line)?,
                date: field(&rec, cols[2], "date", line)?,
                bands,
            },
        ));
    }
    SeriesCollection::from_records(records)
}

pub fn load_series(path: &Path) -> Result<SeriesCollection> {
    parse_series(std::fs::File::open(path)?)
}

pub fn write_series<W: Write>(out: W, records: &[Sentinel2Record]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SERIES_HEADER)?;
    for r in records {
        let mut row = vec![r.row.to_string(), r.col.to_string(), r.date.to_string()];
        row.extend(r.bands.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A spectrum tagged with the pixel and day it was measured for.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedSpectrum {
    pub row: usize,
    pub col: usize,
    pub date: i64,
    pub spectrum: HyperSpectrum,
}

/// First line seen, wavelengths and values of one curve.
type Group = (usize, Vec<f64>, Vec<f64>);

/// Parses a spectra CSV (`wavelength_nm,reflectance`). Optional `row,col,date`
/// columns split the file into several spectra; without them the whole file
/// is one spectrum at pixel (0, 0), day 0.
pub fn parse_spectra<R: Read>(input: R) -> Result<Vec<TaggedSpectrum>> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let cols = column_map(&headers, &["wavelength_nm", "reflectance"])?;
    let tag_cols = column_map(&headers, &["row", "col", "date"]).ok();
    let mut groups: BTreeMap<(usize, usize, i64), Group> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(i + 2, e.to_string()))?;
        let line = line_of(&rec, i + 2);
        let key = match &tag_cols {
            Some(t) => (
                field(&rec, t[0], "row", line)?,
                field(&rec, t[1], "col", line)?,
                field(&rec, t[2], "date", line)?,
            ),
            None => (0, 0, 0),
        };
        let wl: f64 = field(&rec, cols[0], "wavelength_nm", line)?;
        let r: f64 = field(&rec, cols[1], "reflectance", line)?;
        let g = groups.entry(key).or_insert_with(|| (line, Vec::new(), Vec::new()));
        g.1.push(wl);
        g.2.push(r);
    }
    if groups.is_empty() {
        return Err(Error::parse(1, "spectra file has no data rows"));
    }
    groups
        .into_iter()
        .map(|((row, col, date), (line, wl, r))| {
            let spectrum = HyperSpectrum::new(wl, r).map_err(|e| Error::parse(line, e.to_string()))?;
            Ok(TaggedSpectrum {
                row,
                col,
                date,
                spectrum,
            })
        })
        .collect()
}

/// Parses an RSR CSV (`band,wavelength_nm,response`) holding any subset of bands.
pub fn parse_rsr<R: Read>(input: R) -> Result<Vec<RsrCurve>> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let cols = column_map(&headers, &["band", "wavelength_nm", "response"])?;
    let mut groups: BTreeMap<Band, Group> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(i + 2, e.to_string()))?;
        let line = line_of(&rec, i + 2);
        let band: Band = rec
            .get(cols[0])
            .ok_or_else(|| Error::parse(line, "missing field 'band'"))?
            .parse()
            .map_err(|e: Error| Error::parse(line, e.to_string()))?;
        let wl: f64 = field(&rec, cols[1], "wavelength_nm", line)?;
        let r: f64 = field(&rec, cols[2], "response", line)?;
        let g = groups.entry(band).or_insert_with(|| (line, Vec::new(), Vec::new()));
        g.1.push(wl);
        g.2.push(r);
    }
    if groups.is_empty() {
        return Err(Error::parse(1, "RSR file has no data rows"));
    }
    groups
        .into_iter()
        .map(|(band, (line, wl, r))| {
            RsrCurve::new(band, wl, r).map_err(|e| Error::parse(line, e.to_string()))
        })
        .collect()
}

/// Simulates every band in `rsr` for every spectrum. Bands missing from the
/// RSR set are an error because a record needs all of B2..B8.
pub fn simulate_records(spectra: &[TaggedSpectrum], rsr: &[RsrCurve]) -> Result<Vec<Sentinel2Record>> {
    let mut by_band: [Option<&RsrCurve>; 7] = [None; 7];
    for c in rsr {
        by_band[c.band.index()] = Some(c);
    }
    if let Some(missing) = Band::ALL.iter().find(|b| by_band[b.index()].is_none()) {
        return Err(Error::invalid(format!("RSR set lacks band {missing}")));
    }
    spectra
        .iter()
        .map(|s| {
            let mut bands = [0.0; 7];
            for b in Band::ALL {
                bands[b.index()] = simulate_band(&s.spectrum, by_band[b.index()].unwrap())?;
            }
            Ok(Sentinel2Record {
                row: s.row,
                col: s.col,
                date: s.date,
                bands,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_spectrum(r: f64) -> HyperSpectrum {
        let wl: Vec<f64> = (0..=300).map(|i| 400.0 + 2.0 * i as f64).collect();
        let n = wl.len();
        HyperSpectrum::new(wl, vec![r; n]).unwrap()
    }

    fn triangle(band: Band, center: f64, half: f64) -> RsrCurve {
        RsrCurve::new(band, vec![center - half, center, center + half], vec![0.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn constant_reflectance_passes_through() {
        let s = flat_spectrum(0.37);
        let rsr = RsrCurve::new(Band::B4, vec![650.0, 660.0, 665.0, 680.0], vec![0.1, 0.9, 1.0, 0.2]).unwrap();
        assert!((simulate_band(&s, &rsr).unwrap() - 0.37).abs() < 1e-14);
    }

    #[test]
    fn narrow_rsr_samples_the_center() {
        let wl: Vec<f64> = (0..=600).map(|i| 400.0 + i as f64).collect();
        let refl: Vec<f64> = wl.iter().map(|w| 0.1 + 0.0005 * (w - 400.0)).collect();
        let s = HyperSpectrum::new(wl, refl).unwrap();
        let got = simulate_band(&s, &triangle(Band::B5, 705.0, 0.5)).unwrap();
        assert!((got - s.at(705.0)).abs() < 1e-12);
    }

    #[test]
    fn coverage_and_degenerate_errors() {
        let wl: Vec<f64> = (0..=100).map(|i| 500.0 + i as f64).collect();
        let s = HyperSpectrum::new(wl, vec![0.2; 101]).unwrap();
        assert!(matches!(
            simulate_band(&s, &triangle(Band::B8, 842.0, 20.0)),
            Err(Error::Coverage { .. })
        ));
        let zero = RsrCurve::new(Band::B3, vec![540.0, 560.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(simulate_band(&s, &zero), Err(Error::DegenerateBand(_))));
    }

    #[test]
    fn spectrum_validation() {
        assert!(HyperSpectrum::new(vec![500.0, 499.0], vec![0.1, 0.1]).is_err());
        assert!(HyperSpectrum::new(vec![390.0, 500.0], vec![0.1, 0.1]).is_err());
        assert!(HyperSpectrum::new(vec![500.0, 600.0], vec![0.1, 2.0]).is_err());
    }

    #[test]
    fn resample_two_by_two() {
        let g = Raster::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        let up = resample_nearest(&g).unwrap();
        assert_eq!((up.rows, up.cols), (4, 4));
        assert_eq!(
            up.data,
            vec![1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]
        );
        assert!(resample_nearest(&Raster::<f64>::new(0, 0, vec![]).unwrap()).is_err());
    }

    #[test]
    fn series_header_only_is_empty() {
        let c = parse_series("row,col,date,B2,B3,B4,B5,B6,B7,B8\n".as_bytes()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn series_single_row() {
        let csv = "row,col,date,B2,B3,B4,B5,B6,B7,B8\n3,4,17,0.02,0.05,0.03,0.08,0.2,0.3,0.35\n";
        let c = parse_series(csv.as_bytes()).unwrap();
        let r = c.pixels[&(3, 4)][0];
        assert_eq!((r.row, r.col, r.date), (3, 4, 17));
        assert_eq!(r.band(Band::B8), 0.35);
        assert_eq!(r.band(Band::B2), 0.02);
    }

    #[test]
    fn series_errors_carry_line_numbers() {
        let missing = "row,col,date,B2,B3,B4,B5,B6,B7\n0,0,1,0.1,0.1,0.1,0.1,0.1,0.1\n";
        assert!(matches!(parse_series(missing.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let bad = "row,col,date,B2,B3,B4,B5,B6,B7,B8\n0,0,1,0.1,0.1,0.1,0.1,0.1,0.1,0.1\n0,0,x,0.1,0.1,0.1,0.1,0.1,0.1,0.1\n";
        assert!(matches!(parse_series(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let dup = "row,col,date,B2,B3,B4,B5,B6,B7,B8\n0,0,5,0.1,0.1,0.1,0.1,0.1,0.1,0.1\n0,0,5,0.2,0.1,0.1,0.1,0.1,0.1,0.1\n";
        assert!(matches!(parse_series(dup.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }
}
