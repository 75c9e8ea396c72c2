//! Fast Fourier convolution layer.
//!
//! Per pixel the temporal series is transformed (normalized DFT), each
//! non-redundant bin inside the band mask is multiplied by a learnable complex
//! weight, the magnitude plus a learnable bias goes through ReLU, and a max
//! over each pooling band yields one output channel per band. Bins outside
//! the mask never reach the output.
//!
//! Parameters live in a flat `f64` slice: `2 * P * B` interleaved (re, im)
//! weights followed by `P * B` biases, with `P = k * k` pixels and
//! `B = steps / 2 + 1` bins.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{half_spectrum, FftPlan};

/// Inclusive range of DFT bins the layer keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandMask {
    pub low_bin: usize,
    pub high_bin: usize,
}

impl BandMask {
    pub fn new(low_bin: usize, high_bin: usize, steps: usize) -> Result<Self> {
        if low_bin > high_bin || high_bin > steps / 2 {
            return Err(Error::invalid(format!(
                "band mask [{low_bin}, {high_bin}] outside bins 0..={}",
                steps / 2
            )));
        }
        Ok(BandMask { low_bin, high_bin })
    }

    pub fn contains(&self, bin: usize) -> bool {
        (self.low_bin..=self.high_bin).contains(&bin)
    }

    pub fn width(&self) -> usize {
        self.high_bin - self.low_bin + 1
    }
}

/// Contiguous partition of the mask into pooling bands (inclusive bin ranges).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolBands {
    bands: Vec<(usize, usize)>,
}

impl PoolBands {
    pub fn new(bands: Vec<(usize, usize)>, mask: &BandMask) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::invalid("at least one pooling band is required"));
        }
        let mut next = mask.low_bin;
        for &(lo, hi) in &bands {
            if hi < lo {
                return Err(Error::invalid(format!("pooling band [{lo}, {hi}] is empty")));
            }
            if lo != next {
                return Err(Error::invalid(format!(
                    "pooling bands must tile the mask contiguously; expected a band starting at {next}, got [{lo}, {hi}]"
                )));
            }
            next = hi + 1;
        }
        if next != mask.high_bin + 1 {
            return Err(Error::invalid(format!(
                "pooling bands end at {} but the mask ends at {}",
                next - 1,
                mask.high_bin
            )));
        }
        Ok(PoolBands { bands })
    }

    /// Splits the mask into `count` bands of near-equal width.
    pub fn equal(mask: &BandMask, count: usize) -> Result<Self> {
        let width = mask.width();
        if count == 0 || count > width {
            return Err(Error::invalid(format!(
                "cannot split {width} bins into {count} non-empty bands"
            )));
        }
        let bands = (0..count)
            .map(|b| {
                let lo = mask.low_bin + b * width / count;
                let hi = mask.low_bin + (b + 1) * width / count - 1;
                (lo, hi)
            })
            .collect();
        PoolBands::new(bands, mask)
    }

    pub fn bands(&self) -> &[(usize, usize)] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }
}

/// Shape of one FFC branch.
#[derive(Debug, Clone, PartialEq)]
pub struct FfcGeometry {
    pub k: usize,
    pub steps: usize,
    pub mask: BandMask,
    pub pool: PoolBands,
}

impl FfcGeometry {
    pub fn new(k: usize, steps: usize, mask: BandMask, pool: PoolBands) -> Result<Self> {
        if k == 0 || steps == 0 || !steps.is_multiple_of(2) {
            return Err(Error::invalid(format!("bad FFC geometry k={k} steps={steps}")));
        }
        BandMask::new(mask.low_bin, mask.high_bin, steps)?;
        Ok(FfcGeometry {
            k,
            steps,
            mask,
            pool,
        })
    }

    pub fn positions(&self) -> usize {
        self.k * self.k
    }

    pub fn bins(&self) -> usize {
        self.steps / 2 + 1
    }

    pub fn channels(&self) -> usize {
        self.pool.len()
    }

    pub fn feature_len(&self) -> usize {
        self.positions() * self.channels()
    }

    pub fn param_len(&self) -> usize {
        3 * self.positions() * self.bins()
    }
}

/// Complex point-wise kernel and per-(pixel, bin) bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierKernel {
    pub weights: Vec<Complex64>,
    pub bias: Vec<f64>,
}

impl FourierKernel {
    /// Unit-magnitude weights with uniform random phase in (-pi, pi], zero bias.
    pub fn random<R: Rng + ?Sized>(geom: &FfcGeometry, rng: &mut R) -> Self {
        let n = geom.positions() * geom.bins();
        let weights = (0..n)
            .map(|_| {
                // gen::<f64>() is in [0, 1), so PI - 2*PI*u lies in (-PI, PI].
                let u: f64 = rng.gen();
                Complex64::from_polar(1.0, PI - 2.0 * PI * u)
            })
            .collect();
        FourierKernel {
            weights,
            bias: vec![0.0; n],
        }
    }

    pub fn constant(geom: &FfcGeometry, w: Complex64, bias: f64) -> Self {
        let n = geom.positions() * geom.bins();
        FourierKernel {
            weights: vec![w; n],
            bias: vec![bias; n],
        }
    }

    pub fn to_params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.weights.iter().flat_map(|w| [w.re, w.im]).collect();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn from_params(geom: &FfcGeometry, params: &[f64]) -> Result<Self> {
        if params.len() != geom.param_len() {
            return Err(Error::dim(format!(
                "FFC kernel needs {} parameters, got {}",
                geom.param_len(),
                params.len()
            )));
        }
        let n = geom.positions() * geom.bins();
        Ok(FourierKernel {
            weights: params[..2 * n]
                .chunks_exact(2)
                .map(|c| Complex64::new(c[0], c[1]))
                .collect(),
            bias: params[2 * n..].to_vec(),
        })
    }
}

/// Pooled, non-negative FFC output: `[pixel][band]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FfcFeatures {
    pub k: usize,
    pub values: Vec<f64>,
    /// Inclusive bin range behind each output channel.
    pub bands: Vec<(usize, usize)>,
}

impl FfcFeatures {
    pub fn channels(&self) -> usize {
        self.bands.len()
    }

    pub fn get(&self, pixel: usize, band: usize) -> f64 {
        self.values[pixel * self.bands.len() + band]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Winner {
    bin: usize,
    x: Complex64,
    z: Complex64,
    pre: f64,
}

/// What the forward pass recorded for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct FfcTrace {
    winners: Vec<Winner>,
}

/// Gradients of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FfcGrads {
    /// Same layout as the flat parameter slice.
    pub params: Vec<f64>,
    /// Gradient with respect to the input series, `[pixel][step]`.
    pub input: Vec<f64>,
}

/// One branch of the network. Holds only geometry; parameters are passed in.
#[derive(Debug, Clone)]
pub struct FfcLayer {
    pub geometry: FfcGeometry,
    plan: FftPlan,
}

impl FfcLayer {
    pub fn new(geometry: FfcGeometry) -> Result<Self> {
        let plan = FftPlan::new(geometry.steps)?;
        Ok(FfcLayer { geometry, plan })
    }

    /// Half spectra of a `[pixel][step]` channel, `[pixel][bin]`.
    pub fn spectra(&self, channel: &[f64]) -> Result<Vec<Complex64>> {
        let g = &self.geometry;
        if channel.len() != g.positions() * g.steps {
            return Err(Error::dim(format!(
                "FFC input needs {} values, got {}",
                g.positions() * g.steps,
                channel.len()
            )));
        }
        Ok(channel
            .chunks_exact(g.steps)
            .flat_map(|s| half_spectrum(&self.plan, s))
            .collect())
    }

    /// Forward pass from precomputed half spectra.
    pub fn forward_spectra(&self, params: &[f64], spectra: &[Complex64]) -> (Vec<f64>, FfcTrace) {
        let g = &self.geometry;
        let (np, nb) = (g.positions(), g.bins());
        debug_assert_eq!(params.len(), g.param_len());
        debug_assert_eq!(spectra.len(), np * nb);
        let bias_off = 2 * np * nb;
        let mut out = Vec::with_capacity(g.feature_len());
        let mut winners = Vec::with_capacity(g.feature_len());
        for p in 0..np {
            for &(lo, hi) in g.pool.bands() {
                let mut best: Option<(f64, Winner)> = None;
                for j in lo..=hi {
                    let idx = p * nb + j;
                    let w = Complex64::new(params[2 * idx], params[2 * idx + 1]);
                    let x = spectra[idx];
                    let z = x * w;
                    let pre = z.norm() + params[bias_off + idx];
                    let y = pre.max(0.0);
                    if best.is_none_or(|(b, _)| y > b) {
                        best = Some((y, Winner { bin: j, x, z, pre }));
                    }
                }
                let (y, win) = best.expect("pooling bands are non-empty");
                out.push(y);
                winners.push(win);
            }
        }
        (out, FfcTrace { winners })
    }

    /// Backward pass. Accumulates parameter gradients into `grad_params` and
    /// returns the gradient with respect to the half spectra.
    pub fn backward_spectra(
        &self,
        params: &[f64],
        trace: &FfcTrace,
        upstream: &[f64],
        grad_params: &mut [f64],
    ) -> Vec<Complex64> {
        let g = &self.geometry;
        let (np, nb, nc) = (g.positions(), g.bins(), g.channels());
        let bias_off = 2 * np * nb;
        let mut g_spec = vec![Complex64::new(0.0, 0.0); np * nb];
        for (o, (&gy, win)) in upstream.iter().zip(&trace.winners).enumerate() {
            if gy == 0.0 || win.pre <= 0.0 {
                continue;
            }
            let idx = (o / nc) * nb + win.bin;
            grad_params[bias_off + idx] += gy;
            let mag = win.z.norm();
            if mag == 0.0 {
                continue;
            }
            let unit = win.z / mag;
            let w = Complex64::new(params[2 * idx], params[2 * idx + 1]);
            let gw = unit * win.x.conj() * gy;
            grad_params[2 * idx] += gw.re;
            grad_params[2 * idx + 1] += gw.im;
            g_spec[idx] += unit * w.conj() * gy;
        }
        g_spec
    }

    /// Pulls a half-spectrum gradient back to the time-domain input.
    pub fn input_gradient(&self, g_spec: &[Complex64]) -> Vec<f64> {
        let g = &self.geometry;
        let (n, nb) = (g.steps, g.bins());
        let mut out = vec![0.0; g.positions() * n];
        for (p, row) in out.chunks_exact_mut(n).enumerate() {
            let gs = &g_spec[p * nb..(p + 1) * nb];
            for (t, slot) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, gj) in gs.iter().enumerate() {
                    if *gj == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    let ang = 2.0 * PI * ((j * t) % n) as f64 / n as f64;
                    acc += gj.re * ang.cos() - gj.im * ang.sin();
                }
                *slot = acc / n as f64;
            }
        }
        out
    }

    pub fn forward(&self, params: &[f64], channel: &[f64]) -> Result<(FfcFeatures, FfcTrace)> {
        if params.len() != self.geometry.param_len() {
            return Err(Error::dim(format!(
                "FFC layer needs {} parameters, got {}",
                self.geometry.param_len(),
                params.len()
            )));
        }
        let spectra = self.spectra(channel)?;
        let (values, trace) = self.forward_spectra(params, &spectra);
        Ok((
            FfcFeatures {
                k: self.geometry.k,
                values,
                bands: self.geometry.pool.bands().to_vec(),
            },
            trace,
        ))
    }

    pub fn backward(&self, params: &[f64], trace: &FfcTrace, upstream: &[f64]) -> Result<FfcGrads> {
        if upstream.len() != self.geometry.feature_len() || trace.winners.len() != upstream.len() {
            return Err(Error::dim(format!(
                "FFC backward expects {} upstream values",
                self.geometry.feature_len()
            )));
        }
        let mut grads = vec![0.0; self.geometry.param_len()];
        let g_spec = self.backward_spectra(params, trace, upstream, &mut grads);
        Ok(FfcGrads {
            params: grads,
            input: self.input_gradient(&g_spec),
        })
    }
}

/// One-shot forward over a `[pixel][step]` channel.
pub fn ffc_forward(
    channel: &[f64],
    k: usize,
    kernel: &FourierKernel,
    mask: BandMask,
    pool: &PoolBands,
) -> Result<FfcFeatures> {
    let steps = channel.len() / (k * k).max(1);
    let geom = FfcGeometry::new(k, steps, mask, pool.clone())?;
    let layer = FfcLayer::new(geom)?;
    Ok(layer.forward(&kernel.to_params(), channel)?.0)
}

/// A layer plus its parameters and the last forward trace, enforcing
/// forward-before-backward.
pub struct FfcSession<'a> {
    layer: &'a FfcLayer,
    params: &'a [f64],
    trace: Option<FfcTrace>,
}

impl<'a> FfcSession<'a> {
    pub fn new(layer: &'a FfcLayer, params: &'a [f64]) -> Self {
        FfcSession {
            layer,
            params,
            trace: None,
        }
    }

    pub fn forward(&mut self, channel: &[f64]) -> Result<FfcFeatures> {
        let (features, trace) = self.layer.forward(self.params, channel)?;
        self.trace = Some(trace);
        Ok(features)
    }

    pub fn backward(&self, upstream: &[f64]) -> Result<FfcGrads> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        self.layer.backward(self.params, trace, upstream)
    }
}
