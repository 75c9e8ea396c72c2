//! Arbitrary-length discrete Fourier transform.
//!
//! The forward transform carries the `1/N` factor,
//! `X[k] = (1/N) * sum_n x[n] * exp(-2*pi*i*k*n/N)`,
//! and the inverse is unnormalized so the pair round-trips. Power-of-two
//! lengths use an iterative radix-2 kernel; every other length goes through
//! Bluestein's chirp-z reformulation on a power-of-two grid, so no length is
//! ever zero-padded and bin `k` always means `k` cycles per series.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Output of [`dft`]: complex bins plus the normalization they were produced with.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    /// True when the forward transform applied the `1/N` factor.
    pub forward_normalized: bool,
}

impl Spectrum {
    pub fn new(bins: Vec<Complex64>, forward_normalized: bool) -> Self {
        Spectrum {
            bins,
            forward_normalized,
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Largest violation of `bin[N-j] == conj(bin[j])`, relative to the largest bin magnitude.
    pub fn conjugate_asymmetry(&self) -> f64 {
        let n = self.bins.len();
        let scale = self
            .bins
            .iter()
            .map(|b| b.norm())
            .fold(0.0_f64, f64::max)
            .max(1e-12);
        let mut worst = self.bins.first().map_or(0.0, |b| b.im.abs());
        for j in 1..n {
            let d = (self.bins[n - j] - self.bins[j].conj()).norm();
            worst = worst.max(d);
        }
        worst / scale
    }
}

#[derive(Debug, Clone)]
enum Strategy {
    Radix2 {
        twiddles: Vec<Complex64>,
    },
    Bluestein {
        chirp: Vec<Complex64>,
        filter_spectrum: Vec<Complex64>,
        inner: Box<FftPlan>,
    },
}

/// Precomputed transform of one length. Immutable after construction and
/// safe to share across threads.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    strategy: Strategy,
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("transform length must be at least 1"));
        }
        if len.is_power_of_two() {
            let twiddles = (0..len / 2)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
                .collect();
            return Ok(FftPlan {
                len,
                strategy: Strategy::Radix2 { twiddles },
            });
        }

        // exp(-i*pi*n^2/N); n^2 is reduced mod 2N first so the angle stays accurate.
        let chirp: Vec<Complex64> = (0..len)
            .map(|n| {
                let sq = (n as u128 * n as u128) % (2 * len as u128);
                Complex64::from_polar(1.0, -PI * sq as f64 / len as f64)
            })
            .collect();
        let m = (2 * len - 1).next_power_of_two();
        let inner = FftPlan::new(m)?;
        let mut filter = vec![Complex64::new(0.0, 0.0); m];
        filter[0] = chirp[0].conj();
        for n in 1..len {
            filter[n] = chirp[n].conj();
            filter[m - n] = chirp[n].conj();
        }
        inner.forward_unnormalized(&mut filter);
        Ok(FftPlan {
            len,
            strategy: Strategy::Bluestein {
                chirp,
                filter_spectrum: filter,
                inner: Box::new(inner),
            },
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place `X[k] = sum_n x[n] exp(-2 pi i k n / N)` (no scaling).
    pub fn forward_unnormalized(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len, "buffer length does not match plan");
        match &self.strategy {
            Strategy::Radix2 { twiddles } => radix2(buf, twiddles, false),
            Strategy::Bluestein {
                chirp,
                filter_spectrum,
                inner,
            } => bluestein(buf, chirp, filter_spectrum, inner, false),
        }
    }

    /// In-place `x[n] = sum_k X[k] exp(+2 pi i k n / N)` (no scaling).
    pub fn inverse_unnormalized(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len, "buffer length does not match plan");
        match &self.strategy {
            Strategy::Radix2 { twiddles } => radix2(buf, twiddles, true),
            Strategy::Bluestein {
                chirp,
                filter_spectrum,
                inner,
            } => bluestein(buf, chirp, filter_spectrum, inner, true),
        }
    }

    /// Normalized forward transform of a real signal.
    pub fn forward_real(&self, signal: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward_unnormalized(&mut buf);
        let scale = 1.0 / self.len as f64;
        for b in &mut buf {
            *b *= scale;
        }
        buf
    }
}

fn radix2(buf: &mut [Complex64], twiddles: &[Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut half = 1;
    while half < n {
        let stride = n / (2 * half);
        for start in (0..n).step_by(2 * half) {
            for k in 0..half {
                let mut w = twiddles[k * stride];
                if inverse {
                    w = w.conj();
                }
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        half *= 2;
    }
}

fn bluestein(
    buf: &mut [Complex64],
    chirp: &[Complex64],
    filter_spectrum: &[Complex64],
    inner: &FftPlan,
    inverse: bool,
) {
    // The inverse is the conjugate of the forward transform of the conjugate.
    let n = buf.len();
    let m = inner.len();
    let mut work = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..n {
        let x = if inverse { buf[i].conj() } else { buf[i] };
        work[i] = x * chirp[i];
    }
    inner.forward_unnormalized(&mut work);
    for (w, f) in work.iter_mut().zip(filter_spectrum) {
        *w *= f;
    }
    inner.inverse_unnormalized(&mut work);
    let scale = 1.0 / m as f64;
    for k in 0..n {
        let y = work[k] * scale * chirp[k];
        buf[k] = if inverse { y.conj() } else { y };
    }
}

/// Forward DFT of a real signal with the `1/N` factor.
pub fn dft(signal: &[f64]) -> Result<Spectrum> {
    if signal.is_empty() {
        return Err(Error::invalid("dft of an empty signal"));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("dft input contains non-finite samples"));
    }
    let plan = FftPlan::new(signal.len())?;
    Ok(Spectrum::new(plan.forward_real(signal), true))
}

/// Inverse of [`dft`], returning a real sequence.
///
/// Fails if the spectrum is not conjugate-symmetric (relative tolerance 1e-9),
/// since the result would not be real.
pub fn idft(spectrum: &Spectrum) -> Result<Vec<f64>> {
    let n = spectrum.len();
    if n == 0 {
        return Err(Error::invalid("idft of an empty spectrum"));
    }
    let asym = spectrum.conjugate_asymmetry();
    if asym > 1e-9 {
        return Err(Error::invalid(format!(
            "spectrum is not conjugate-symmetric (relative asymmetry {asym:.3e}); real output impossible"
        )));
    }
    let mut buf = idft_complex(spectrum)?;
    Ok(buf.drain(..).map(|c| c.re).collect())
}

/// Complex inverse honoring the spectrum's normalization flag.
pub fn idft_complex(spectrum: &Spectrum) -> Result<Vec<Complex64>> {
    let n = spectrum.len();
    let plan = FftPlan::new(n)?;
    let mut buf = spectrum.bins.clone();
    plan.inverse_unnormalized(&mut buf);
    if !spectrum.forward_normalized {
        let scale = 1.0 / n as f64;
        for b in &mut buf {
            *b *= scale;
        }
    }
    Ok(buf)
}

/// Non-redundant half spectrum `0..=N/2` of a real signal, normalized as [`dft`].
pub fn half_spectrum(plan: &FftPlan, signal: &[f64]) -> Vec<Complex64> {
    let mut full = plan.forward_real(signal);
    full.truncate(plan.len() / 2 + 1);
    full
}

/// Circular convolution `(a * b)[n] = sum_m a[m] b[(n - m) mod N]` computed directly.
pub fn circular_convolve_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    assert_eq!(n, b.len(), "circular convolution needs equal lengths");
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for m in 0..n {
                let j = (i + n - m) % n;
                acc += a[m] * b[j];
            }
            acc
        })
        .collect()
}

/// Circular convolution through the frequency domain, reusing a plan.
pub fn circular_convolve_fft(plan: &FftPlan, a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = plan.len();
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.forward_unnormalized(&mut fa);
    plan.forward_unnormalized(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    plan.inverse_unnormalized(&mut fa);
    let scale = 1.0 / n as f64;
    fa.iter().map(|c| c.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(signal: &[f64]) -> Vec<Complex64> {
        let n = signal.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (t, &x) in signal.iter().enumerate() {
                    let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                    acc += Complex64::new(ang.cos(), ang.sin()) * x;
                }
                acc / n as f64
            })
            .collect()
    }

    #[test]
    fn constant_signal_is_dc_only() {
        for n in [1, 5, 8, 52] {
            let s = dft(&vec![2.5; n]).unwrap();
            assert!((s.bins[0].re - 2.5).abs() < 1e-12);
            for b in &s.bins[1..] {
                assert!(b.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = vec![0.0; 8];
        x[0] = 1.0;
        for b in dft(&x).unwrap().bins {
            assert!((b - Complex64::new(0.125, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(dft(&[]), Err(Error::InvalidArgument(_))));
        assert!(idft(&Spectrum::new(vec![], true)).is_err());
    }

    #[test]
    fn bluestein_length_52_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let x: Vec<f64> = (0..52).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = dft(&x).unwrap().bins;
        let want = naive(&x);
        let scale = want.iter().map(|b| b.norm()).fold(0.0, f64::max);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).norm() / scale < 1e-9);
        }
    }

    #[test]
    fn dc_only_spectrum_inverts_to_constant() {
        let mut bins = vec![Complex64::new(0.0, 0.0); 6];
        bins[0] = Complex64::new(-1.5, 0.0);
        let x = idft(&Spectrum::new(bins, true)).unwrap();
        for v in x {
            assert!((v + 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn asymmetric_spectrum_rejected_for_real_output() {
        let mut bins = vec![Complex64::new(0.0, 0.0); 4];
        bins[1] = Complex64::new(1.0, 0.0);
        assert!(idft(&Spectrum::new(bins, true)).is_err());
    }

    #[test]
    fn convolution_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [7, 16, 52] {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let plan = FftPlan::new(n).unwrap();
            let direct = circular_convolve_direct(&a, &b);
            let fast = circular_convolve_fft(&plan, &a, &b);
            for (d, f) in direct.iter().zip(&fast) {
                assert!((d - f).abs() < 1e-10);
            }
        }
    }
}
