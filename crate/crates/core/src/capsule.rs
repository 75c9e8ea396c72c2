//! Capsule feature encoder: batch normalization of the FFC scalars, grouping
//! into primary capsules, and dynamic routing to the class capsules.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-8;

/// `(|u|^2 / (1 + |u|^2)) * u / |u|`, with `squash(0) = 0`.
pub fn squash(u: &[f64]) -> Vec<f64> {
    let n2: f64 = u.iter().map(|v| v * v).sum();
    let n = n2.sqrt();
    if n == 0.0 {
        return vec![0.0; u.len()];
    }
    let s = n / (1.0 + n2);
    u.iter().map(|v| v * s).collect()
}

/// Vector-Jacobian product of [`squash`] at `u`.
pub fn squash_backward(u: &[f64], g: &[f64]) -> Vec<f64> {
    let n2: f64 = u.iter().map(|v| v * v).sum();
    let n = n2.sqrt();
    if n == 0.0 {
        return vec![0.0; u.len()];
    }
    let d = 1.0 + n2;
    let s = n / d;
    // d s / d n, divided by n so it multiplies u directly.
    let ds = (1.0 - n2) / (d * d * n);
    let ug: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
    u.iter().zip(g).map(|(ui, gi)| s * gi + ds * ug * ui).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Running statistics used at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn update(&mut self, mean: &[f64], var: &[f64], momentum: f64) {
        for (r, m) in self.mean.iter_mut().zip(mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, v) in self.var.iter_mut().zip(var) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
    }
}

/// Saved state of a training-mode normalization pass.
#[derive(Debug, Clone)]
pub struct NormTrace {
    xhat: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Per-feature standardization followed by a learnable affine map.
///
/// Parameters: `dim` scales followed by `dim` shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub dim: usize,
}

impl Normalizer {
    pub fn param_len(&self) -> usize {
        2 * self.dim
    }

    pub fn identity_params(&self) -> Vec<f64> {
        let mut p = vec![1.0; self.dim];
        p.extend(std::iter::repeat_n(0.0, self.dim));
        p
    }

    /// Normalizes with statistics of the batch itself (biased variance, eps 1e-8).
    pub fn forward_train(&self, params: &[f64], batch: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, NormTrace)> {
        if batch.is_empty() {
            return Err(Error::invalid("normalization needs a non-empty batch"));
        }
        if batch.iter().any(|x| x.len() != self.dim) || params.len() != self.param_len() {
            return Err(Error::dim(format!("normalizer expects width {}", self.dim)));
        }
        let b = batch.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for x in batch {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= b);
        let mut var = vec![0.0; self.dim];
        for x in batch {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= b);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let (gamma, beta) = params.split_at(self.dim);
        let mut xhat = Vec::with_capacity(batch.len());
        let mut out = Vec::with_capacity(batch.len());
        for x in batch {
            let h: Vec<f64> = x
                .iter()
                .zip(&mean)
                .zip(&inv_std)
                .map(|((v, m), s)| (v - m) * s)
                .collect();
            out.push(
                h.iter()
                    .zip(gamma)
                    .zip(beta)
                    .map(|((h, g), b)| g * h + b)
                    .collect(),
            );
            xhat.push(h);
        }
        Ok((
            out,
            NormTrace {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    /// Normalizes one sample with stored statistics.
    pub fn forward_eval(&self, params: &[f64], stats: &RunningStats, x: &[f64]) -> Vec<f64> {
        let (gamma, beta) = params.split_at(self.dim);
        x.iter()
            .enumerate()
            .map(|(i, v)| gamma[i] * (v - stats.mean[i]) / (stats.var[i] + NORM_EPS).sqrt() + beta[i])
            .collect()
    }

    /// Backward through a training-mode pass; accumulates into `grad_params`
    /// and returns the input gradient per sample.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &NormTrace,
        upstream: &[Vec<f64>],
        grad_params: &mut [f64],
    ) -> Vec<Vec<f64>> {
        let d = self.dim;
        let b = upstream.len() as f64;
        let gamma = &params[..d];
        let mut sum_g = vec![0.0; d];
        let mut sum_gx = vec![0.0; d];
        for (g, h) in upstream.iter().zip(&trace.xhat) {
            for i in 0..d {
                grad_params[i] += g[i] * h[i];
                grad_params[d + i] += g[i];
                let gh = g[i] * gamma[i];
                sum_g[i] += gh;
                sum_gx[i] += gh * h[i];
            }
        }
        upstream
            .iter()
            .zip(&trace.xhat)
            .map(|(g, h)| {
                (0..d)
                    .map(|i| {
                        trace.inv_std[i] / b * (b * g[i] * gamma[i] - sum_g[i] - h[i] * sum_gx[i])
                    })
                    .collect()
            })
            .collect()
    }
}

/// Where one primary-capsule component came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSource {
    /// 0 = LAI branch, 1 = LCC branch.
    pub branch: usize,
    pub pixel: usize,
    /// Pooling band index within the branch.
    pub band: usize,
}

/// How the normalized feature block is cut into primary capsules: each
/// branch's `[pixel][band]` features are chunked into runs of `d_p`, the last
/// run zero-padded, so no capsule mixes branches.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryLayout {
    pub d_p: usize,
    pub branches: usize,
    pub features_per_branch: usize,
    pub bands_per_pixel: usize,
}

impl PrimaryLayout {
    pub fn new(d_p: usize, branches: usize, pixels: usize, bands_per_pixel: usize) -> Result<Self> {
        if d_p == 0 || branches == 0 || pixels == 0 || bands_per_pixel == 0 {
            return Err(Error::invalid("primary capsule layout needs positive sizes"));
        }
        Ok(PrimaryLayout {
            d_p,
            branches,
            features_per_branch: pixels * bands_per_pixel,
            bands_per_pixel,
        })
    }

    pub fn capsules_per_branch(&self) -> usize {
        self.features_per_branch.div_ceil(self.d_p)
    }

    /// Number of primary capsules (K3).
    pub fn count(&self) -> usize {
        self.branches * self.capsules_per_branch()
    }

    pub fn feature_len(&self) -> usize {
        self.branches * self.features_per_branch
    }

    /// Flat capsule slot for each feature index.
    fn slot(&self, feature: usize) -> usize {
        let branch = feature / self.features_per_branch;
        let within = feature % self.features_per_branch;
        branch * self.capsules_per_branch() * self.d_p + within
    }

    pub fn group(&self, features: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.count() * self.d_p];
        for (f, &v) in features.iter().enumerate() {
            out[self.slot(f)] = v;
        }
        out
    }

    pub fn ungroup(&self, capsule_grad: &[f64]) -> Vec<f64> {
        (0..self.feature_len()).map(|f| capsule_grad[self.slot(f)]).collect()
    }

    /// Provenance of every capsule component, `None` for padding.
    pub fn sources(&self) -> Vec<Option<FeatureSource>> {
        let mut out = vec![None; self.count() * self.d_p];
        for f in 0..self.feature_len() {
            let within = f % self.features_per_branch;
            out[self.slot(f)] = Some(FeatureSource {
                branch: f / self.features_per_branch,
                pixel: within / self.bands_per_pixel,
                band: within % self.bands_per_pixel,
            });
        }
        out
    }
}

/// K3 primary capsule vectors of dimension `dim`, flat.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryCapsules {
    pub dim: usize,
    pub values: Vec<f64>,
    pub sources: Vec<Option<FeatureSource>>,
}

impl PrimaryCapsules {
    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Z class capsule vectors of dimension `dim`, flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCapsules {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl ClassCapsules {
    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn vector(&self, h: usize) -> &[f64] {
        &self.values[h * self.dim..(h + 1) * self.dim]
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.values.chunks_exact(self.dim).map(norm).collect()
    }
}

/// Routing logits and coupling coefficients, both `[primary][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingState {
    pub classes: usize,
    pub logits: Vec<f64>,
    pub coupling: Vec<f64>,
}

/// Everything routing computed, kept for the unrolled backward pass.
#[derive(Debug, Clone)]
pub struct RoutingTrace {
    u_hat: Vec<f64>,
    /// Coupling coefficients used in each iteration.
    pub couplings: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn softmax_rows(logits: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(width) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|b| (b - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|x| x / s));
    }
    out
}

/// Dynamic routing between K3 primary and Z class capsules.
///
/// Parameters are the per-(primary, class) transforms, `d_c x d_p` each,
/// stored `[i][h][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Router {
    pub primaries: usize,
    pub classes: usize,
    pub d_p: usize,
    pub d_c: usize,
    pub iterations: usize,
}

impl Router {
    pub fn new(primaries: usize, classes: usize, d_p: usize, d_c: usize, iterations: usize) -> Result<Self> {
        if iterations < 1 {
            return Err(Error::invalid("routing needs at least one iteration"));
        }
        if primaries == 0 || classes == 0 || d_p == 0 || d_c == 0 {
            return Err(Error::invalid("router dimensions must be positive"));
        }
        Ok(Router {
            primaries,
            classes,
            d_p,
            d_c,
            iterations,
        })
    }

    pub fn param_len(&self) -> usize {
        self.primaries * self.classes * self.d_c * self.d_p
    }

    /// Gaussian transforms scaled so the initial class-capsule input has norm of order one.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let std = self.classes as f64 / ((self.d_c * self.d_p * self.primaries) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        (0..self.param_len()).map(|_| dist.sample(rng)).collect()
    }

    fn predictions(&self, params: &[f64], u: &[f64]) -> Vec<f64> {
        let (dp, dc, z) = (self.d_p, self.d_c, self.classes);
        let mut u_hat = vec![0.0; self.primaries * z * dc];
        for i in 0..self.primaries {
            let ui = &u[i * dp..(i + 1) * dp];
            for h in 0..z {
                let w = &params[(i * z + h) * dc * dp..(i * z + h + 1) * dc * dp];
                let out = &mut u_hat[(i * z + h) * dc..(i * z + h + 1) * dc];
                for (r, o) in out.iter_mut().enumerate() {
                    *o = w[r * dp..(r + 1) * dp].iter().zip(ui).map(|(a, b)| a * b).sum();
                }
            }
        }
        u_hat
    }

    /// Runs the agreement recurrence. `u` is `[primary][d_p]`.
    pub fn forward(&self, params: &[f64], u: &[f64]) -> (ClassCapsules, RoutingState, RoutingTrace) {
        debug_assert_eq!(params.len(), self.param_len());
        debug_assert_eq!(u.len(), self.primaries * self.d_p);
        let (z, dc, np) = (self.classes, self.d_c, self.primaries);
        let u_hat = self.predictions(params, u);
        let mut b = vec![0.0; np * z];
        let mut couplings = Vec::with_capacity(self.iterations);
        let mut s_all = Vec::with_capacity(self.iterations);
        let mut v_all = Vec::with_capacity(self.iterations);
        let mut c = Vec::new();
        for _ in 0..self.iterations {
            c = softmax_rows(&b, z);
            let mut s = vec![0.0; z * dc];
            for i in 0..np {
                for h in 0..z {
                    let cih = c[i * z + h];
                    let uh = &u_hat[(i * z + h) * dc..(i * z + h + 1) * dc];
                    for (acc, x) in s[h * dc..(h + 1) * dc].iter_mut().zip(uh) {
                        *acc += cih * x;
                    }
                }
            }
            let v: Vec<f64> = s.chunks_exact(dc).flat_map(squash).collect();
            for i in 0..np {
                for h in 0..z {
                    let uh = &u_hat[(i * z + h) * dc..(i * z + h + 1) * dc];
                    let vh = &v[h * dc..(h + 1) * dc];
                    b[i * z + h] += uh.iter().zip(vh).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            couplings.push(c.clone());
            s_all.push(s);
            v_all.push(v);
        }
        let v = v_all.last().cloned().unwrap_or_default();
        (
            ClassCapsules { dim: dc, values: v },
            RoutingState {
                classes: z,
                logits: b,
                coupling: c,
            },
            RoutingTrace {
                u_hat,
                couplings,
                s: s_all,
                v: v_all,
            },
        )
    }

    /// Backward through the unrolled iterations. Accumulates transform
    /// gradients into `grad_params` and returns the gradient for `u`.
    pub fn backward(
        &self,
        params: &[f64],
        u: &[f64],
        trace: &RoutingTrace,
        grad_v: &[f64],
        grad_params: &mut [f64],
    ) -> Vec<f64> {
        let (z, dc, dp, np) = (self.classes, self.d_c, self.d_p, self.primaries);
        let r = self.iterations;
        let mut g_uhat = vec![0.0; np * z * dc];
        // Gradient flowing into the logits that iteration t+1 starts from.
        let mut g_b_next = vec![0.0; np * z];
        for t in (0..r).rev() {
            let c = &trace.couplings[t];
            let s = &trace.s[t];
            let v = &trace.v[t];
            let mut g_v = if t == r - 1 {
                grad_v.to_vec()
            } else {
                vec![0.0; z * dc]
            };
            if t < r - 1 {
                // b_{t+1} = b_t + <u_hat, v_t>
                for i in 0..np {
                    for h in 0..z {
                        let gb = g_b_next[i * z + h];
                        if gb == 0.0 {
                            continue;
                        }
                        let base = (i * z + h) * dc;
                        for d in 0..dc {
                            g_v[h * dc + d] += gb * trace.u_hat[base + d];
                            g_uhat[base + d] += gb * v[h * dc + d];
                        }
                    }
                }
            }
            let g_s: Vec<f64> = s
                .chunks_exact(dc)
                .zip(g_v.chunks_exact(dc))
                .flat_map(|(sh, gh)| squash_backward(sh, gh))
                .collect();
            let mut g_c = vec![0.0; np * z];
            for i in 0..np {
                for h in 0..z {
                    let base = (i * z + h) * dc;
                    let gs = &g_s[h * dc..(h + 1) * dc];
                    let mut dot = 0.0;
                    for d in 0..dc {
                        dot += gs[d] * trace.u_hat[base + d];
                        g_uhat[base + d] += c[i * z + h] * gs[d];
                    }
                    g_c[i * z + h] = dot;
                }
            }
            // softmax over classes, then the identity path b_t -> b_{t+1}.
            let mut g_b = g_b_next.clone();
            for i in 0..np {
                let row = &c[i * z..(i + 1) * z];
                let gr = &g_c[i * z..(i + 1) * z];
                let inner: f64 = row.iter().zip(gr).map(|(a, b)| a * b).sum();
                for h in 0..z {
                    g_b[i * z + h] += row[h] * (gr[h] - inner);
                }
            }
            g_b_next = g_b;
        }
        let mut g_u = vec![0.0; np * dp];
        for i in 0..np {
            let ui = &u[i * dp..(i + 1) * dp];
            for h in 0..z {
                let wbase = (i * z + h) * dc * dp;
                let gh = &g_uhat[(i * z + h) * dc..(i * z + h + 1) * dc];
                for (row, &g) in gh.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    for col in 0..dp {
                        grad_params[wbase + row * dp + col] += g * ui[col];
                        g_u[i * dp + col] += g * params[wbase + row * dp + col];
                    }
                }
            }
        }
        g_u
    }
}

/// Per-(primary, class) linear maps for [`route`], `[i][h][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transforms {
    pub classes: usize,
    pub d_c: usize,
    pub values: Vec<f64>,
}

/// Routes primary capsules to class capsules with `iterations` agreement updates.
pub fn route(
    primary: &PrimaryCapsules,
    transforms: &Transforms,
    iterations: usize,
) -> Result<(ClassCapsules, RoutingState)> {
    let router = Router::new(primary.count(), transforms.classes, primary.dim, transforms.d_c, iterations)?;
    if transforms.values.len() != router.param_len() {
        return Err(Error::dim(format!(
            "routing needs {} transform values, got {}",
            router.param_len(),
            transforms.values.len()
        )));
    }
    let (v, state, _) = router.forward(&transforms.values, &primary.values);
    Ok((v, state))
}
