use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{
    check_patch, ordered_sum, softmax_xent, BatchResult, ModelKind, Network, Prediction,
    PreparedSample, NUM_CLASSES,
};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::ffc::{FfcLayer, FfcTrace, FourierKernel};

/// Zero-initialised affine map to class logits.
#[derive(Debug, Clone, Copy)]
struct Affine {
    inputs: usize,
}

impl Affine {
    fn param_len(&self) -> usize {
        NUM_CLASSES * (self.inputs + 1)
    }

    fn logits(&self, params: &[f64], x: &[f64]) -> [f64; NUM_CLASSES] {
        let (w, b) = params.split_at(NUM_CLASSES * self.inputs);
        let mut out = [0.0; NUM_CLASSES];
        for (h, o) in out.iter_mut().enumerate() {
            let row = &w[h * self.inputs..(h + 1) * self.inputs];
            *o = b[h] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&self, params: &[f64], x: &[f64], g: &[f64; NUM_CLASSES], grad: &mut [f64]) -> Vec<f64> {
        let n = self.inputs;
        let mut gx = vec![0.0; n];
        for h in 0..NUM_CLASSES {
            for i in 0..n {
                grad[h * n + i] += g[h] * x[i];
                gx[i] += g[h] * params[h * n + i];
            }
            grad[NUM_CLASSES * n + h] += g[h];
        }
        gx
    }
}

fn predict_from_logits(logits: &[f64; NUM_CLASSES]) -> Prediction {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Prediction::from_scores([e[0] / z, e[1] / z, e[2] / z])
}

fn check_params(have: usize, want: usize, batch: &[&PreparedSample]) -> Result<()> {
    if have != want {
        return Err(Error::dim(format!("parameter vector has {have} values, expected {want}")));
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    Ok(())
}

/// Flattened raw VI patch, affine, softmax.
#[derive(Debug, Clone)]
pub struct LinearBase {
    k: usize,
    k1: usize,
    affine: Affine,
    params: Vec<f64>,
}

impl LinearBase {
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        let affine = Affine {
            inputs: config.k * config.k * config.k1 * 2,
        };
        Ok(LinearBase {
            k: config.k,
            k1: config.k1,
            params: vec![0.0; affine.param_len()],
            affine,
        })
    }
}

impl Network for LinearBase {
    fn kind(&self) -> ModelKind {
        ModelKind::Base
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn batch_loss_grad(&self, params: &[f64], batch: &[&PreparedSample]) -> Result<BatchResult> {
        check_params(params.len(), self.params.len(), batch)?;
        let parts: Vec<Result<(f64, Prediction, Vec<f64>)>> = batch
            .par_iter()
            .map(|s| {
                check_patch(&s.patch, self.k, self.k1)?;
                let x = s.patch.values();
                let logits = self.affine.logits(params, x);
                let (loss, _, g) = softmax_xent(&logits, s.label);
                let mut grad = vec![0.0; params.len()];
                self.affine.backward(params, x, &g, &mut grad);
                Ok((loss, predict_from_logits(&logits), grad))
            })
            .collect();
        finish(parts, params.len())
    }

    fn predict(&self, sample: &PreparedSample) -> Result<Prediction> {
        check_patch(&sample.patch, self.k, self.k1)?;
        Ok(predict_from_logits(&self.affine.logits(&self.params, sample.patch.values())))
    }

    fn representation(&self, sample: &PreparedSample) -> Result<Vec<f64>> {
        check_patch(&sample.patch, self.k, self.k1)?;
        Ok(sample.patch.values().to_vec())
    }
}

fn finish(parts: Vec<Result<(f64, Prediction, Vec<f64>)>>, len: usize) -> Result<BatchResult> {
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let n = parts.len() as f64;
    let loss = parts.iter().map(|p| p.0).sum::<f64>() / n;
    let predictions = parts.iter().map(|p| p.1.clone()).collect();
    let grad = ordered_sum(parts.into_iter().map(|p| p.2).collect(), len, 1.0 / n);
    Ok(BatchResult {
        loss,
        grad,
        predictions,
        norm_stats: None,
    })
}

/// Both FFC branches feeding an affine softmax classifier directly.
///
/// Parameter layout: LAI kernel, LCC kernel, affine.
#[derive(Debug, Clone)]
pub struct FfcOnly {
    k: usize,
    k1: usize,
    ffc: FfcLayer,
    affine: Affine,
    params: Vec<f64>,
}

impl FfcOnly {
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        let geom = config.ffc_geometry()?;
        let ffc = FfcLayer::new(geom.clone())?;
        let affine = Affine {
            inputs: 2 * geom.feature_len(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = FourierKernel::random(&geom, &mut rng).to_params();
        params.extend(FourierKernel::random(&geom, &mut rng).to_params());
        params.extend(vec![0.0; affine.param_len()]);
        Ok(FfcOnly {
            k: config.k,
            k1: config.k1,
            ffc,
            affine,
            params,
        })
    }

    fn features(&self, params: &[f64], s: &PreparedSample) -> (Vec<f64>, [FfcTrace; 2]) {
        let p = self.ffc.geometry.param_len();
        let (mut a, ta) = self.ffc.forward_spectra(&params[..p], &s.spectra[0]);
        let (b, tb) = self.ffc.forward_spectra(&params[p..2 * p], &s.spectra[1]);
        a.extend(b);
        (a, [ta, tb])
    }
}

impl Network for FfcOnly {
    fn kind(&self) -> ModelKind {
        ModelKind::FfcOnly
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn batch_loss_grad(&self, params: &[f64], batch: &[&PreparedSample]) -> Result<BatchResult> {
        check_params(params.len(), self.params.len(), batch)?;
        let p = self.ffc.geometry.param_len();
        let half = self.ffc.geometry.feature_len();
        let parts: Vec<Result<(f64, Prediction, Vec<f64>)>> = batch
            .par_iter()
            .map(|s| {
                check_patch(&s.patch, self.k, self.k1)?;
                let (x, traces) = self.features(params, s);
                let logits = self.affine.logits(&params[2 * p..], &x);
                let (loss, _, g) = softmax_xent(&logits, s.label);
                let mut grad = vec![0.0; params.len()];
                let (g_ffc, g_aff) = grad.split_at_mut(2 * p);
                let gx = self.affine.backward(&params[2 * p..], &x, &g, g_aff);
                let (ga, gb) = g_ffc.split_at_mut(p);
                self.ffc.backward_spectra(&params[..p], &traces[0], &gx[..half], ga);
                self.ffc.backward_spectra(&params[p..2 * p], &traces[1], &gx[half..], gb);
                Ok((loss, predict_from_logits(&logits), grad))
            })
            .collect();
        finish(parts, params.len())
    }

    fn predict(&self, sample: &PreparedSample) -> Result<Prediction> {
        check_patch(&sample.patch, self.k, self.k1)?;
        let p = self.ffc.geometry.param_len();
        let (x, _) = self.features(&self.params, sample);
        Ok(predict_from_logits(&self.affine.logits(&self.params[2 * p..], &x)))
    }

    /// Concatenated FFC features of both branches.
    fn representation(&self, sample: &PreparedSample) -> Result<Vec<f64>> {
        check_patch(&sample.patch, self.k, self.k1)?;
        Ok(self.features(&self.params, sample).0)
    }
}

/// Same-padded temporal convolution, activations stored `[channel][time]`.
#[derive(Debug, Clone, Copy)]
struct Conv1d {
    inputs: usize,
    outputs: usize,
    kernel: usize,
}

impl Conv1d {
    fn param_len(&self) -> usize {
        self.outputs * self.inputs * self.kernel + self.outputs
    }

    fn w(&self, o: usize, i: usize, k: usize) -> usize {
        (o * self.inputs + i) * self.kernel + k
    }

    fn forward(&self, params: &[f64], x: &[f64], len: usize) -> Vec<f64> {
        let bias = &params[self.outputs * self.inputs * self.kernel..];
        let half = (self.kernel / 2) as isize;
        let mut out = vec![0.0; self.outputs * len];
        for o in 0..self.outputs {
            let row = &mut out[o * len..(o + 1) * len];
            row.iter_mut().for_each(|v| *v = bias[o]);
            for i in 0..self.inputs {
                let xi = &x[i * len..(i + 1) * len];
                for k in 0..self.kernel {
                    let w = params[self.w(o, i, k)];
                    let shift = k as isize - half;
                    for (t, r) in row.iter_mut().enumerate() {
                        let s = t as isize + shift;
                        if s >= 0 && (s as usize) < len {
                            *r += w * xi[s as usize];
                        }
                    }
                }
            }
        }
        out
    }

    fn backward(&self, params: &[f64], x: &[f64], g: &[f64], len: usize, grad: &mut [f64]) -> Vec<f64> {
        let boff = self.outputs * self.inputs * self.kernel;
        let half = (self.kernel / 2) as isize;
        let mut gx = vec![0.0; self.inputs * len];
        for o in 0..self.outputs {
            let go = &g[o * len..(o + 1) * len];
            grad[boff + o] += go.iter().sum::<f64>();
            for i in 0..self.inputs {
                let xi = &x[i * len..(i + 1) * len];
                for k in 0..self.kernel {
                    let wi = self.w(o, i, k);
                    let w = params[wi];
                    let shift = k as isize - half;
                    let mut gw = 0.0;
                    for (t, &gt) in go.iter().enumerate() {
                        let s = t as isize + shift;
                        if s >= 0 && (s as usize) < len {
                            gw += gt * xi[s as usize];
                            gx[i * len + s as usize] += gt * w;
                        }
                    }
                    grad[wi] += gw;
                }
            }
        }
        gx
    }
}

/// Fully connected layer, weights `[out][in]`.
#[derive(Debug, Clone, Copy)]
struct Dense {
    inputs: usize,
    outputs: usize,
}

impl Dense {
    fn param_len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let (w, b) = params.split_at(self.outputs * self.inputs);
        (0..self.outputs)
            .map(|o| {
                b[o] + w[o * self.inputs..(o + 1) * self.inputs]
                    .iter()
                    .zip(x)
                    .map(|(a, v)| a * v)
                    .sum::<f64>()
            })
            .collect()
    }

    fn backward(&self, params: &[f64], x: &[f64], g: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let n = self.inputs;
        let mut gx = vec![0.0; n];
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            for i in 0..n {
                grad[o * n + i] += go * x[i];
                gx[i] += go * params[o * n + i];
            }
            grad[self.outputs * n + o] += go;
        }
        gx
    }
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn relu_mask(g: &mut [f64], activated: &[f64]) {
    g.iter_mut().zip(activated).for_each(|(g, a)| {
        if *a <= 0.0 {
            *g = 0.0
        }
    });
}

/// Temporal CNN baseline: four convolutions with ReLU, a ReLU hidden layer,
/// and a softmax output. Input channels are `pixel * 2 + channel`.
#[derive(Debug, Clone)]
pub struct Cnn {
    k: usize,
    k1: usize,
    convs: Vec<Conv1d>,
    hidden: Dense,
    output: Dense,
    params: Vec<f64>,
}

impl Cnn {
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        if config.cnn_kernel_len.is_multiple_of(2) {
            return Err(Error::Config("cnn_kernel_len must be odd".into()));
        }
        let mut inputs = config.k * config.k * 2;
        let mut convs = Vec::new();
        for &w in &config.cnn_widths {
            convs.push(Conv1d {
                inputs,
                outputs: w,
                kernel: config.cnn_kernel_len,
            });
            inputs = w;
        }
        let hidden = Dense {
            inputs: inputs * config.k1,
            outputs: config.cnn_hidden,
        };
        let output = Dense {
            inputs: config.cnn_hidden,
            outputs: NUM_CLASSES,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        let mut he = |fan_in: usize, weights: usize, biases: usize, params: &mut Vec<f64>| {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            params.extend((0..weights).map(|_| d.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, biases));
        };
        for c in &convs {
            he(c.inputs * c.kernel, c.outputs * c.inputs * c.kernel, c.outputs, &mut params);
        }
        he(hidden.inputs, hidden.outputs * hidden.inputs, hidden.outputs, &mut params);
        he(output.inputs, output.outputs * output.inputs, output.outputs, &mut params);
        Ok(Cnn {
            k: config.k,
            k1: config.k1,
            convs,
            hidden,
            output,
            params,
        })
    }

    fn input(&self, s: &PreparedSample) -> Vec<f64> {
        // [pixel][step][channel] -> [pixel * 2 + channel][step]
        let v = s.patch.values();
        let t = self.k1;
        let mut out = vec![0.0; v.len()];
        for (idx, &x) in v.iter().enumerate() {
            let ch = idx % 2;
            let step = (idx / 2) % t;
            let pixel = idx / (2 * t);
            out[(pixel * 2 + ch) * t + step] = x;
        }
        out
    }

    /// Activations after every layer, input first; the last entry is the logits.
    fn activations(&self, params: &[f64], x: Vec<f64>) -> Vec<Vec<f64>> {
        let mut acts = vec![x];
        let mut off = 0;
        for c in &self.convs {
            let mut y = c.forward(&params[off..off + c.param_len()], acts.last().expect("input"), self.k1);
            relu(&mut y);
            acts.push(y);
            off += c.param_len();
        }
        let mut h = self
            .hidden
            .forward(&params[off..off + self.hidden.param_len()], acts.last().expect("conv"));
        relu(&mut h);
        acts.push(h);
        off += self.hidden.param_len();
        let logits = self.output.forward(&params[off..], acts.last().expect("hidden"));
        acts.push(logits);
        acts
    }

    fn logits(acts: &[Vec<f64>]) -> [f64; NUM_CLASSES] {
        let l = acts.last().expect("logits");
        [l[0], l[1], l[2]]
    }
}

impl Network for Cnn {
    fn kind(&self) -> ModelKind {
        ModelKind::Cnn
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn batch_loss_grad(&self, params: &[f64], batch: &[&PreparedSample]) -> Result<BatchResult> {
        check_params(params.len(), self.params.len(), batch)?;
        let parts: Vec<Result<(f64, Prediction, Vec<f64>)>> = batch
            .par_iter()
            .map(|s| {
                check_patch(&s.patch, self.k, self.k1)?;
                let acts = self.activations(params, self.input(s));
                let logits = Cnn::logits(&acts);
                let (loss, _, g) = softmax_xent(&logits, s.label);
                let mut grad = vec![0.0; params.len()];
                let nc = self.convs.len();
                let out_off = params.len() - self.output.param_len();
                let hid_off = out_off - self.hidden.param_len();
                let mut gh = self.output.backward(
                    &params[out_off..],
                    &acts[nc + 1],
                    &g,
                    &mut grad[out_off..],
                );
                relu_mask(&mut gh, &acts[nc + 1]);
                let mut gx = self.hidden.backward(
                    &params[hid_off..out_off],
                    &acts[nc],
                    &gh,
                    &mut grad[hid_off..out_off],
                );
                let mut end = hid_off;
                for (li, c) in self.convs.iter().enumerate().rev() {
                    let start = end - c.param_len();
                    relu_mask(&mut gx, &acts[li + 1]);
                    gx = c.backward(&params[start..end], &acts[li], &gx, self.k1, &mut grad[start..end]);
                    end = start;
                }
                Ok((loss, predict_from_logits(&logits), grad))
            })
            .collect();
        finish(parts, params.len())
    }

    fn predict(&self, sample: &PreparedSample) -> Result<Prediction> {
        check_patch(&sample.patch, self.k, self.k1)?;
        let acts = self.activations(&self.params, self.input(sample));
        Ok(predict_from_logits(&Cnn::logits(&acts)))
    }

    /// Hidden-layer activations.
    fn representation(&self, sample: &PreparedSample) -> Result<Vec<f64>> {
        check_patch(&sample.patch, self.k, self.k1)?;
        let mut acts = self.activations(&self.params, self.input(sample));
        acts.pop();
        Ok(acts.pop().expect("hidden layer"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::prepare;
    use crate::vi::AgentPatch;

    #[test]
    fn zero_input_base_is_uniform() {
        let cfg = Config::miniature();
        let net = LinearBase::new(&cfg).unwrap();
        let s = prepare(vec![(AgentPatch::zeros(cfg.k, cfg.k1).unwrap(), 0)]).unwrap();
        let p = net.predict(&s[0]).unwrap();
        assert!(p.tie);
        for l in p.lengths {
            assert!((l - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weight_cnn_is_uniform() {
        let cfg = Config::miniature();
        let mut net = Cnn::new(&cfg).unwrap();
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let patch = AgentPatch::new(cfg.k, cfg.k1, (0..cfg.k1 * 2).map(|i| i as f64).collect()).unwrap();
        let s = prepare(vec![(patch, 1)]).unwrap();
        let p = net.predict(&s[0]).unwrap();
        assert!(p.tie);
    }
}
