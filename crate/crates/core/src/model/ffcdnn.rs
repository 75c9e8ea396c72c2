use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    check_patch, classify, margin_loss_grad, ordered_sum, prepare_one, BatchResult, LossMargins,
    ModelKind, Network, Prediction, PreparedSample,
};
use crate::capsule::{
    ClassCapsules, Normalizer, PrimaryCapsules, PrimaryLayout, Router, RoutingState, RunningStats,
};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::ffc::{FfcLayer, FourierKernel};
use crate::numerics::FftPlan;
use crate::vi::AgentPatch;

/// Everything the full network computes for one sample at inference time.
#[derive(Debug, Clone)]
pub struct FfcdnnOutput {
    /// Raw FFC features, LAI branch then LCC branch, each `[pixel][band]`.
    pub features: Vec<f64>,
    pub primary: PrimaryCapsules,
    pub capsules: ClassCapsules,
    pub routing: RoutingState,
    pub prediction: Prediction,
}

/// Per-sample loss, prediction, capsule-input gradient and router-parameter gradient.
type Routed = (f64, Prediction, Vec<f64>, Vec<f64>);

/// Two FFC branches, normalization, primary grouping, dynamic routing, and
/// the capsule-length classifier.
///
/// Parameter layout: LAI kernel, LCC kernel, normalization affine, routing transforms.
#[derive(Debug, Clone)]
pub struct Ffcdnn {
    config: Config,
    ffc: FfcLayer,
    norm: Normalizer,
    layout: PrimaryLayout,
    router: Router,
    margins: LossMargins,
    params: Vec<f64>,
    stats: RunningStats,
    offsets: [usize; 5],
}

impl Ffcdnn {
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        let geom = config.ffc_geometry()?;
        let ffc = FfcLayer::new(geom.clone())?;
        let layout = config.primary_layout()?;
        let norm = Normalizer {
            dim: layout.feature_len(),
        };
        let router = Router::new(
            layout.count(),
            super::NUM_CLASSES,
            config.d_p,
            config.d_c,
            config.routing_iters,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = FourierKernel::random(&geom, &mut rng).to_params();
        params.extend(FourierKernel::random(&geom, &mut rng).to_params());
        params.extend(norm.identity_params());
        params.extend(router.init_params(&mut rng));
        let p = geom.param_len();
        let offsets = [0, p, 2 * p, 2 * p + norm.param_len(), params.len()];
        Ok(Ffcdnn {
            config: config.clone(),
            ffc,
            stats: RunningStats::new(norm.dim),
            norm,
            layout,
            router,
            margins: LossMargins::from(config),
            params,
            offsets,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn layout(&self) -> &PrimaryLayout {
        &self.layout
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    fn slice<'a>(&self, params: &'a [f64], part: usize) -> &'a [f64] {
        &params[self.offsets[part]..self.offsets[part + 1]]
    }

    fn features(&self, params: &[f64], s: &PreparedSample) -> (Vec<f64>, [crate::ffc::FfcTrace; 2]) {
        let (mut a, ta) = self.ffc.forward_spectra(self.slice(params, 0), &s.spectra[0]);
        let (b, tb) = self.ffc.forward_spectra(self.slice(params, 1), &s.spectra[1]);
        a.extend(b);
        (a, [ta, tb])
    }

    /// Inference-mode pass exposing every intermediate.
    pub fn encode(&self, sample: &PreparedSample) -> Result<FfcdnnOutput> {
        check_patch(&sample.patch, self.config.k, self.config.k1)?;
        let (features, _) = self.features(&self.params, sample);
        let normed = self
            .norm
            .forward_eval(self.slice(&self.params, 2), &self.stats, &features);
        let u = self.layout.group(&normed);
        let (capsules, routing, _) = self.router.forward(self.slice(&self.params, 3), &u);
        let prediction = classify(&capsules);
        Ok(FfcdnnOutput {
            features,
            primary: PrimaryCapsules {
                dim: self.layout.d_p,
                values: u,
                sources: self.layout.sources(),
            },
            capsules,
            routing,
            prediction,
        })
    }

    /// Classifies one raw patch.
    pub fn forward(&self, patch: &AgentPatch) -> Result<(ClassCapsules, Prediction)> {
        check_patch(patch, self.config.k, self.config.k1)?;
        let plan = FftPlan::new(patch.steps())?;
        let s = prepare_one(patch.clone(), 0, &plan)?;
        let out = self.encode(&s)?;
        Ok((out.capsules, out.prediction))
    }

    pub fn running_stats(&self) -> &RunningStats {
        &self.stats
    }
}

impl Network for Ffcdnn {
    fn kind(&self) -> ModelKind {
        ModelKind::Full
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn batch_loss_grad(&self, params: &[f64], batch: &[&PreparedSample]) -> Result<BatchResult> {
        if params.len() != self.params.len() {
            return Err(Error::dim("parameter vector has the wrong length"));
        }
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        for s in batch {
            check_patch(&s.patch, self.config.k, self.config.k1)?;
        }
        let forward: Vec<_> = batch.par_iter().map(|s| self.features(params, s)).collect();
        let feats: Vec<Vec<f64>> = forward.iter().map(|(f, _)| f.clone()).collect();
        let (normed, ntrace) = self.norm.forward_train(self.slice(params, 2), &feats)?;

        let router_params = self.slice(params, 3);
        let routed: Vec<Result<Routed>> = batch
            .par_iter()
            .zip(&normed)
            .map(|(s, x)| {
                let u = self.layout.group(x);
                let (caps, _, trace) = self.router.forward(router_params, &u);
                let (loss, g_caps) = margin_loss_grad(&caps, s.label, &self.margins)?;
                let mut g_router = vec![0.0; self.router.param_len()];
                let g_u = self.router.backward(router_params, &u, &trace, &g_caps, &mut g_router);
                Ok((loss, classify(&caps), self.layout.ungroup(&g_u), g_router))
            })
            .collect();
        let routed = routed.into_iter().collect::<Result<Vec<_>>>()?;

        let n = batch.len() as f64;
        let loss = routed.iter().map(|r| r.0).sum::<f64>() / n;
        let predictions = routed.iter().map(|r| r.1.clone()).collect();
        let g_normed: Vec<Vec<f64>> = routed.iter().map(|r| r.2.clone()).collect();
        let router_grad = ordered_sum(routed.into_iter().map(|r| r.3).collect(), self.router.param_len(), 1.0);

        let mut norm_grad = vec![0.0; self.norm.param_len()];
        let g_feats = self
            .norm
            .backward(self.slice(params, 2), &ntrace, &g_normed, &mut norm_grad);

        let half = self.ffc.geometry.feature_len();
        let plen = self.ffc.geometry.param_len();
        let ffc_parts: Vec<Vec<f64>> = forward
            .par_iter()
            .zip(g_feats.par_iter())
            .map(|((_, traces), g)| {
                let mut grad = vec![0.0; 2 * plen];
                let (ga, gb) = grad.split_at_mut(plen);
                self.ffc
                    .backward_spectra(self.slice(params, 0), &traces[0], &g[..half], ga);
                self.ffc
                    .backward_spectra(self.slice(params, 1), &traces[1], &g[half..], gb);
                grad
            })
            .collect();
        let ffc_grad = ordered_sum(ffc_parts, 2 * plen, 1.0);

        let mut grad = ffc_grad;
        grad.extend(norm_grad);
        grad.extend(router_grad);
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(BatchResult {
            loss,
            grad,
            predictions,
            norm_stats: Some((ntrace.batch_mean, ntrace.batch_var)),
        })
    }

    fn absorb_stats(&mut self, stats: &(Vec<f64>, Vec<f64>)) {
        self.stats.update(&stats.0, &stats.1, self.config.norm_momentum);
    }

    fn predict(&self, sample: &PreparedSample) -> Result<Prediction> {
        Ok(self.encode(sample)?.prediction)
    }

    /// Routed class capsules.
    fn representation(&self, sample: &PreparedSample) -> Result<Vec<f64>> {
        Ok(self.encode(sample)?.capsules.values)
    }

    fn state(&self) -> Vec<f64> {
        let mut s = self.stats.mean.clone();
        s.extend(&self.stats.var);
        s
    }

    fn set_state(&mut self, state: &[f64]) -> Result<()> {
        let d = self.norm.dim;
        if state.len() != 2 * d {
            return Err(Error::ModelFormat(format!(
                "normalization state has {} values, expected {}",
                state.len(),
                2 * d
            )));
        }
        self.stats.mean = state[..d].to_vec();
        self.stats.var = state[d..].to_vec();
        Ok(())
    }
}
