//! Central-difference checks of every analytic gradient in the network.

use ffcdnn::capsule::{squash, squash_backward, ClassCapsules, Normalizer, Router};
use ffcdnn::config::Config;
use ffcdnn::ffc::{FfcLayer, FourierKernel};
use ffcdnn::model::{build, margin_loss_grad, prepare, LossMargins, ModelKind, PreparedSample};
use ffcdnn::numerics::{grad_check, FnOp, Tensor};
use ffcdnn::vi::AgentPatch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const POINTS: u64 = 5;

fn gauss(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (rng.gen::<f64>() * 2.0 - 1.0)).collect()
}

fn check(name: &str, f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64]) -> Vec<f64>, x: Vec<f64>, eps: f64) -> f64 {
    let n = x.len();
    let op = FnOp {
        value: |t: &Tensor| Ok(f(t.data())),
        gradient: |t: &Tensor| Tensor::new(vec![n], g(t.data())),
    };
    let err = grad_check(&op, &Tensor::new(vec![n], x).unwrap(), eps)
        .unwrap_or_else(|e| panic!("{name}: {e}"));
    assert!(err <= TOL, "{name}: relative error {err:e}");
    err
}

fn patch(rng: &mut ChaCha8Rng, cfg: &Config) -> AgentPatch {
    let n = cfg.k * cfg.k * cfg.k1 * 2;
    AgentPatch::new(cfg.k, cfg.k1, (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn batch(rng: &mut ChaCha8Rng, cfg: &Config, n: usize) -> Vec<PreparedSample> {
    prepare((0..n).map(|i| (patch(rng, cfg), i % 3)).collect()).unwrap()
}

#[test]
fn linear_map_is_exact() {
    let err = check("3x", |x| 3.0 * x[0], |_| vec![3.0], vec![0.7], 1e-5);
    assert!(err <= 1e-10);
}

#[test]
fn squash_gradient() {
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = gauss(&mut rng, 8, 1.0);
        let wf = w.clone();
        check(
            "squash",
            move |u| squash(u).iter().zip(&wf).map(|(a, b)| a * b).sum(),
            move |u| squash_backward(u, &w),
            gauss(&mut rng, 8, 1.5),
            1e-5,
        );
    }
}

#[test]
fn ffc_layer_gradients() {
    let cfg = Config::default();
    let geom = cfg.ffc_geometry().unwrap();
    let layer = FfcLayer::new(geom.clone()).unwrap();
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let params = FourierKernel::random(&geom, &mut rng).to_params();
        let channel = gauss(&mut rng, geom.positions() * geom.steps, 1.0);
        let w = gauss(&mut rng, geom.feature_len(), 1.0);

        let (p1, w1) = (params.clone(), w.clone());
        let value = |x: &[f64]| -> f64 {
            let (f, _) = layer.forward(&p1, x).unwrap();
            f.values.iter().zip(&w1).map(|(a, b)| a * b).sum()
        };
        let (p2, w2) = (params.clone(), w.clone());
        let grad = |x: &[f64]| -> Vec<f64> {
            let (_, t) = layer.forward(&p2, x).unwrap();
            layer.backward(&p2, &t, &w2).unwrap().input
        };
        check("ffc input", value, grad, channel.clone(), 1e-6);

        let (c1, w1) = (channel.clone(), w.clone());
        let value = |p: &[f64]| -> f64 {
            let (f, _) = layer.forward(p, &c1).unwrap();
            f.values.iter().zip(&w1).map(|(a, b)| a * b).sum()
        };
        let grad = |p: &[f64]| -> Vec<f64> {
            let (_, t) = layer.forward(p, &channel).unwrap();
            layer.backward(p, &t, &w).unwrap().params
        };
        check("ffc params", value, grad, params, 1e-6);
    }
}

#[test]
fn normalization_gradients() {
    let norm = Normalizer { dim: 6 };
    let b = 5;
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = gauss(&mut rng, b * 6, 2.0);
        let mut params = norm.identity_params();
        params.iter_mut().for_each(|p| *p += 0.3 * (rng.gen::<f64>() - 0.5));
        let w: Vec<Vec<f64>> = (0..b).map(|_| gauss(&mut rng, 6, 1.0)).collect();
        let rows = |x: &[f64]| -> Vec<Vec<f64>> { x.chunks(6).map(<[f64]>::to_vec).collect() };
        let project = |y: &[Vec<f64>]| -> f64 {
            y.iter().zip(&w).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>()).sum()
        };

        let value = |x: &[f64]| project(&norm.forward_train(&params, &rows(x)).unwrap().0);
        let grad = |x: &[f64]| -> Vec<f64> {
            let (_, t) = norm.forward_train(&params, &rows(x)).unwrap();
            let mut gp = vec![0.0; norm.param_len()];
            norm.backward(&params, &t, &w, &mut gp).concat()
        };
        check("normalization input", value, grad, x.clone(), 1e-5);

        let value = |p: &[f64]| project(&norm.forward_train(p, &rows(&x)).unwrap().0);
        let grad = |p: &[f64]| -> Vec<f64> {
            let (_, t) = norm.forward_train(p, &rows(&x)).unwrap();
            let mut gp = vec![0.0; norm.param_len()];
            norm.backward(p, &t, &w, &mut gp);
            gp
        };
        check("normalization params", value, grad, params.clone(), 1e-5);
    }
}

#[test]
fn routing_gradients() {
    let router = Router::new(6, 3, 4, 5, 3).unwrap();
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let params: Vec<f64> = router.init_params(&mut rng).iter().map(|p| p * 4.0).collect();
        let u = gauss(&mut rng, 6 * 4, 1.0);
        let w = gauss(&mut rng, 3 * 5, 1.0);
        let dot = |v: &[f64]| v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();

        let value = |u: &[f64]| dot(&router.forward(&params, u).0.values);
        let grad = |u: &[f64]| {
            let (_, _, t) = router.forward(&params, u);
            let mut gp = vec![0.0; router.param_len()];
            router.backward(&params, u, &t, &w, &mut gp)
        };
        check("routing input", value, grad, u.clone(), 1e-6);

        let value = |p: &[f64]| dot(&router.forward(p, &u).0.values);
        let grad = |p: &[f64]| {
            let (_, _, t) = router.forward(p, &u);
            let mut gp = vec![0.0; router.param_len()];
            router.backward(p, &u, &t, &w, &mut gp);
            gp
        };
        check("routing params", value, grad, params.clone(), 1e-6);
    }
}

#[test]
fn classifier_loss_gradient() {
    let m = LossMargins::default();
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let v = gauss(&mut rng, 3 * 4, 0.5);
        let label = (seed % 3) as usize;
        let caps = |v: &[f64]| ClassCapsules { dim: 4, values: v.to_vec() };
        check(
            "margin loss",
            |v| margin_loss_grad(&caps(v), label, &m).unwrap().0,
            |v| margin_loss_grad(&caps(v), label, &m).unwrap().1,
            v,
            1e-6,
        );
    }
}

/// Relative check on every coordinate outside `null`; coordinates in `null`
/// are directions the loss is invariant to, checked to an absolute bound.
fn network_check(kind: ModelKind, cfg: &Config, seed_base: u64, eps: f64, null: &[std::ops::Range<usize>]) {
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_base + seed);
        let mut c = cfg.clone();
        c.seed = seed_base + seed;
        let net = build(kind, &c).unwrap();
        let mut params = net.params().to_vec();
        // Move zero-initialised weights off the origin.
        params.iter_mut().for_each(|p| *p += 0.2 * (rng.gen::<f64>() - 0.5));
        for r in null {
            params[r.clone()].iter_mut().for_each(|p| *p = 0.0);
        }
        let data = batch(&mut rng, &c, 4);
        let refs: Vec<&PreparedSample> = data.iter().collect();
        let free: Vec<usize> = (0..params.len()).filter(|i| !null.iter().any(|r| r.contains(i))).collect();
        let embed = |sub: &[f64]| {
            let mut p = params.clone();
            free.iter().zip(sub).for_each(|(&i, &v)| p[i] = v);
            p
        };
        let loss = |p: &[f64]| net.batch_loss_grad(p, &refs).unwrap().loss;
        let grad = |p: &[f64]| net.batch_loss_grad(p, &refs).unwrap().grad;
        check(
            kind.name(),
            |sub| loss(&embed(sub)),
            |sub| {
                let g = grad(&embed(sub));
                free.iter().map(|&i| g[i]).collect()
            },
            free.iter().map(|&i| params[i]).collect(),
            eps,
        );
        let g = grad(&params);
        for i in null.iter().flat_map(|r| r.clone()) {
            let h = 1e-4;
            let (mut a, mut b) = (params.clone(), params.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!(g[i].abs() < 1e-12 && fd.abs() < 1e-9, "{}: null direction {i}: {} vs {fd}", kind.name(), g[i]);
        }
    }
}

/// FFC bias blocks of both branches. With zero bias every magnitude passes
/// the ReLU, so a bias shift moves a feature uniformly across the batch and
/// training-mode normalization cancels it.
fn ffc_bias_ranges(cfg: &Config) -> Vec<std::ops::Range<usize>> {
    let g = cfg.ffc_geometry().unwrap();
    let p = g.param_len();
    let b = g.positions() * g.bins();
    vec![2 * b..p, p + 2 * b..2 * p]
}

#[test]
fn cnn_gradient() {
    network_check(ModelKind::Cnn, &Config::miniature(), 500, 1e-6, &[]);
}

#[test]
fn full_model_gradient() {
    let cfg = Config::miniature();
    network_check(ModelKind::Full, &cfg, 600, 1e-4, &ffc_bias_ranges(&cfg));
}

#[test]
fn ablation_gradients() {
    network_check(ModelKind::Base, &Config::miniature(), 700, 1e-6, &[]);
    network_check(ModelKind::FfcOnly, &Config::miniature(), 800, 1e-6, &[]);
}
