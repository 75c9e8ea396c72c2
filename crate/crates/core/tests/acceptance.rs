//! Acceptance suite. Prints one `criterion N: PASS|FAIL ...` line per
//! criterion, then fails if any criterion failed.
//!
//! Run alone with `cargo test -p ffcdnn --test acceptance -- --nocapture`.

mod common;

use std::time::Instant;

use common::*;
use ffcdnn::bench;
use ffcdnn::capsule::{norm, squash, squash_backward, Router};
use ffcdnn::config::Config;
use ffcdnn::explain::{band_r2, encode_all};
use ffcdnn::ffc::{FfcLayer, FourierKernel};
use ffcdnn::model::io::ModelFile;
use ffcdnn::model::{build, evaluate, prepare, prepare_one, train, Ffcdnn, ModelKind, Network, PreparedSample, StressClass};
use ffcdnn::numerics::dft::circular_convolve_direct;
use ffcdnn::numerics::{dft, grad_check, idft, FftPlan, FnOp, Spectrum, Tensor};
use ffcdnn::synth::{generate, SynthSample};
use ffcdnn::vi::AgentPatch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRAIN: usize = 5000;
const TEST: usize = 1000;

struct Verdict {
    id: usize,
    pass: bool,
    detail: String,
}

fn verdict(id: usize, pass: bool, detail: impl Into<String>) -> Verdict {
    let v = Verdict { id, pass, detail: detail.into() };
    println!("criterion {}: {} {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    v
}

fn tables() -> Verdict {
    let bad: Vec<String> = REQUIRED
        .iter()
        .flat_map(|f| {
            let p = PRINTED.iter().find(|p| p.file == *f).unwrap();
            table_mismatches(p).into_iter().map(move |m| format!("{f} {m}"))
        })
        .collect();
    let detail = if bad.is_empty() {
        format!("{} tables reproduce OA/UA/PA within 0.05 pp and kappa within 0.001", REQUIRED.len())
    } else {
        bad.join("; ")
    };
    verdict(1, bad.is_empty(), detail)
}

fn dft_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst, mut worst_rt) = (0.0_f64, 0.0_f64);
    for n in [1, 2, 3, 7, 8, 13, 52, 64] {
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = dft(&x).unwrap();
            let o = brute_dft(&x);
            worst = worst.max(max_abs_diff(&s.bins, &o) / max_norm(&o).max(f64::MIN_POSITIVE));
            let back = idft(&s).unwrap();
            let scale = x.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
            worst_rt = worst_rt.max(x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale);
        }
    }
    verdict(
        2,
        worst <= 1e-9 && worst_rt <= 1e-9,
        format!("max relative error {worst:.2e} vs oracle, {worst_rt:.2e} round trip"),
    )
}

fn convolution() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0_f64;
    for trial in 0..100 {
        let n = [2, 3, 7, 8, 13, 52, 64][trial % 7];
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = hermitian_spectrum(&mut rng, n);
        let kernel = idft(&Spectrum::new(w.clone(), true)).unwrap();
        let lhs: Vec<f64> = dft(&x).unwrap().bins.iter().zip(&w).map(|(a, b)| (a * b).norm()).collect();
        let rhs: Vec<f64> = dft(&circular_convolve_direct(&x, &kernel))
            .unwrap()
            .bins
            .iter()
            .map(|c| c.norm() / n as f64)
            .collect();
        let scale = lhs.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(*v));
        worst = worst.max(lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale);
    }
    verdict(3, worst <= 1e-9, format!("max relative error {worst:.2e} over 100 instances"))
}

fn check(f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64]) -> Vec<f64>, x: Vec<f64>, eps: f64) -> f64 {
    let n = x.len();
    let op = FnOp {
        value: |t: &Tensor| Ok(f(t.data())),
        gradient: |t: &Tensor| Tensor::new(vec![n], g(t.data())),
    };
    grad_check(&op, &Tensor::new(vec![n], x).unwrap(), eps).unwrap()
}

fn gradients() -> Verdict {
    let (mut sq, mut ffc, mut full) = (0.0_f64, 0.0_f64, 0.0_f64);
    let cfg = Config::default();
    let geom = cfg.ffc_geometry().unwrap();
    let layer = FfcLayer::new(geom.clone()).unwrap();
    let mini = Config::miniature();
    let mg = mini.ffc_geometry().unwrap();
    // FFC biases are cancelled by training-mode normalization; the loss is flat along them.
    let (p, b) = (mg.param_len(), mg.positions() * mg.bins());
    let biases = [2 * b..p, p + 2 * b..2 * p];
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.5..1.5)).collect();
        sq = sq.max(check(
            |u| squash(u).iter().zip(&w).map(|(a, b)| a * b).sum(),
            |u| squash_backward(u, &w),
            u,
            1e-5,
        ));

        let params = FourierKernel::random(&geom, &mut rng).to_params();
        let x: Vec<f64> = (0..geom.positions() * geom.steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..geom.feature_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let value = |x: &[f64]| layer.forward(&params, x).unwrap().0.values.iter().zip(&up).map(|(a, b)| a * b).sum();
        let grad = |x: &[f64]| {
            let (_, t) = layer.forward(&params, x).unwrap();
            layer.backward(&params, &t, &up).unwrap().input
        };
        ffc = ffc.max(check(value, grad, x, 1e-6));

        let mut c = mini.clone();
        c.seed = 900 + seed;
        let net = build(ModelKind::Full, &c).unwrap();
        let mut params = net.params().to_vec();
        params.iter_mut().for_each(|p| *p += 0.2 * (rng.gen::<f64>() - 0.5));
        biases.iter().for_each(|r| params[r.clone()].iter_mut().for_each(|p| *p = 0.0));
        let n = mini.k * mini.k * mini.k1 * 2;
        let data = prepare(
            (0..4)
                .map(|i| (AgentPatch::new(mini.k, mini.k1, (0..n).map(|_| rng.gen()).collect()).unwrap(), i % 3))
                .collect(),
        )
        .unwrap();
        let refs: Vec<&PreparedSample> = data.iter().collect();
        let free: Vec<usize> = (0..params.len()).filter(|i| !biases.iter().any(|r| r.contains(i))).collect();
        let embed = |sub: &[f64]| {
            let mut q = params.clone();
            free.iter().zip(sub).for_each(|(&i, &v)| q[i] = v);
            q
        };
        full = full.max(check(
            |s| net.batch_loss_grad(&embed(s), &refs).unwrap().loss,
            |s| {
                let g = net.batch_loss_grad(&embed(s), &refs).unwrap().grad;
                free.iter().map(|&i| g[i]).collect()
            },
            free.iter().map(|&i| params[i]).collect(),
            1e-4,
        ));
    }
    let worst = sq.max(ffc).max(full);
    verdict(
        4,
        worst <= 1e-4,
        format!("5 points each: squash {sq:.1e}, FFC layer {ffc:.1e}, full network {full:.1e}"),
    )
}

fn capsules() -> Verdict {
    let half = norm(&squash(&[1.0, 0.0, 0.0]));
    let nine = norm(&squash(&[0.0, 3.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut sum_err, mut oracle_err) = (0.0_f64, 0.0_f64);
    let router = Router::new(32, 3, 8, 16, 3).unwrap();
    let small = Router::new(4, 3, 2, 2, 3).unwrap();
    for r in [&router, &small] {
        for _ in 0..20 {
            let params: Vec<f64> = r.init_params(&mut rng).iter().map(|p| 5.0 * p).collect();
            let u: Vec<f64> = (0..r.primaries * r.d_p).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (caps, _, trace) = r.forward(&params, &u);
            for c in &trace.couplings {
                for row in c.chunks(r.classes) {
                    sum_err = sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
                }
            }
            let (w, uu) = router_blocks(r, &params, &u);
            let (v, hist) = routing_oracle(&w, &uu, r.iterations);
            for h in 0..r.classes {
                for (a, b) in caps.vector(h).iter().zip(&v[h]) {
                    oracle_err = oracle_err.max((a - b).abs());
                }
            }
            for (t, c) in hist.iter().enumerate() {
                for (i, row) in c.iter().enumerate() {
                    for (h, x) in row.iter().enumerate() {
                        oracle_err = oracle_err.max((trace.couplings[t][i * r.classes + h] - x).abs());
                    }
                }
            }
        }
    }
    let pass = (half - 0.5).abs() < 1e-15 && (nine - 0.9).abs() < 1e-15 && sum_err <= 1e-12 && oracle_err <= 1e-12;
    verdict(
        5,
        pass,
        format!("squash {half} and {nine}; coupling sums within {sum_err:.1e}; routing vs oracle {oracle_err:.1e}"),
    )
}

fn accuracy(net: &dyn Network, samples: &[PreparedSample]) -> f64 {
    let p = evaluate(net, samples).unwrap();
    100.0 * p.iter().zip(samples).filter(|(p, s)| p.label.index() == s.label).count() as f64 / samples.len() as f64
}

struct Benchmark {
    cfg: Config,
    raw: Vec<SynthSample>,
    train: Vec<PreparedSample>,
    test: Vec<PreparedSample>,
    full: Ffcdnn,
    full_bytes: Vec<u8>,
}

fn benchmark() -> (Verdict, Benchmark) {
    let cfg = Config::default();
    let started = Instant::now();
    let raw = generate(&cfg, TRAIN + TEST).unwrap();
    let mut all = prepare(raw.iter().map(|s| (s.patch.clone(), s.label.index())).collect()).unwrap();
    let test = all.split_off(TRAIN);
    let train_set = all;
    let mut oa = Vec::new();
    for kind in [ModelKind::Base, ModelKind::FfcOnly] {
        let mut net = build(kind, &cfg).unwrap();
        train(net.as_mut(), &train_set, None, &cfg).unwrap();
        oa.push(accuracy(net.as_ref(), &test));
    }
    let mut full = Ffcdnn::new(&cfg).unwrap();
    train(&mut full, &train_set, None, &cfg).unwrap();
    oa.push(accuracy(&full, &test));
    let secs = started.elapsed().as_secs_f64();
    let pass = oa[2] >= 90.0 && oa[1] - oa[0] >= 5.0 && oa[2] - oa[1] >= 5.0 && secs < 600.0;
    let v = verdict(
        6,
        pass,
        format!(
            "test OA base {:.1}% < ffc {:.1}% < full {:.1}% ({TRAIN}/{TEST}, seed {}), {secs:.0} s",
            oa[0], oa[1], oa[2], cfg.seed
        ),
    );
    let full_bytes = ModelFile::capture(&full, &cfg).to_bytes();
    (v, Benchmark { cfg, raw, train: train_set, test, full, full_bytes })
}

fn band_study(b: &Benchmark) -> Verdict {
    let outs = encode_all(&b.full, &b.test).unwrap();
    let held = &b.raw[TRAIN..];
    let labels: Vec<StressClass> = held.iter().map(|s| s.label).collect();
    let sev: Vec<f64> = held.iter().map(|s| s.severity).collect();
    let mut parts = Vec::new();
    let mut pass = true;
    for class in [StressClass::YellowRust, StressClass::NitrogenDeficiency] {
        let r = band_r2(&b.full, &outs, &labels, &sev, class).unwrap();
        pass &= r.gap() >= 0.2;
        parts.push(format!(
            "{}: in-band {:.3} vs out-of-band {:.3} (gap {:.3})",
            class.name(),
            r.mean_in_band,
            r.mean_out_of_band,
            r.gap()
        ));
    }
    verdict(7, pass, parts.join("; "))
}

fn band_mask(b: &Benchmark) -> Verdict {
    let cfg = &b.cfg;
    let plan = FftPlan::new(cfg.k1).unwrap();
    let bins: Vec<usize> = (0..=cfg.k1 / 2).filter(|&j| j < cfg.band_low || j > cfg.band_high).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (mut worst, mut flips) = (0.0_f64, 0usize);
    for s in b.raw[TRAIN..].iter().take(100) {
        let mut values = s.patch.values().to_vec();
        inject_bins(&mut values, cfg.k1, &bins, 1.0, &mut rng);
        let clean = prepare_one(s.patch.clone(), 0, &plan).unwrap();
        let noisy = prepare_one(AgentPatch::new(cfg.k, cfg.k1, values).unwrap(), 0, &plan).unwrap();
        let (a, z) = (b.full.encode(&clean).unwrap(), b.full.encode(&noisy).unwrap());
        worst = worst.max(a.features.iter().zip(&z.features).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        flips += usize::from(a.prediction.label != z.prediction.label);
    }
    verdict(
        8,
        worst <= 1e-9 && flips == 0,
        format!("bins {bins:?} perturbed in 100 trials: max feature change {worst:.1e}, {flips} flips"),
    )
}

fn efficiency(b: &Benchmark) -> Verdict {
    let sizes = [16, 32, 64, 128, 256, 512, 1024, 2048, 4096];
    let report = bench::run(&sizes, 5, 15).unwrap();
    let crossover = report.crossover;
    let mut cfg = b.cfg.clone();
    cfg.epochs = 2;
    let mut secs = Vec::new();
    for kind in [ModelKind::Full, ModelKind::Cnn] {
        let mut net = build(kind, &cfg).unwrap();
        let t = Instant::now();
        train(net.as_mut(), &b.train, None, &cfg).unwrap();
        secs.push(t.elapsed().as_secs_f64());
    }
    let pass = crossover.is_some_and(|n| n <= 4096) && secs[0] < secs[1];
    verdict(
        9,
        pass,
        format!(
            "FFT crossover at N = {crossover:?}; {} epochs on {TRAIN} samples: FFCDNN {:.1} s, CNN {:.1} s ({:.1}x)",
            cfg.epochs,
            secs[0],
            secs[1],
            secs[1] / secs[0]
        ),
    )
}

fn determinism(b: &Benchmark) -> Verdict {
    let again = generate(&b.cfg, TRAIN + TEST).unwrap();
    let same_data = again.iter().zip(&b.raw).all(|(x, y)| {
        x.label == y.label
            && x.severity.to_bits() == y.severity.to_bits()
            && x.patch.values().iter().zip(y.patch.values()).all(|(p, q)| p.to_bits() == q.to_bits())
    });
    let mut full = Ffcdnn::new(&b.cfg).unwrap();
    train(&mut full, &b.train, None, &b.cfg).unwrap();
    let same_model = ModelFile::capture(&full, &b.cfg).to_bytes() == b.full_bytes;
    let same_preds = evaluate(&full, &b.test)
        .unwrap()
        .iter()
        .zip(&evaluate(&b.full, &b.test).unwrap())
        .all(|(p, q)| p.label == q.label && p.lengths.iter().zip(&q.lengths).all(|(a, c)| a.to_bits() == c.to_bits()));
    verdict(
        10,
        same_data && same_model && same_preds,
        format!("regenerated data identical: {same_data}; retrained model bytes identical: {same_model}; predictions identical: {same_preds}"),
    )
}

#[test]
fn acceptance() {
    let mut verdicts = vec![tables(), dft_oracle(), convolution(), gradients(), capsules()];
    let (v, bench) = benchmark();
    verdicts.push(v);
    verdicts.push(band_study(&bench));
    verdicts.push(band_mask(&bench));
    verdicts.push(efficiency(&bench));
    verdicts.push(determinism(&bench));
    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    println!("acceptance: {}/{} criteria pass", verdicts.len() - failed.len(), verdicts.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
