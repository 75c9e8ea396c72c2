//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

/// O(N^2) forward DFT with the 1/N factor.
pub fn brute_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                acc += v * Complex64::from_polar(1.0, ang);
            }
            acc / n as f64
        })
        .collect()
}

/// O(N^2) unnormalized inverse DFT.
pub fn brute_idft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|t| {
            x.iter()
                .enumerate()
                .map(|(k, &v)| v * Complex64::from_polar(1.0, 2.0 * PI * ((k * t) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

/// Random spectrum with `X[N-k] = conj(X[k])`, so its inverse is real.
pub fn hermitian_spectrum<R: Rng>(rng: &mut R, n: usize) -> Vec<Complex64> {
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..=n / 2 {
        let re = rng.gen_range(-1.0..1.0);
        let im = if k == 0 || 2 * k == n { 0.0 } else { rng.gen_range(-1.0..1.0) };
        w[k] = Complex64::new(re, im);
        if k != 0 {
            w[n - k] = w[k].conj();
        }
    }
    w
}

pub fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn max_norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

fn squash_ref(s: &[f64]) -> Vec<f64> {
    let n2: f64 = s.iter().map(|v| v * v).sum();
    if n2 == 0.0 {
        return vec![0.0; s.len()];
    }
    let scale = n2 / (1.0 + n2) / n2.sqrt();
    s.iter().map(|v| v * scale).collect()
}

/// Dynamic routing written as nested loops over explicit matrices.
/// `w[i][h]` is a `d_c x d_p` matrix, `u[i]` a `d_p` vector.
/// Returns the class capsules after the last iteration and the couplings of every iteration.
pub fn routing_oracle(w: &[Vec<Vec<Vec<f64>>>], u: &[Vec<f64>], iters: usize) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let np = u.len();
    let z = w[0].len();
    let dc = w[0][0].len();
    let mut u_hat = vec![vec![vec![0.0; dc]; z]; np];
    for i in 0..np {
        for h in 0..z {
            for r in 0..dc {
                let mut acc = 0.0;
                for c in 0..u[i].len() {
                    acc += w[i][h][r][c] * u[i][c];
                }
                u_hat[i][h][r] = acc;
            }
        }
    }
    let mut b = vec![vec![0.0; z]; np];
    let mut v = vec![vec![0.0; dc]; z];
    let mut history = Vec::new();
    for _ in 0..iters {
        let mut c = vec![vec![0.0; z]; np];
        for i in 0..np {
            let m = b[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = b[i].iter().map(|x| (x - m).exp()).sum();
            for h in 0..z {
                c[i][h] = (b[i][h] - m).exp() / denom;
            }
        }
        for h in 0..z {
            let mut s = vec![0.0; dc];
            for i in 0..np {
                for r in 0..dc {
                    s[r] += c[i][h] * u_hat[i][h][r];
                }
            }
            v[h] = squash_ref(&s);
        }
        for i in 0..np {
            for h in 0..z {
                let mut dot = 0.0;
                for r in 0..dc {
                    dot += u_hat[i][h][r] * v[h][r];
                }
                b[i][h] += dot;
            }
        }
        history.push(c);
    }
    (v, history)
}

/// Adds a cosine at each listed bin, with random amplitude and phase, to
/// every pixel series of a `[row][col][step][channel]` patch.
pub fn inject_bins<R: Rng>(values: &mut [f64], steps: usize, bins: &[usize], amplitude: f64, rng: &mut R) {
    for series in values.chunks_exact_mut(steps * 2) {
        for ch in 0..2 {
            for &j in bins {
                let a = amplitude * rng.gen_range(0.2..1.0);
                let ph = rng.gen_range(0.0..2.0 * PI);
                for t in 0..steps {
                    series[t * 2 + ch] += a * (2.0 * PI * (j * t) as f64 / steps as f64 + ph).cos();
                }
            }
        }
    }
}

/// One printed confusion table: overall accuracy, kappa and per-class
/// user's/producer's accuracy, in the order Healthy, YR, ND.
pub struct Printed {
    pub file: &'static str,
    pub oa: f64,
    pub kappa: f64,
    pub ua: [f64; 3],
    pub pa: [f64; 3],
}

pub const PRINTED: [Printed; 12] = [
    Printed { file: "table2_svm_train.csv", oa: 88.3, kappa: 0.824, ua: [87.9, 92.3, 84.6], pa: [88.9, 88.0, 88.1] },
    Printed { file: "table2_svm_validation.csv", oa: 79.7, kappa: 0.695, ua: [80.8, 84.1, 73.7], pa: [80.8, 82.8, 75.0] },
    Printed { file: "table2_cnn_train.csv", oa: 91.9, kappa: 0.877, ua: [90.2, 94.7, 90.4], pa: [91.7, 93.8, 89.9] },
    Printed { file: "table2_cnn_validation.csv", oa: 83.3, kappa: 0.749, ua: [86.3, 85.2, 78.3], pa: [84.5, 85.2, 80.4] },
    Printed { file: "table2_ffcdnn_train.csv", oa: 92.8, kappa: 0.891, ua: [92.3, 93.8, 92.1], pa: [93.3, 94.3, 90.5] },
    Printed { file: "table2_ffcdnn_validation.csv", oa: 87.5, kappa: 0.812, ua: [88.8, 88.5, 85.1], pa: [85.8, 89.8, 86.6] },
    Printed { file: "table3_svm_ningqiang.csv", oa: 45.6, kappa: 0.158, ua: [42.9, 66.7, 20.0], pa: [42.9, 50.0, 37.5] },
    Printed { file: "table3_svm_shunyi.csv", oa: 37.9, kappa: 0.036, ua: [40.0, 12.5, 54.5], pa: [36.4, 33.3, 40.0] },
    Printed { file: "table3_cnn_ningqiang.csv", oa: 57.9, kappa: 0.344, ua: [57.9, 78.3, 26.7], pa: [52.4, 64.3, 50.0] },
    Printed { file: "table3_cnn_shunyi.csv", oa: 55.2, kappa: 0.272, ua: [50.0, 33.3, 69.2], pa: [45.5, 66.7, 60.0] },
    Printed { file: "table3_ffcdnn_ningqiang.csv", oa: 80.7, kappa: 0.69, ua: [84.2, 92.3, 50.0], pa: [76.2, 85.7, 75.0] },
    Printed { file: "table3_ffcdnn_shunyi.csv", oa: 79.3, kappa: 0.644, ua: [75.0, 66.7, 85.7], pa: [81.8, 66.7, 80.0] },
];

/// Tables whose reproduction is an acceptance criterion.
pub const REQUIRED: [&str; 5] = [
    "table2_ffcdnn_train.csv",
    "table2_ffcdnn_validation.csv",
    "table2_cnn_train.csv",
    "table3_ffcdnn_ningqiang.csv",
    "table3_ffcdnn_shunyi.csv",
];

pub const PP_TOL: f64 = 0.05 + 1e-9;
pub const KAPPA_TOL: f64 = 0.001 + 1e-12;

/// Printed values of one table that the recomputed metrics miss, as
/// `"<quantity>: got <x>, printed <y>"`.
pub fn table_mismatches(p: &Printed) -> Vec<String> {
    let m = ffcdnn::eval::ConfusionMatrix::load(&fixture(&format!("tables/{}", p.file))).unwrap();
    let r = ffcdnn::eval::confusion_metrics(&m).unwrap();
    let mut out = Vec::new();
    let mut check = |what: String, got: Option<f64>, want: f64, tol: f64| match got {
        Some(g) if (g - want).abs() <= tol => {}
        g => out.push(format!("{what}: got {g:?}, printed {want}")),
    };
    check("OA".into(), Some(r.oa), p.oa, PP_TOL);
    check("kappa".into(), r.kappa, p.kappa, KAPPA_TOL);
    for c in 0..3 {
        check(format!("UA[{c}]"), r.ua[c], p.ua[c], PP_TOL);
        check(format!("PA[{c}]"), r.pa[c], p.pa[c], PP_TOL);
    }
    out
}

/// Transform blocks indexed `[primary][class][row][col]`.
pub type Blocks = Vec<Vec<Vec<Vec<f64>>>>;

/// Router parameters as `w[i][h][row][col]` and the input as `u[i]`.
pub fn router_blocks(
    router: &ffcdnn::capsule::Router,
    params: &[f64],
    u: &[f64],
) -> (Blocks, Vec<Vec<f64>>) {
    let (np, z, dc, dp) = (router.primaries, router.classes, router.d_c, router.d_p);
    let mut w = vec![vec![vec![vec![0.0; dp]; dc]; z]; np];
    for (i, wi) in w.iter_mut().enumerate() {
        for (h, wh) in wi.iter_mut().enumerate() {
            for (r, row) in wh.iter_mut().enumerate() {
                for (c, x) in row.iter_mut().enumerate() {
                    *x = params[((i * z + h) * dc + r) * dp + c];
                }
            }
        }
    }
    (w, u.chunks(dp).map(<[f64]>::to_vec).collect())
}
