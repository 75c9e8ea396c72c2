use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Leading canonical discriminant axes and the sample scores on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdaProjection {
    /// Unit-length axes in feature space, by decreasing ratio.
    pub axes: Vec<Vec<f64>>,
    /// Between-class over within-class scatter along each axis.
    pub ratios: Vec<f64>,
    /// Per sample, the centred features projected on each axis.
    pub scores: Vec<Vec<f64>>,
}

/// Canonical discriminant analysis keeping at most `axes` axes.
///
/// Within-class scatter is regularized by `1e-9 * trace / D` on the diagonal.
pub fn cda_project(features: &[Vec<f64>], labels: &[usize], axes: usize) -> Result<CdaProjection> {
    if features.len() != labels.len() {
        return Err(Error::dim("features and labels differ in length"));
    }
    let Some(d) = features.first().map(Vec::len) else {
        return Err(Error::InsufficientData("no samples".into()));
    };
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::dim("feature vectors must share a positive length"));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    let present: Vec<usize> = (0..classes).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::InsufficientData("discriminant analysis needs two classes".into()));
    }
    if present.iter().any(|&c| counts[c] < 2) {
        return Err(Error::InsufficientData("every present class needs two samples".into()));
    }

    let n = features.len() as f64;
    let rows: Vec<DVector<f64>> = features.iter().map(|f| DVector::from_column_slice(f)).collect();
    let mean = rows.iter().fold(DVector::zeros(d), |a, r| a + r) / n;
    let mut class_means = vec![DVector::<f64>::zeros(d); classes];
    for (r, &l) in rows.iter().zip(labels) {
        class_means[l] += r;
    }
    for &c in &present {
        class_means[c] /= counts[c] as f64;
    }
    let mut sw = DMatrix::<f64>::zeros(d, d);
    for (r, &l) in rows.iter().zip(labels) {
        let e = r - &class_means[l];
        sw.ger(1.0, &e, &e, 1.0);
    }
    let mut sb = DMatrix::<f64>::zeros(d, d);
    for &c in &present {
        let e = &class_means[c] - &mean;
        sb.ger(counts[c] as f64, &e, &e, 1.0);
    }
    let trace = sw.trace();
    let eps = if trace > 0.0 { 1e-9 * trace / d as f64 } else { 1e-12 };
    for i in 0..d {
        sw[(i, i)] += eps;
    }
    let chol = sw
        .cholesky()
        .ok_or_else(|| Error::Numeric("within-class scatter is not positive definite".into()))?;
    let l = chol.l();
    // M = L^-1 Sb L^-T
    let left = l
        .solve_lower_triangular(&sb)
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let m = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let keep = axes.min(d);
    let lt = l.transpose();
    let mut out_axes = Vec::with_capacity(keep);
    let mut ratios = Vec::with_capacity(keep);
    for &j in order.iter().take(keep) {
        let v = eig.eigenvectors.column(j).into_owned();
        let a = lt
            .solve_upper_triangular(&v)
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        let a = canonical_sign(a.normalize());
        ratios.push(eig.eigenvalues[j].max(0.0));
        out_axes.push(a);
    }
    let scores = rows
        .iter()
        .map(|r| {
            let c = r - &mean;
            out_axes.iter().map(|a| a.dot(&c)).collect()
        })
        .collect();
    Ok(CdaProjection {
        axes: out_axes.into_iter().map(|a| a.as_slice().to_vec()).collect(),
        ratios,
        scores,
    })
}

/// Flips the axis so its largest-magnitude component is positive.
fn canonical_sign(a: DVector<f64>) -> DVector<f64> {
    let idx = a.iamax();
    if a[idx] < 0.0 {
        -a
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_is_rejected() {
        let f = vec![vec![1.0], vec![2.0]];
        assert!(cda_project(&f, &[0, 0], 2).is_err());
    }

    #[test]
    fn separated_clusters_score_apart() {
        let mut f = Vec::new();
        let mut l = Vec::new();
        for i in 0..50 {
            let j = (i as f64 * 0.37).sin() * 0.01;
            f.push(vec![j, 0.3 * j]);
            l.push(0);
            f.push(vec![10.0 + j, 1.0 - j]);
            l.push(1);
        }
        let p = cda_project(&f, &l, 2).unwrap();
        assert!(p.ratios[0] > 1e3 * p.ratios[1].max(1e-12));
    }
}
