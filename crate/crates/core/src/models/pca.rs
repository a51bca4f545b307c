//! Principal components of the correlation matrix.

use serde::{Deserialize, Serialize};

use super::{check_width, ModelError};
use crate::matrix::{dot, Matrix};

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTransform {
    pub input_width: usize,
    /// Train means and sample standard deviations of every input column.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Input columns with non-zero variance, in order; the others are dropped.
    pub kept: Vec<usize>,
    /// Every eigenvalue of the correlation matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// Fraction of total variance per eigenvalue.
    pub explained: Vec<f64>,
    /// Retained unit eigenvectors over the kept columns.
    pub components: Vec<Vec<f64>>,
    pub variance_target: f64,
}

impl PcaTransform {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dropped(&self) -> Vec<usize> {
        (0..self.input_width)
            .filter(|j| !self.kept.contains(j))
            .collect()
    }

    /// Rows standardized with train statistics, kept columns only.
    pub fn standardize(&self, x: &Matrix) -> Result<Matrix, ModelError> {
        check_width(x, self.input_width)?;
        let mut out = Matrix::zeros(x.rows(), self.kept.len());
        for (i, row) in x.iter_rows().enumerate() {
            let dst = out.row_mut(i);
            for (k, &j) in self.kept.iter().enumerate() {
                dst[k] = (row[j] - self.means[j]) / self.stds[j];
            }
        }
        Ok(out)
    }

    /// Maps component scores back into standardized space.
    pub fn inverse(&self, scores: &Matrix) -> Result<Matrix, ModelError> {
        check_width(scores, self.n_components())?;
        let mut out = Matrix::zeros(scores.rows(), self.kept.len());
        for (i, s) in scores.iter_rows().enumerate() {
            let dst = out.row_mut(i);
            for (c, comp) in s.iter().zip(&self.components) {
                for (d, v) in dst.iter_mut().zip(comp) {
                    *d += c * v;
                }
            }
        }
        Ok(out)
    }
}

/// Fits on `x`, keeping the shortest eigenvalue prefix whose explained
/// variance reaches `variance_target`.
pub fn fit_pca(x: &Matrix, variance_target: f64) -> Result<PcaTransform, ModelError> {
    if x.rows() < 2 {
        return Err(ModelError::InvalidParameter(format!(
            "PCA needs at least 2 rows, got {}",
            x.rows()
        )));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(ModelError::InvalidParameter(format!(
            "variance target {variance_target} must lie in (0, 1]"
        )));
    }
    let (n, d) = (x.rows(), x.cols());
    let mut means = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut stds = vec![0.0; d];
    for row in x.iter_rows() {
        for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut stds {
        *s = (*s / (n - 1) as f64).sqrt();
    }
    let kept: Vec<usize> = (0..d).filter(|&j| stds[j] > 0.0).collect();
    if kept.is_empty() {
        return Err(ModelError::InvalidParameter(
            "every column is constant".into(),
        ));
    }

    let mut pca = PcaTransform {
        input_width: d,
        means,
        stds,
        kept,
        eigenvalues: Vec::new(),
        explained: Vec::new(),
        components: Vec::new(),
        variance_target,
    };
    let z = pca.standardize(x)?;
    let k = pca.kept.len();
    let mut corr = vec![0.0; k * k];
    for row in z.iter_rows() {
        for a in 0..k {
            let va = row[a];
            for b in a..k {
                corr[a * k + b] += va * row[b];
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            corr[a * k + b] /= (n - 1) as f64;
            corr[b * k + a] = corr[a * k + b];
        }
    }

    let (values, vectors) = symmetric_eigen(&corr, k);
    let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    pca.explained = values.iter().map(|v| v / total).collect();
    let mut cumulative = 0.0;
    let mut retain = k;
    for (i, e) in pca.explained.iter().enumerate() {
        cumulative += e;
        if cumulative >= variance_target - 1e-12 {
            retain = i + 1;
            break;
        }
    }
    pca.components = vectors.into_iter().take(retain).collect();
    pca.eigenvalues = values;
    Ok(pca)
}

/// Component scores for `x` under the fitted transform.
pub fn pca_transform(pca: &PcaTransform, x: &Matrix) -> Result<Matrix, ModelError> {
    let z = pca.standardize(x)?;
    let mut out = Matrix::zeros(x.rows(), pca.n_components());
    for (i, row) in z.iter_rows().enumerate() {
        let dst = out.row_mut(i);
        for (d, comp) in dst.iter_mut().zip(&pca.components) {
            *d = dot(row, comp);
        }
    }
    Ok(out)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric row-major `k x k` matrix.
/// Returns eigenvalues in descending order with their unit eigenvectors;
/// each vector's largest-magnitude entry is made positive.
pub fn symmetric_eigen(a: &[f64], k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(a.len(), k * k);
    let mut m = a.to_vec();
    let mut v = vec![0.0; k * k];
    for i in 0..k {
        v[i * k + i] = 1.0;
    }
    let norm: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..k)
            .flat_map(|p| (p + 1..k).map(move |q| (p, q)))
            .map(|(p, q)| m[p * k + q] * m[p * k + q])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * norm || off == 0.0 {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = m[p * k + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * k + q] - m[p * k + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let (mrp, mrq) = (m[r * k + p], m[r * k + q]);
                    m[r * k + p] = c * mrp - s * mrq;
                    m[r * k + q] = s * mrp + c * mrq;
                }
                for r in 0..k {
                    let (mpr, mqr) = (m[p * k + r], m[q * k + r]);
                    m[p * k + r] = c * mpr - s * mqr;
                    m[q * k + r] = s * mpr + c * mqr;
                }
                for r in 0..k {
                    let (vrp, vrq) = (v[r * k + p], v[r * k + q]);
                    v[r * k + p] = c * vrp - s * vrq;
                    v[r * k + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| m[j * k + j].total_cmp(&m[i * k + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * k + i]).collect();
    let vectors = order
        .iter()
        .map(|&c| {
            let mut col: Vec<f64> = (0..k).map(|r| v[r * k + c]).collect();
            let lead = col.iter().fold(
                0.0f64,
                |best, x| if x.abs() > best.abs() { *x } else { best },
            );
            if lead < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            col
        })
        .collect();
    (values, vectors)
}
