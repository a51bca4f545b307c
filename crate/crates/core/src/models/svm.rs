//! Linear soft-margin SVM trained by averaged stochastic subgradient steps.
//!
//! Minimizes `(1/2)‖w‖² + C Σ max(0, 1 - y (w·x + b))` over standardized
//! features. Dividing by `C n` gives the per-sample form
//! `(λ/2)‖w‖² + mean hinge` with `λ = 1/(C n)`, which is what the update
//! rule works on: step `1/(λ t)`, projection onto the ball of radius
//! `1/√λ`. The bias is unpenalized and takes plain `1/t` steps.
//!
//! The averaged iterate is checkpointed after every epoch and a checkpoint
//! replaces the kept one only if its objective is no higher.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training, check_width, ModelError};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// Passes of `n` sampled steps each.
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { c: 1.0, epochs: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    /// Weights over standardized features.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
    pub means: Vec<f64>,
    /// Population standard deviations; 1 for constant columns.
    pub scales: Vec<f64>,
    /// Primal objective of the kept checkpoint after each epoch.
    pub objective_trace: Vec<f64>,
}

impl LinearSvmModel {
    pub fn decision_row(&self, row: &[f64]) -> f64 {
        let mut s = self.intercept;
        for (((w, x), m), sd) in self
            .weights
            .iter()
            .zip(row)
            .zip(&self.means)
            .zip(&self.scales)
        {
            s += w * (x - m) / sd;
        }
        s
    }

    pub fn decision_function(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        check_width(x, self.weights.len())?;
        Ok(x.iter_rows().map(|r| self.decision_row(r)).collect())
    }
}

fn standardization(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let d = x.cols();
    let mut means = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut scales = vec![0.0; d];
    for row in x.iter_rows() {
        for ((s, v), m) in scales.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut scales {
        *s = (*s / n).sqrt();
        if !(*s > 0.0) {
            *s = 1.0;
        }
    }
    (means, scales)
}

/// `(1/2)‖w‖² + C Σ hinge` on standardized rows.
pub fn primal_objective(z: &Matrix, y: &[f64], w: &[f64], b: f64, c: f64) -> f64 {
    let hinge: f64 = z
        .iter_rows()
        .zip(y)
        .map(|(r, t)| (1.0 - t * (dot(w, r) + b)).max(0.0))
        .sum();
    0.5 * dot(w, w) + c * hinge
}

/// Row `i` is drawn as `floor(u n)` from a uniform `u`, so a data set with
/// every row repeated in place draws the same rows in the same order.
pub fn fit_linear_svm(
    x: &Matrix,
    y: &[bool],
    params: SvmParams,
    seed: u64,
) -> Result<LinearSvmModel, ModelError> {
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(ModelError::InvalidParameter(format!(
            "C = {} must be > 0",
            params.c
        )));
    }
    if params.epochs == 0 {
        return Err(ModelError::InvalidParameter(
            "epochs must be at least 1".into(),
        ));
    }
    check_training(x, y)?;
    let (n, d) = (x.rows(), x.cols());
    let (means, scales) = standardization(x);
    let mut z = x.clone();
    for i in 0..n {
        for ((v, m), s) in z.row_mut(i).iter_mut().zip(&means).zip(&scales) {
            *v = (*v - m) / s;
        }
    }
    let signs: Vec<f64> = y.iter().map(|&t| if t { 1.0 } else { -1.0 }).collect();
    let lambda = 1.0 / (params.c * n as f64);
    let radius = 1.0 / lambda.sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut w_avg = vec![0.0; d];
    let mut b_avg = 0.0;
    let mut trace = Vec::with_capacity(params.epochs);
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let mut t = 0usize;
    for _ in 0..params.epochs {
        for _ in 0..n {
            t += 1;
            let u: f64 = rng.random();
            let i = ((u * n as f64) as usize).min(n - 1);
            let row = z.row(i);
            let eta = 1.0 / (lambda * t as f64);
            let margin = signs[i] * (dot(&w, row) + b);
            let shrink = 1.0 - 1.0 / t as f64;
            for wj in &mut w {
                *wj *= shrink;
            }
            if margin < 1.0 {
                for (wj, v) in w.iter_mut().zip(row) {
                    *wj += eta * signs[i] * v;
                }
                b += signs[i] / t as f64;
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                let f = radius / norm;
                w.iter_mut().for_each(|wj| *wj *= f);
            }
            let k = 1.0 / t as f64;
            for (a, wj) in w_avg.iter_mut().zip(&w) {
                *a += (wj - *a) * k;
            }
            b_avg += (b - b_avg) * k;
        }
        let obj = primal_objective(&z, &signs, &w_avg, b_avg, params.c);
        if !obj.is_finite() {
            return Err(ModelError::NonFinite(t));
        }
        if best.as_ref().is_none_or(|(_, _, o)| obj <= *o) {
            best = Some((w_avg.clone(), b_avg, obj));
        }
        trace.push(best.as_ref().map_or(obj, |b| b.2));
    }
    let (weights, intercept, _) = best.expect("at least one epoch");
    Ok(LinearSvmModel {
        weights,
        intercept,
        c: params.c,
        epochs: params.epochs,
        seed,
        means,
        scales,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::roc_auc;

    fn blobs(seed: u64, n: usize) -> (Matrix, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let rows: Vec<Vec<f64>> = y
            .iter()
            .map(|&t| {
                let shift = if t { 1.0 } else { -1.0 };
                vec![
                    shift + rng.random_range(-1.5..1.5),
                    rng.random_range(-1.0..1.0),
                    3.0,
                ]
            })
            .collect();
        (Matrix::from_rows(&rows, 3), y)
    }

    #[test]
    fn separable_line_ranks_perfectly() {
        let x = Matrix::from_rows(&(0..30).map(|i| vec![i as f64]).collect::<Vec<_>>(), 1);
        let y: Vec<bool> = (0..30).map(|i| i >= 17).collect();
        let m = fit_linear_svm(
            &x,
            &y,
            SvmParams {
                c: 100.0,
                epochs: 50,
            },
            3,
        )
        .unwrap();
        assert_eq!(roc_auc(&m.decision_function(&x).unwrap(), &y).unwrap(), 1.0);
    }

    #[test]
    fn averaged_objective_does_not_increase() {
        let (x, y) = blobs(1, 400);
        for c in [0.01, 0.1, 1.0] {
            let m = fit_linear_svm(&x, &y, SvmParams { c, epochs: 15 }, 7).unwrap();
            assert!(
                m.objective_trace.windows(2).all(|w| w[1] <= w[0]),
                "C = {c}: {:?}",
                m.objective_trace
            );
        }
    }

    #[test]
    fn deterministic() {
        let (x, y) = blobs(2, 100);
        let p = SvmParams { c: 0.5, epochs: 5 };
        assert_eq!(
            fit_linear_svm(&x, &y, p, 1).unwrap(),
            fit_linear_svm(&x, &y, p, 1).unwrap()
        );
    }

    #[test]
    fn duplicating_rows_and_halving_c_keeps_trajectory() {
        let (x, y) = blobs(3, 150);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (r, &t) in x.iter_rows().zip(&y) {
            rows.push(r.to_vec());
            rows.push(r.to_vec());
            labels.extend([t, t]);
        }
        let doubled = Matrix::from_rows(&rows, 3);
        let a = fit_linear_svm(&x, &y, SvmParams { c: 0.2, epochs: 4 }, 11).unwrap();
        let b = fit_linear_svm(&doubled, &labels, SvmParams { c: 0.1, epochs: 2 }, 11).unwrap();
        // one pass over the doubled rows is two passes over the originals
        for (p, q) in [a.objective_trace[1], a.objective_trace[3]]
            .iter()
            .zip(&b.objective_trace)
        {
            assert!((p - q).abs() <= 1e-6 * p.abs().max(1.0), "{p} vs {q}");
        }
    }

    #[test]
    fn constant_columns_and_errors() {
        let (x, y) = blobs(4, 50);
        let m = fit_linear_svm(&x, &y, SvmParams::default(), 0).unwrap();
        assert_eq!(m.scales[2], 1.0);
        assert!(fit_linear_svm(&x, &y, SvmParams { c: 0.0, epochs: 1 }, 0).is_err());
        assert_eq!(
            fit_linear_svm(&x, &vec![true; 50], SvmParams::default(), 0),
            Err(ModelError::SingleClass)
        );
    }
}
