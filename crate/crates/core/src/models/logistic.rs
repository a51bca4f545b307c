//! L2-penalized logistic regression.
//!
//! The objective is the mean negative log-likelihood plus `(λ/2)‖w‖²`; the
//! intercept is not penalized. Small problems use damped Newton steps, wide
//! ones use L-BFGS. Both accept a step only under the Armijo condition, so
//! the objective trace is strictly decreasing.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use super::{check_training, check_width, ModelError};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Newton up to `NEWTON_MAX_PARAMS` parameters, L-BFGS above.
    #[default]
    Auto,
    Newton,
    Lbfgs,
}

const NEWTON_MAX_PARAMS: usize = 64;
const LBFGS_HISTORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub l2_penalty: f64,
    /// Converged once the gradient max-norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub solver: Solver,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2_penalty: 1e-4,
            tol: 1e-6,
            max_iter: 1000,
            solver: Solver::Auto,
        }
    }
}

impl LogisticConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "l2 penalty {} must be >= 0",
                self.l2_penalty
            )));
        }
        if !(self.tol > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "tolerance {} must be > 0",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingLog {
    pub iterations: usize,
    pub converged: bool,
    /// Penalized mean objective at the returned parameters.
    pub objective: f64,
    /// Unpenalized negative log-likelihood summed over training rows.
    pub neg_log_likelihood: f64,
    pub gradient_norm: f64,
    /// Objective after every accepted iteration, starting point first.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2_penalty: f64,
    pub log: TrainingLog,
}

impl LogisticModel {
    pub fn zeros(n_features: usize) -> LogisticModel {
        LogisticModel {
            weights: vec![0.0; n_features],
            intercept: 0.0,
            l2_penalty: 0.0,
            log: TrainingLog::default(),
        }
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        dot(&self.weights, row) + self.intercept
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        predict_proba(self, x)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn predict_proba(model: &LogisticModel, x: &Matrix) -> Result<Vec<f64>, ModelError> {
    check_width(x, model.weights.len())?;
    Ok(x.iter_rows().map(|r| sigmoid(model.decision(r))).collect())
}

/// Summed unpenalized negative log-likelihood.
pub fn neg_log_likelihood(x: &Matrix, y: &[bool], weights: &[f64], intercept: f64) -> f64 {
    x.iter_rows()
        .zip(y)
        .map(|(r, &t)| {
            let z = dot(weights, r) + intercept;
            softplus(z) - if t { z } else { 0.0 }
        })
        .sum()
}

/// Penalized mean objective.
pub fn objective(x: &Matrix, y: &[bool], weights: &[f64], intercept: f64, l2: f64) -> f64 {
    neg_log_likelihood(x, y, weights, intercept) / x.rows() as f64
        + 0.5 * l2 * dot(weights, weights)
}

/// Objective and its gradient; the last gradient entry is the intercept's.
pub fn objective_gradient(
    x: &Matrix,
    y: &[bool],
    weights: &[f64],
    intercept: f64,
    l2: f64,
) -> (f64, Vec<f64>) {
    let d = weights.len();
    let n = x.rows() as f64;
    let mut grad = vec![0.0; d + 1];
    let mut nll = 0.0;
    for (r, &t) in x.iter_rows().zip(y) {
        let z = dot(weights, r) + intercept;
        let target = if t { 1.0 } else { 0.0 };
        nll += softplus(z) - target * z;
        let resid = sigmoid(z) - target;
        for (g, v) in grad[..d].iter_mut().zip(r) {
            *g += resid * v;
        }
        grad[d] += resid;
    }
    for g in &mut grad {
        *g /= n;
    }
    for (g, w) in grad[..d].iter_mut().zip(weights) {
        *g += l2 * w;
    }
    (nll / n + 0.5 * l2 * dot(weights, weights), grad)
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn fit_logistic(
    x: &Matrix,
    y: &[bool],
    config: &LogisticConfig,
) -> Result<LogisticModel, ModelError> {
    fit_logistic_from(x, y, config, None)
}

/// Fits starting from `start` (weights, intercept) instead of zeros.
pub fn fit_logistic_from(
    x: &Matrix,
    y: &[bool],
    config: &LogisticConfig,
    start: Option<(&[f64], f64)>,
) -> Result<LogisticModel, ModelError> {
    config.validate()?;
    check_training(x, y)?;
    let d = x.cols();
    let mut theta = match start {
        Some((w, b)) => {
            if w.len() != d {
                return Err(ModelError::DimensionMismatch {
                    expected: d,
                    found: w.len(),
                });
            }
            let mut t = w.to_vec();
            t.push(b);
            t
        }
        None => vec![0.0; d + 1],
    };
    let newton = match config.solver {
        Solver::Newton => true,
        Solver::Lbfgs => false,
        Solver::Auto => d + 1 <= NEWTON_MAX_PARAMS,
    };
    let eval = |t: &[f64]| objective_gradient(x, y, &t[..d], t[d], config.l2_penalty);
    let value = |t: &[f64]| objective(x, y, &t[..d], t[d], config.l2_penalty);

    let (mut f, mut g) = eval(&theta);
    if !f.is_finite() {
        return Err(ModelError::NonFinite(0));
    }
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = max_norm(&g) < config.tol;

    while !converged && iterations < config.max_iter {
        let mut direction = if newton {
            newton_direction(x, y, &theta, &g, config.l2_penalty)
        } else {
            lbfgs_direction(&g, &history)
        };
        let mut slope = dot(&g, &direction);
        if !(slope < 0.0) {
            direction = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            history.clear();
        }
        // the very first quasi-Newton step has no curvature scale yet
        let mut step = if !newton && history.is_empty() {
            (1.0 / max_norm(&g)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = theta
                .iter()
                .zip(&direction)
                .map(|(t, d)| t + step * d)
                .collect();
            let ft = value(&trial);
            if ft.is_finite() && ft <= f + ARMIJO * step * slope && ft < f {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            // no further decrease is representable
            break;
        };
        let (fn_, gn) = eval(&next);
        if !fn_.is_finite() {
            return Err(ModelError::NonFinite(iterations + 1));
        }
        if !newton {
            let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &yv);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
                if history.len() == LBFGS_HISTORY {
                    history.pop_front();
                }
                history.push_back((s, yv, 1.0 / sy));
            }
        }
        theta = next;
        f = fn_;
        g = gn;
        trace.push(f);
        iterations += 1;
        converged = max_norm(&g) < config.tol;
    }

    let weights = theta[..d].to_vec();
    let intercept = theta[d];
    let nll = neg_log_likelihood(x, y, &weights, intercept);
    Ok(LogisticModel {
        weights,
        intercept,
        l2_penalty: config.l2_penalty,
        log: TrainingLog {
            iterations,
            converged,
            objective: f,
            neg_log_likelihood: nll,
            gradient_norm: max_norm(&g),
            trace,
        },
    })
}

fn lbfgs_direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Solves `H p = -g` for the exact Hessian, falling back to steepest descent
/// if the factorization breaks down.
fn newton_direction(x: &Matrix, y: &[bool], theta: &[f64], g: &[f64], l2: f64) -> Vec<f64> {
    let d = x.cols();
    let m = d + 1;
    let n = x.rows() as f64;
    let mut h = vec![0.0; m * m];
    let mut ext = vec![1.0; m];
    for (r, _) in x.iter_rows().zip(y) {
        let z = dot(&theta[..d], r) + theta[d];
        let p = sigmoid(z);
        let w = p * (1.0 - p);
        ext[..d].copy_from_slice(r);
        for j in 0..m {
            let wj = w * ext[j];
            if wj == 0.0 {
                continue;
            }
            for k in j..m {
                h[j * m + k] += wj * ext[k];
            }
        }
    }
    for j in 0..m {
        for k in j..m {
            h[j * m + k] /= n;
            h[k * m + j] = h[j * m + k];
        }
        if j < d {
            h[j * m + j] += l2;
        }
    }
    let scale = (0..m).map(|j| h[j * m + j]).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut a = h.clone();
        for j in 0..m {
            a[j * m + j] += ridge;
        }
        if let Some(p) = cholesky_solve(&mut a, m, g) {
            return p.iter().map(|v| -v).collect();
        }
        ridge = if ridge == 0.0 {
            1e-10 * scale
        } else {
            ridge * 100.0
        };
    }
    g.iter().map(|v| -v).collect()
}

/// In-place Cholesky of the symmetric `a` followed by two triangular solves.
fn cholesky_solve(a: &mut [f64], m: usize, b: &[f64]) -> Option<Vec<f64>> {
    for j in 0..m {
        let mut diag = a[j * m + j];
        for k in 0..j {
            diag -= a[j * m + k] * a[j * m + k];
        }
        if !(diag > 0.0) {
            return None;
        }
        let l = diag.sqrt();
        a[j * m + j] = l;
        for i in j + 1..m {
            let mut v = a[i * m + j];
            for k in 0..j {
                v -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = v / l;
        }
    }
    let mut z = b.to_vec();
    for i in 0..m {
        for k in 0..i {
            z[i] -= a[i * m + k] * z[k];
        }
        z[i] /= a[i * m + i];
    }
    for i in (0..m).rev() {
        for k in i + 1..m {
            z[i] -= a[k * m + i] * z[k];
        }
        z[i] /= a[i * m + i];
    }
    z.iter().all(|v| v.is_finite()).then_some(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::roc_auc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Matrix, Vec<bool>) {
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        y[0] = true;
        y[1] = false;
        (Matrix::from_vec(n, d, data), y)
    }

    /// Central differences of the objective, the intercept last.
    fn finite_difference(x: &Matrix, y: &[bool], w: &[f64], b: f64, l2: f64, h: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for j in 0..=w.len() {
            let (mut wp, mut wm) = (w.to_vec(), w.to_vec());
            let (mut bp, mut bm) = (b, b);
            if j < w.len() {
                wp[j] += h;
                wm[j] -= h;
            } else {
                bp += h;
                bm -= h;
            }
            out.push((objective(x, y, &wp, bp, l2) - objective(x, y, &wm, bm, l2)) / (2.0 * h));
        }
        out
    }

    #[test]
    fn zero_weights_give_one_half() {
        let m = LogisticModel::zeros(3);
        let x = Matrix::from_rows(&[vec![1.0, -4.0, 9.0], vec![0.0, 0.0, 0.0]], 3);
        assert_eq!(predict_proba(&m, &x).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn saturation_and_monotonicity() {
        let mut m = LogisticModel::zeros(1);
        m.intercept = 30.0;
        let p = predict_proba(&m, &Matrix::from_rows(&[vec![0.0]], 1)).unwrap()[0];
        assert!((1.0 - p).abs() < 1e-9);
        m.intercept = 0.0;
        m.weights = vec![0.7];
        let p = predict_proba(&m, &Matrix::from_rows(&[vec![1.0], vec![2.0]], 1)).unwrap();
        assert!(p[1] > p[0] && p.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = random_instance(&mut rng, 5, 3);
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = objective_gradient(&x, &y, &w, 0.3, 0.01);
        let fd = finite_difference(&x, &y, &w, 0.3, 0.01, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!(
                (a - b).abs() / a.abs().max(b.abs()).max(1e-8) < 1e-4,
                "{a} vs {b}"
            );
        }
    }

    #[test]
    fn perfectly_correlated_feature_ranks_perfectly() {
        let x = Matrix::from_rows(&(0..20).map(|i| vec![i as f64]).collect::<Vec<_>>(), 1);
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let cfg = LogisticConfig {
            l2_penalty: 0.01,
            ..LogisticConfig::default()
        };
        let m = fit_logistic(&x, &y, &cfg).unwrap();
        assert!(m.log.converged);
        assert_eq!(roc_auc(&predict_proba(&m, &x).unwrap(), &y).unwrap(), 1.0);
    }

    #[test]
    fn solvers_agree_and_descend() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (x, y) = random_instance(&mut rng, 200, 6);
        let newton = fit_logistic(
            &x,
            &y,
            &LogisticConfig {
                solver: Solver::Newton,
                ..Default::default()
            },
        )
        .unwrap();
        let lbfgs = fit_logistic(
            &x,
            &y,
            &LogisticConfig {
                solver: Solver::Lbfgs,
                ..Default::default()
            },
        )
        .unwrap();
        for m in [&newton, &lbfgs] {
            assert!(m.log.converged);
            assert!(m.log.gradient_norm < 1e-6);
            assert!(m.log.trace.windows(2).all(|w| w[1] < w[0]));
            assert_eq!(m.log.iterations + 1, m.log.trace.len());
        }
        for (a, b) in newton.weights.iter().zip(&lbfgs.weights) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn recovers_planted_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        let truth = [1.5, -0.8, 0.0];
        let data: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::from_vec(n, 3, data);
        let y: Vec<bool> = x
            .iter_rows()
            .map(|r| rng.random::<f64>() < sigmoid(dot(&truth, r) - 0.5))
            .collect();
        let m = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        for (w, t) in m.weights.iter().zip(truth) {
            assert!((w - t).abs() < 0.2, "{w} vs {t}");
        }
        assert!((m.intercept + 0.5).abs() < 0.2);
    }

    #[test]
    fn rejects_single_class_and_bad_penalty() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]], 1);
        assert_eq!(
            fit_logistic(&x, &[true, true], &LogisticConfig::default()),
            Err(ModelError::SingleClass)
        );
        let bad = LogisticConfig {
            l2_penalty: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            fit_logistic(&x, &[true, false], &bad),
            Err(ModelError::InvalidParameter(_))
        ));
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, y) = random_instance(&mut rng, 120, 4);
        let cold = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        let warm = fit_logistic_from(
            &x,
            &y,
            &LogisticConfig::default(),
            Some((&cold.weights, cold.intercept)),
        )
        .unwrap();
        assert!(warm.log.iterations <= 1);
        assert!((warm.log.objective - cold.log.objective).abs() < 1e-12);
    }
}
