//! Levenberg–Marquardt least squares with finite-difference Jacobians.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iter: usize,
    /// Relative cost reduction below which the fit is converged.
    pub ftol: f64,
    /// Relative step size below which the fit is converged.
    pub xtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iter: 500, ftol: 1e-15, xtol: 1e-12, initial_lambda: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Σ r².
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub jacobian: DMatrix<f64>,
}

impl LmResult {
    /// Gauss–Newton covariance s²(JᵀJ)⁻¹ with s² = cost / (n − p).
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let n = self.residuals.len();
        let p = self.params.len();
        let jtj = self.jacobian.transpose() * &self.jacobian;
        let inv = jtj.try_inverse()?;
        let dof = n.saturating_sub(p).max(1) as f64;
        Some(inv * (self.cost / dof))
    }
}

pub fn jacobian<F>(f: &F, x: &[f64], r0: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = r0.len();
    let p = x.len();
    let mut jac = DMatrix::zeros(n, p);
    let mut xp = x.to_vec();
    for j in 0..p {
        let h = 1e-6 * x[j].abs().max(1e-3);
        xp[j] = x[j] + h;
        let rp = f(&xp);
        xp[j] = x[j] - h;
        let rm = f(&xp);
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimize Σ f(x)² starting from `x0`.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], cfg: &LmConfig) -> LmResult
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = x0.to_vec();
    let mut r = f(&x);
    let mut cost = sum_sq(&r);
    let mut lambda = cfg.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = jacobian(&f, &x, &r);

    while iterations < cfg.max_iter {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * DVector::from_column_slice(&r);
        if grad.amax() < 1e-300 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = f(&trial);
            let ct = sum_sq(&rt);
            if ct.is_finite() && ct <= cost {
                let rel_step = step
                    .iter()
                    .zip(&x)
                    .map(|(s, v)| s.abs() / v.abs().max(1e-8))
                    .fold(0.0, f64::max);
                let rel_cost = (cost - ct) / cost.max(1e-300);
                x = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                if rel_cost < cfg.ftol || rel_step < cfg.xtol || cost < 1e-30 {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            // No downhill step at any damping: a (local) minimum.
            converged = true;
            break;
        }
        jac = jacobian(&f, &x, &r);
        if converged {
            break;
        }
    }
    LmResult { params: x, residuals: r, cost, iterations, converged, jacobian: jac }
}
