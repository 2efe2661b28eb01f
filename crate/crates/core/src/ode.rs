//! Adaptive Dormand–Prince 5(4) for matrix-valued ODEs.

use crate::error::{Error, Result};
use crate::hilbert::{CMatrix, C64};

#[derive(Debug, Clone, Copy)]
pub struct OdeConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Smallest admissible step relative to the integration span.
    pub min_step_rel: f64,
    pub max_steps: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, min_step_rel: 1e-13, max_steps: 5_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn error_norm(err: &CMatrix, y0: &CMatrix, y1: &CMatrix, cfg: &OdeConfig) -> f64 {
    let n = err.len() as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sc = cfg.atol + cfg.rtol * a.norm().max(b.norm());
            (e.norm() / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// Integrate `y' = f(t, y)` from `t0` to `t1`.
///
/// `samples` must be sorted and lie in `(t0, t1]`; steps are shortened to
/// land on each of them, so `on_sample` sees integrator states rather than
/// interpolants. `on_step` runs after every accepted step. Returns the final
/// state and the last full-length step size.
#[allow(clippy::too_many_arguments)]
pub fn integrate<F, S, P>(
    f: F,
    t0: f64,
    t1: f64,
    y0: CMatrix,
    h_init: Option<f64>,
    samples: &[f64],
    cfg: &OdeConfig,
    stats: &mut OdeStats,
    mut on_sample: S,
    mut on_step: P,
) -> Result<(CMatrix, f64)>
where
    F: Fn(f64, &CMatrix) -> CMatrix,
    S: FnMut(f64, CMatrix),
    P: FnMut(f64, &CMatrix),
{
    let span = t1 - t0;
    if span <= 0.0 {
        return Ok((y0, h_init.unwrap_or(0.0)));
    }
    let mut t = t0;
    let mut y = y0;
    let mut fy = f(t, &y);
    stats.evaluations += 1;
    let mut h = match h_init {
        Some(h) if h > 0.0 => h.min(span),
        _ => initial_step(&y, &fy, span, cfg),
    };
    let h_min = cfg.min_step_rel * span.max(t0.abs());
    let mut next_sample = 0;
    let mut last_h = h;
    let mut steps = 0;
    let mut k: Vec<CMatrix> = Vec::with_capacity(7);

    while t < t1 {
        steps += 1;
        if steps > cfg.max_steps {
            return Err(Error::Integrator { t, reason: format!("exceeded {} steps", cfg.max_steps) });
        }
        let stop = samples.get(next_sample).copied().unwrap_or(t1).min(t1);
        let last = t + h >= stop - 1e-15 * span;
        let h_step = if last { stop - t } else { h };
        k.clear();
        k.push(fy.clone());
        for stage in 1..7 {
            let mut yi = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[stage][j];
                if a != 0.0 {
                    yi += kj * C64::new(a * h_step, 0.0);
                }
            }
            let ki = f(t + C[stage] * h_step, &yi);
            k.push(ki);
        }
        stats.evaluations += 6;
        // Stage 7 is evaluated at the 5th-order solution (FSAL).
        let mut y_new = y.clone();
        for (j, kj) in k.iter().take(6).enumerate() {
            let a = A[6][j];
            if a != 0.0 {
                y_new += kj * C64::new(a * h_step, 0.0);
            }
        }
        let mut err = CMatrix::zeros(y.nrows(), y.ncols());
        for (j, kj) in k.iter().enumerate() {
            if E[j] != 0.0 {
                err += kj * C64::new(E[j] * h_step, 0.0);
            }
        }
        let en = error_norm(&err, &y, &y_new, cfg);
        if !en.is_finite() {
            return Err(Error::Integrator { t, reason: "non-finite error estimate".into() });
        }
        if en <= 1.0 {
            let t_new = if last { stop } else { t + h_step };
            let f_new = k.pop().expect("seven stages");
            while next_sample < samples.len() && samples[next_sample] <= t_new {
                on_sample(samples[next_sample], y_new.clone());
                next_sample += 1;
            }
            t = t_new;
            y = y_new;
            fy = f_new;
            on_step(t, &y);
            stats.accepted += 1;
            let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            // A step clipped to a sample point says little about the next one.
            if !last || h_step >= h {
                last_h = h_step;
                h = h_step * fac;
            } else {
                h = h.min(h_step * fac).max(h_step);
                last_h = h;
            }
        } else {
            stats.rejected += 1;
            h = h_step * (0.9 * en.powf(-0.2)).clamp(0.1, 1.0);
            if h < h_min {
                return Err(Error::Integrator {
                    t,
                    reason: format!("step size underflow (h = {h:.3e}, error norm {en:.3e})"),
                });
            }
        }
    }
    Ok((y, last_h))
}

fn initial_step(y: &CMatrix, f: &CMatrix, span: f64, cfg: &OdeConfig) -> f64 {
    let sc = |z: &num_complex::Complex64| cfg.atol + cfg.rtol * z.norm();
    let n = y.len() as f64;
    let d0 = (y.iter().map(|z| (z.norm() / sc(z)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f.iter().zip(y.iter()).map(|(fz, z)| (fz.norm() / sc(z)).powi(2)).sum::<f64>() / n).sqrt();
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
    h.min(span)
}
