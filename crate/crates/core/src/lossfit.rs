//! Internal quality factor of cable standing modes: wirebond series
//! resistance seen through the CPW quarter-wave transformer, intrinsic
//! cable loss, and hanger-geometry S21 extraction.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::devicelab::{CableParams, StandingMode};
use crate::error::{Error, Result};
use crate::hilbert::C64;
use crate::optim::{levenberg_marquardt, LmConfig};
use crate::units::TWO_PI;

/// Below this |cos(β_c ℓ_c)| the wirebond sits on a current node.
const CURRENT_NODE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub q_cb: f64,
    pub r_s_ohm: f64,
    /// Wirebond joints in the mode's current path (1 on test chips, 2 for
    /// chip-cable-chip links).
    pub n_bonds: u8,
    pub cable: CableParams,
}

impl LossModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_cb > 0.0) {
            return Err(Error::param("q_cb", "must be positive"));
        }
        if !(self.r_s_ohm >= 0.0) {
            return Err(Error::param("r_s_ohm", "must be non-negative"));
        }
        if !matches!(self.n_bonds, 1 | 2) {
            return Err(Error::param("n_bonds", "must be 1 or 2"));
        }
        self.cable.validate()
    }
}

/// cos²(β_c ℓ_c) at angular frequency ω; exactly zero on a current node.
pub fn transformer_factor(cable: &CableParams, omega: f64) -> f64 {
    let c = (omega * cable.cpw_phase_slowness() * cable.cpw_length_m).cos();
    if c.abs() < CURRENT_NODE_TOL {
        0.0
    } else {
        c * c
    }
}

/// ω L / (cos² · n R_s); infinite when either factor vanishes.
pub fn wirebond_q(omega: f64, l_m: f64, cos2: f64, n_bonds: u8, r_s: f64) -> f64 {
    let denom = cos2 * f64::from(n_bonds) * r_s;
    if denom == 0.0 {
        f64::INFINITY
    } else {
        omega * l_m / denom
    }
}

pub fn q_loss(model: &LossModel, mode: &StandingMode) -> f64 {
    let cos2 = transformer_factor(&model.cable, mode.omega_rad_s);
    wirebond_q(mode.omega_rad_s, mode.inductance(), cos2, model.n_bonds, model.r_s_ohm)
}

/// Harmonic combination of two quality factors.
pub fn combine_q(a: f64, b: f64) -> f64 {
    1.0 / (1.0 / a + 1.0 / b)
}

pub fn q_int(model: &LossModel, mode: &StandingMode) -> f64 {
    combine_q(q_loss(model, mode), model.q_cb)
}

pub fn t1r_from_q(q_int: f64, omega: f64) -> f64 {
    q_int / omega
}

pub fn q_from_t1r(t1r: f64, omega: f64) -> f64 {
    omega * t1r
}

/// Input impedance of a quarter-wave line of impedance `z0` terminated in
/// `z_load`.
pub fn quarter_wave_impedance(z0: f64, z_load: f64) -> f64 {
    if z_load == 0.0 {
        f64::INFINITY
    } else if z_load.is_infinite() {
        0.0
    } else {
        z0 * z0 / z_load
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QDataPoint {
    pub m: u32,
    pub omega_rad_s: f64,
    pub q_int: f64,
    /// Relative uncertainty of `q_int`.
    pub sigma: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct QRow {
    mode_m: u32,
    #[serde(rename = "freq_GHz")]
    freq_ghz: f64,
    #[serde(rename = "Q_int")]
    q_int: f64,
    #[serde(default)]
    sigma: Option<f64>,
}

/// Read `mode_m,freq_GHz,Q_int[,sigma]` rows.
pub fn read_q_data<R: Read>(reader: R) -> Result<Vec<QDataPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: QRow = row?;
        if !(row.q_int > 0.0) {
            return Err(Error::param(format!("Q_int (mode {})", row.mode_m), "must be positive"));
        }
        out.push(QDataPoint {
            m: row.mode_m,
            omega_rad_s: TWO_PI * row.freq_ghz * 1e9,
            q_int: row.q_int,
            sigma: row.sigma,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualScale {
    /// (Q_model − Q)/Q_max, or /(σ·Q) when σ is given.
    #[default]
    Linear,
    /// ln Q_model − ln Q, or divided by σ when given.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGeometry {
    pub cable: CableParams,
    pub n_bonds: u8,
}

#[derive(Debug, Clone, Copy)]
pub struct LossFitOptions {
    pub residual: ResidualScale,
    pub max_iter: usize,
}

impl Default for LossFitOptions {
    fn default() -> Self {
        Self { residual: ResidualScale::Linear, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFit {
    pub q_cb: f64,
    pub r_s_ohm: f64,
    /// Covariance of (Q_cb, R_s).
    pub covariance: [[f64; 2]; 2],
    pub iterations: usize,
    pub rms_residual: f64,
}

impl LossFit {
    pub fn model(&self, geometry: &LossGeometry) -> LossModel {
        LossModel {
            q_cb: self.q_cb,
            r_s_ohm: self.r_s_ohm,
            n_bonds: geometry.n_bonds,
            cable: geometry.cable,
        }
    }
}

/// Fit (Q_cb, R_s) to measured internal quality factors.
pub fn fit_loss_model(
    points: &[QDataPoint],
    geometry: &LossGeometry,
    opts: &LossFitOptions,
) -> Result<LossFit> {
    geometry.cable.validate()?;
    if points.len() < 3 {
        return Err(Error::Precondition("need at least 3 data points".into()));
    }
    let mut modes: Vec<u32> = points.iter().map(|p| p.m).collect();
    modes.sort_unstable();
    modes.dedup();
    if modes.len() < 2 {
        return Err(Error::Precondition("data must span at least 2 mode numbers".into()));
    }
    if let Some(p) = points.iter().find(|p| !(p.q_int > 0.0)) {
        return Err(Error::param(format!("q_int (mode {})", p.m), "must be positive"));
    }

    let l_m = geometry.cable.mode_inductance();
    let n = f64::from(geometry.n_bonds);
    // Loss per ohm of series resistance: 1/Q = 1/Q_cb + R_s · w.
    let w: Vec<f64> = points
        .iter()
        .map(|p| transformer_factor(&geometry.cable, p.omega_rad_s) * n / (p.omega_rad_s * l_m))
        .collect();
    let w_max = w.iter().copied().fold(0.0, f64::max);
    if w_max <= 0.0 {
        return Err(Error::Fit(
            "R_s unidentifiable: every point sits on a quarter-wave current node".into(),
        ));
    }

    let q_max = points.iter().map(|p| p.q_int).fold(0.0, f64::max);
    let (i_min, p_min) = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.q_int.total_cmp(&b.1.q_int))
        .expect("non-empty");
    let w_seed = if w[i_min] > 0.0 { w[i_min] } else { w_max };
    let excess = (1.0 / p_min.q_int - 1.0 / q_max).max(1e-3 / q_max);
    let x0 = [q_max.ln(), (excess / w_seed).ln()];

    let residual = opts.residual;
    let model = |x: &[f64], i: usize| 1.0 / ((-x[0]).exp() + x[1].exp() * w[i]);
    let f = |x: &[f64]| -> Vec<f64> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let q = model(x, i);
                match residual {
                    ResidualScale::Log => (q.ln() - p.q_int.ln()) / p.sigma.unwrap_or(1.0),
                    ResidualScale::Linear => match p.sigma {
                        Some(s) => (q - p.q_int) / (s * p.q_int),
                        None => (q - p.q_int) / q_max,
                    },
                }
            })
            .collect()
    };
    let cfg = LmConfig { max_iter: opts.max_iter, ..LmConfig::default() };
    let res = levenberg_marquardt(f, &x0, &cfg);
    let (q_cb, r_s) = (res.params[0].exp(), res.params[1].exp());
    if !res.converged {
        return Err(Error::Fit(format!(
            "no convergence after {} iterations (last iterate Q_cb = {q_cb:.4e}, R_s = {r_s:.4e} Ω)",
            res.iterations
        )));
    }
    let cov_log = res.covariance().unwrap_or_else(|| nalgebra::DMatrix::from_element(2, 2, f64::NAN));
    let scale = [q_cb, r_s];
    let mut covariance = [[0.0; 2]; 2];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = cov_log[(i, j)] * scale[i] * scale[j];
        }
    }
    Ok(LossFit {
        q_cb,
        r_s_ohm: r_s,
        covariance,
        iterations: res.iterations,
        rms_residual: (res.cost / points.len() as f64).sqrt(),
    })
}

/// Hanger resonance parameters. S21 is scaled by `amplitude·e^{i·phase}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HangerResonance {
    pub f0_hz: f64,
    pub q_int: f64,
    pub q_c: f64,
    pub amplitude: f64,
    pub phase_rad: f64,
    /// Impedance-mismatch asymmetry of the coupling; held fixed when fitting.
    #[serde(default)]
    pub asymmetry_rad: f64,
}

impl HangerResonance {
    pub fn loaded_q(&self) -> f64 {
        combine_q(self.q_int, self.q_c)
    }

    pub fn linewidth_hz(&self) -> f64 {
        self.f0_hz / self.loaded_q()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("f0_hz", self.f0_hz), ("q_int", self.q_int), ("q_c", self.q_c)] {
            if !(v > 0.0) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        Ok(())
    }

    fn at(&self, f: f64) -> C64 {
        let ql = self.loaded_q();
        let x = ql * (f - self.f0_hz) / self.f0_hz;
        let dip = C64::from_polar(ql / self.q_c, self.asymmetry_rad) / C64::new(1.0, 2.0 * x);
        C64::from_polar(self.amplitude, self.phase_rad) * (C64::new(1.0, 0.0) - dip)
    }
}

pub fn s21_hanger(freqs_hz: &[f64], res: &HangerResonance) -> Vec<C64> {
    freqs_hz.iter().map(|&f| res.at(f)).collect()
}

/// Least-squares fit of the hanger model to a complex S21 trace.
pub fn fit_hanger(freqs_hz: &[f64], trace: &[C64]) -> Result<HangerResonance> {
    fit_hanger_with_asymmetry(freqs_hz, trace, 0.0)
}

pub fn fit_hanger_with_asymmetry(
    freqs_hz: &[f64],
    trace: &[C64],
    asymmetry_rad: f64,
) -> Result<HangerResonance> {
    let n = freqs_hz.len();
    if n != trace.len() {
        return Err(Error::Dimension("frequency grid and trace lengths differ".into()));
    }
    if n < 20 {
        return Err(Error::Precondition("hanger fit needs at least 20 points".into()));
    }
    // Baseline from the outer 5% on each side.
    let edge = (n / 20).max(2);
    let base: C64 = trace[..edge].iter().chain(&trace[n - edge..]).sum::<C64>() / (2 * edge) as f64;
    if base.norm() == 0.0 {
        return Err(Error::Fit("zero baseline".into()));
    }
    let norm: Vec<C64> = trace.iter().map(|z| z / base).collect();
    let dist: Vec<f64> = norm.iter().map(|z| (C64::new(1.0, 0.0) - z).norm()).collect();
    let (i0, depth) = dist
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty");
    if i0 < edge || i0 >= n - edge || depth < 1e-3 {
        return Err(Error::Fit("resonance not inside the frequency window".into()));
    }
    let f0 = freqs_hz[i0];
    let above: Vec<f64> = freqs_hz
        .iter()
        .zip(&dist)
        .filter(|(_, &d)| d >= depth / std::f64::consts::SQRT_2)
        .map(|(&f, _)| f)
        .collect();
    let step = (freqs_hz[n - 1] - freqs_hz[0]).abs() / (n - 1) as f64;
    let width = (above.iter().copied().fold(f64::MIN, f64::max)
        - above.iter().copied().fold(f64::MAX, f64::min))
    .max(step);
    let span = (freqs_hz[n - 1] - freqs_hz[0]).abs();
    if span < 5.0 * width {
        return Err(Error::Precondition(format!(
            "trace spans {:.2} linewidths, need at least 5",
            span / width
        )));
    }
    let ql = f0 / width;
    let qc = ql / depth.min(0.999);
    let inv_qi = 1.0 / ql - 1.0 / qc;
    let qi = if inv_qi > 0.0 { 1.0 / inv_qi } else { 100.0 * ql };

    let build = |x: &[f64]| HangerResonance {
        f0_hz: f0 + x[0] * width,
        q_int: x[1].exp(),
        q_c: x[2].exp(),
        amplitude: x[3],
        phase_rad: x[4],
        asymmetry_rad,
    };
    let f = |x: &[f64]| -> Vec<f64> {
        let r = build(x);
        freqs_hz
            .iter()
            .zip(trace)
            .flat_map(|(&fr, &z)| {
                let d = r.at(fr) - z;
                [d.re, d.im]
            })
            .collect()
    };
    let x0 = [0.0, qi.ln(), qc.ln(), base.norm(), base.arg()];
    let res = levenberg_marquardt(f, &x0, &LmConfig { max_iter: 1000, ..LmConfig::default() });
    if !res.converged {
        return Err(Error::Fit(format!("hanger fit did not converge in {} iterations", res.iterations)));
    }
    let out = build(&res.params);
    if out.f0_hz < freqs_hz[0].min(freqs_hz[n - 1]) || out.f0_hz > freqs_hz[0].max(freqs_hz[n - 1]) {
        return Err(Error::Fit("fitted resonance left the frequency window".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devicelab::{mode_at, CableParams};
    use crate::units::ghz_to_rad_s;
    use std::f64::consts::PI;

    fn test_chip() -> CableParams {
        CableParams { n_cpw: 1, cpw_length_m: 5e-3, ..CableParams::chip_cable_chip() }
    }

    #[test]
    fn wirebond_q_arithmetic() {
        let omega = ghz_to_rad_s(4.0);
        let q = wirebond_q(omega, 29.6e-9, 0.25, 2, 0.010);
        let expected = (TWO_PI * 4e9 * 29.6e-9) / (0.25 * 0.02);
        assert!((q - expected).abs() / expected < 1e-12);
        assert!((q - 1.488e5).abs() < 1e3, "{q}");
        assert!(wirebond_q(omega, 29.6e-9, 0.25, 2, 0.0).is_infinite());
    }

    #[test]
    fn quarter_wave_match_limits() {
        let cable = test_chip();
        let f_qw = 1.0 / (4.0 * cable.cpw_length_m * cable.cpw_phase_slowness());
        let mode = mode_at(&cable, 11, TWO_PI * f_qw);
        let model = LossModel { q_cb: 4.2e6, r_s_ohm: 0.01, n_bonds: 1, cable };
        assert!(q_loss(&model, &mode).is_infinite());
        assert_eq!(q_int(&model, &mode), model.q_cb);
        let lossless = LossModel { r_s_ohm: 0.0, ..model };
        assert!(q_loss(&lossless, &mode_at(&cable, 10, ghz_to_rad_s(4.0))).is_infinite());
    }

    #[test]
    fn equal_losses_halve_q() {
        assert_eq!(combine_q(6e5, 6e5), 3e5);
    }

    #[test]
    fn t1r_conversions() {
        let t = t1r_from_q(8.1e5, ghz_to_rad_s(4.885));
        assert!((t * 1e6 - 26.4).abs() < 0.05, "{t}");
        let t = t1r_from_q(1.2e6, ghz_to_rad_s(5.257));
        assert!((t * 1e6 - 36.3).abs() < 0.05, "{t}");
        let w = ghz_to_rad_s(4.45);
        assert!((q_from_t1r(t1r_from_q(3.3e5, w), w) - 3.3e5).abs() < 1e-6);
    }

    #[test]
    fn quarter_wave_transformer() {
        assert_eq!(quarter_wave_impedance(50.0, f64::INFINITY), 0.0);
        assert_eq!(quarter_wave_impedance(50.0, 50.0), 50.0);
        assert_eq!(quarter_wave_impedance(50.0, 25.0), 100.0);
        assert!(quarter_wave_impedance(50.0, 0.0).is_infinite());
    }

    #[test]
    fn q_loss_period_pi_in_phase() {
        let base = test_chip();
        let omega = ghz_to_rad_s(4.5);
        let phase = |cable: &CableParams| omega * cable.cpw_phase_slowness() * cable.cpw_length_m;
        let shifted = CableParams {
            cpw_length_m: base.cpw_length_m + PI / (omega * base.cpw_phase_slowness()),
            ..base
        };
        assert!((phase(&shifted) - phase(&base) - PI).abs() < 1e-12);
        let a = transformer_factor(&base, omega);
        let b = transformer_factor(&shifted, omega);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn fit_preconditions() {
        let geometry = LossGeometry { cable: test_chip(), n_bonds: 1 };
        let p = |m: u32, q: f64| QDataPoint { m, omega_rad_s: ghz_to_rad_s(0.4 * m as f64), q_int: q, sigma: None };
        let opts = LossFitOptions::default();
        assert!(fit_loss_model(&[p(8, 1e5), p(9, 2e5)], &geometry, &opts).is_err());
        assert!(fit_loss_model(&[p(8, 1e5), p(8, 2e5), p(8, 3e5)], &geometry, &opts).is_err());
    }

    #[test]
    fn fit_degenerate_geometry() {
        // Every point on a current node: cos(βℓ) = 0 at 1×, 3×, 5× the quarter-wave frequency.
        let cable = test_chip();
        let f_qw = 1.0 / (4.0 * cable.cpw_length_m * cable.cpw_phase_slowness());
        let pts: Vec<QDataPoint> = [1.0, 3.0, 5.0]
            .iter()
            .enumerate()
            .map(|(i, k)| QDataPoint { m: i as u32 + 1, omega_rad_s: TWO_PI * f_qw * k, q_int: 1e6, sigma: None })
            .collect();
        let err = fit_loss_model(&pts, &LossGeometry { cable, n_bonds: 1 }, &LossFitOptions::default());
        assert!(matches!(err, Err(Error::Fit(msg)) if msg.contains("unidentifiable")));
    }

    #[test]
    fn read_csv_rows() {
        let text = "mode_m,freq_GHz,Q_int,sigma\n10,4.45,3.0e5,0.05\n11,4.885,8.1e5,\n";
        let pts = read_q_data(text.as_bytes()).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].sigma, Some(0.05));
        assert_eq!(pts[1].sigma, None);
        assert!((pts[1].omega_rad_s - ghz_to_rad_s(4.885)).abs() < 1e-3);
        assert!(read_q_data("mode_m,freq_GHz,Q_int\n1,4.0,-3\n".as_bytes()).is_err());
    }

    fn grid(res: &HangerResonance, linewidths: f64, n: usize) -> Vec<f64> {
        let lw = res.linewidth_hz();
        (0..n)
            .map(|k| res.f0_hz + lw * linewidths * (2.0 * k as f64 / (n - 1) as f64 - 1.0))
            .collect()
    }

    #[test]
    fn hanger_lossless_full_dip() {
        let res = HangerResonance {
            f0_hz: 5.257e9,
            q_int: f64::INFINITY,
            q_c: 1e5,
            amplitude: 1.0,
            phase_rad: 0.0,
            asymmetry_rad: 0.0,
        };
        let s = s21_hanger(&[res.f0_hz], &res);
        assert!(s[0].norm() < 1e-15);
    }

    #[test]
    fn hanger_noiseless_roundtrip() {
        let truth = HangerResonance {
            f0_hz: 5.257e9,
            q_int: 1.2e6,
            q_c: 3e5,
            amplitude: 0.8,
            phase_rad: 0.4,
            asymmetry_rad: 0.0,
        };
        let f = grid(&truth, 10.0, 601);
        let fit = fit_hanger(&f, &s21_hanger(&f, &truth)).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(fit.f0_hz, truth.f0_hz) < 1e-8);
        assert!(rel(fit.q_int, truth.q_int) < 1e-8, "{} vs {}", fit.q_int, truth.q_int);
        assert!(rel(fit.q_c, truth.q_c) < 1e-8);
        assert!(rel(fit.amplitude, truth.amplitude) < 1e-8);
    }

    #[test]
    fn hanger_window_errors() {
        let truth = HangerResonance {
            f0_hz: 5e9,
            q_int: 1e6,
            q_c: 2e5,
            amplitude: 1.0,
            phase_rad: 0.0,
            asymmetry_rad: 0.0,
        };
        // Window entirely above the resonance.
        let lw = truth.linewidth_hz();
        let f: Vec<f64> = (0..200).map(|k| truth.f0_hz + 50.0 * lw + k as f64 * lw).collect();
        assert!(fit_hanger(&f, &s21_hanger(&f, &truth)).is_err());
        // Window narrower than five linewidths.
        let f = grid(&truth, 1.0, 200);
        assert!(matches!(fit_hanger(&f, &s21_hanger(&f, &truth)), Err(Error::Precondition(_))));
    }
}
