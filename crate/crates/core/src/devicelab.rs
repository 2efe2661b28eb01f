//! Parameter model of the cable network: qubits, gmon couplers, coaxial
//! cables and their on-chip CPW transformers.
//!
//! Configuration values carry their unit in the field name (GHz, μs, nH,
//! pF/m, m). Everything returned as a frequency is angular, in rad/s.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{ghz_to_rad_s, nh, pf};

/// Junction asymmetry E_J1/E_J2 of the device qubits.
pub const JUNCTION_ASYMMETRY: f64 = 5.3;

fn default_alpha() -> f64 {
    JUNCTION_ASYMMETRY
}
fn default_lq() -> f64 {
    8.0
}
fn default_tune_min() -> f64 {
    4.2
}
fn default_tune_max() -> f64 {
    5.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitParams {
    pub label: String,
    #[serde(default)]
    pub module: Option<String>,
    pub omega10_ghz: f64,
    pub eta_ghz: f64,
    pub t1_us: f64,
    pub tphi_us: f64,
    #[serde(default)]
    pub omega_rr_ghz: Option<f64>,
    pub f0: f64,
    pub f1: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Junction inductance; not tabulated for the device, repo default 8 nH.
    #[serde(default = "default_lq")]
    pub lq_nh: f64,
    #[serde(default = "default_tune_min")]
    pub tune_min_ghz: f64,
    #[serde(default = "default_tune_max")]
    pub tune_max_ghz: f64,
}

impl QubitParams {
    pub fn validate(&self) -> Result<()> {
        let f = |name: &str| format!("{}.{name}", self.label);
        if !(self.t1_us > 0.0) {
            return Err(Error::param(f("t1_us"), "must be positive"));
        }
        if !(self.tphi_us > 0.0) {
            return Err(Error::param(f("tphi_us"), "must be positive"));
        }
        for (name, v) in [("f0", self.f0), ("f1", self.f1)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(f(name), "readout fidelity must lie in [0, 1]"));
            }
        }
        if !(self.tune_min_ghz <= self.omega10_ghz && self.omega10_ghz <= self.tune_max_ghz) {
            return Err(Error::param(
                f("omega10_ghz"),
                format!(
                    "{} GHz outside tuning range [{}, {}]",
                    self.omega10_ghz, self.tune_min_ghz, self.tune_max_ghz
                ),
            ));
        }
        if !(self.lq_nh > 0.0) {
            return Err(Error::param(f("lq_nh"), "must be positive"));
        }
        Ok(())
    }

    pub fn omega_q(&self) -> f64 {
        ghz_to_rad_s(self.omega10_ghz)
    }

    pub fn gamma1(&self) -> f64 {
        1.0 / (self.t1_us * 1e-6)
    }

    pub fn gamma_phi(&self) -> f64 {
        1.0 / (self.tphi_us * 1e-6)
    }
}

/// Read qubit parameters from CSV in the `data/qubits.csv` layout.
pub fn read_qubit_table<R: Read>(reader: R) -> Result<Vec<QubitParams>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let q: QubitParams = row?;
        q.validate()?;
        out.push(q);
    }
    Ok(out)
}

fn default_lw() -> f64 {
    0.06
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplerParams {
    pub lg_nh: f64,
    #[serde(default = "default_lw")]
    pub lw_nh: f64,
    pub lt_nh: f64,
    /// Junction phase δ, rad.
    #[serde(default)]
    pub delta_rad: f64,
}

impl Default for CouplerParams {
    fn default() -> Self {
        Self { lg_nh: 0.2, lw_nh: 0.06, lt_nh: 0.6, delta_rad: 0.0 }
    }
}

impl CouplerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lg_nh > 0.0) {
            return Err(Error::param("coupler.lg_nh", "must be positive"));
        }
        if !(self.lt_nh > 0.0) {
            return Err(Error::param("coupler.lt_nh", "must be positive"));
        }
        if !(self.lw_nh >= 0.0) {
            return Err(Error::param("coupler.lw_nh", "must be non-negative"));
        }
        Ok(())
    }

    pub fn with_delta(self, delta_rad: f64) -> Self {
        Self { delta_rad, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CableParams {
    pub c_cb_pf_per_m: f64,
    pub l_cb_nh_per_m: f64,
    pub length_m: f64,
    pub c_cpw_pf_per_m: f64,
    pub l_cpw_nh_per_m: f64,
    pub cpw_length_m: f64,
    /// CPW segments in series with the cable: 1 on test chips, 2 for
    /// chip-cable-chip links.
    pub n_cpw: u8,
}

impl CableParams {
    /// 0.25 m of 2.1 mm Al cable between two 6.5 mm CPW transformers.
    pub fn chip_cable_chip() -> Self {
        Self {
            c_cb_pf_per_m: 86.5,
            l_cb_nh_per_m: 216.0,
            length_m: 0.25,
            c_cpw_pf_per_m: 173.0,
            l_cpw_nh_per_m: 402.0,
            cpw_length_m: 6.5e-3,
            n_cpw: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("c_cb_pf_per_m", self.c_cb_pf_per_m),
            ("l_cb_nh_per_m", self.l_cb_nh_per_m),
            ("length_m", self.length_m),
            ("c_cpw_pf_per_m", self.c_cpw_pf_per_m),
            ("l_cpw_nh_per_m", self.l_cpw_nh_per_m),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("cable.{name}"), "must be positive"));
            }
        }
        if !(self.cpw_length_m >= 0.0) {
            return Err(Error::param("cable.cpw_length_m", "must be non-negative"));
        }
        if !matches!(self.n_cpw, 1 | 2) {
            return Err(Error::param("cable.n_cpw", "must be 1 or 2"));
        }
        Ok(())
    }

    /// One-way TEM delay through cable and CPW segments, s.
    pub fn one_way_delay(&self) -> f64 {
        let cable = self.length_m * (nh(self.l_cb_nh_per_m) * pf(self.c_cb_pf_per_m)).sqrt();
        cable + f64::from(self.n_cpw) * self.cpw_length_m * self.cpw_phase_slowness()
    }

    /// √(L·C) of the CPW line, s/m; β_c = ω · slowness.
    pub fn cpw_phase_slowness(&self) -> f64 {
        (nh(self.l_cpw_nh_per_m) * pf(self.c_cpw_pf_per_m)).sqrt()
    }

    /// CPW length that puts the quarter-wave point at `f_ghz`.
    pub fn quarter_wave_length(&self, f_ghz: f64) -> f64 {
        1.0 / (4.0 * f_ghz * 1e9 * self.cpw_phase_slowness())
    }

    /// Lumped series inductance of every standing mode, H.
    pub fn mode_inductance(&self) -> f64 {
        0.5 * (nh(self.l_cb_nh_per_m) * self.length_m
            + f64::from(self.n_cpw) * nh(self.l_cpw_nh_per_m) * self.cpw_length_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandingMode {
    pub m: u32,
    pub omega_rad_s: f64,
    pub l_nh: f64,
    pub c_ff: f64,
    /// Sign applied to the far-end coupling, (−1)^m.
    pub parity_sign: i8,
}

impl StandingMode {
    pub fn inductance(&self) -> f64 {
        nh(self.l_nh)
    }

    pub fn capacitance(&self) -> f64 {
        self.c_ff * 1e-15
    }
}

/// Free spectral range: inverse round-trip delay of the shorted line.
pub fn fsr(cable: &CableParams) -> f64 {
    2.0 * PI / (2.0 * cable.one_way_delay())
}

pub fn parity_sign(m: u32) -> i8 {
    if m % 2 == 0 {
        1
    } else {
        -1
    }
}

pub fn mode_params(cable: &CableParams, m: u32) -> Result<StandingMode> {
    if m < 1 {
        return Err(Error::param("m", "mode number must be ≥ 1"));
    }
    Ok(mode_at(cable, m, f64::from(m) * fsr(cable)))
}

/// Standing mode with its frequency pinned to a measured value; L_m still
/// follows the cable geometry and C_m closes the LC relation.
pub fn mode_at(cable: &CableParams, m: u32, omega_rad_s: f64) -> StandingMode {
    let l = cable.mode_inductance();
    let c = 1.0 / (omega_rad_s * omega_rad_s * l);
    StandingMode {
        m,
        omega_rad_s,
        l_nh: l * 1e9,
        c_ff: c * 1e15,
        parity_sign: parity_sign(m),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterconnectModel {
    pub cable: CableParams,
    pub modes: Vec<StandingMode>,
    pub omega_fsr: f64,
}

impl InterconnectModel {
    pub fn new(cable: CableParams, m_range: std::ops::RangeInclusive<u32>) -> Result<Self> {
        cable.validate()?;
        if m_range.is_empty() || *m_range.start() < 1 {
            return Err(Error::param("m_range", "needs mode numbers ≥ 1"));
        }
        let modes = m_range.map(|m| mode_params(&cable, m)).collect::<Result<Vec<_>>>()?;
        Ok(Self { cable, modes, omega_fsr: fsr(&cable) })
    }

    pub fn mode(&self, m: u32) -> Option<&StandingMode> {
        self.modes.iter().find(|s| s.m == m)
    }
}

/// Effective mutual inductance of the gmon coupler, nH (signed).
///
/// Written as Lg²·cosδ / ((2Lg + Lw)·cosδ + L_T), which equals
/// Lg² / (2Lg + Lw + L_T/cosδ) and stays finite through δ = π/2.
pub fn mutual_inductance(c: &CouplerParams) -> f64 {
    let cos = c.delta_rad.cos();
    let cos = if (c.delta_rad - FRAC_PI_2).abs() < 1e-15 { 0.0 } else { cos };
    c.lg_nh * c.lg_nh * cos / ((2.0 * c.lg_nh + c.lw_nh) * cos + c.lt_nh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingEnd {
    Near,
    Far,
}

/// Qubit–mode coupling g in rad/s, harmonic weak-coupling limit. The far
/// end picks up the mode parity sign.
pub fn coupling_strength(
    q: &QubitParams,
    mode: &StandingMode,
    c: &CouplerParams,
    end: CouplingEnd,
) -> f64 {
    let m = nh(mutual_inductance(c));
    let lg = nh(c.lg_nh);
    let g = -(m / 2.0)
        * (mode.omega_rad_s * q.omega_q() / ((lg + nh(q.lq_nh)) * (lg + mode.inductance()))).sqrt();
    match end {
        CouplingEnd::Near => g,
        CouplingEnd::Far => g * f64::from(mode.parity_sign),
    }
}

/// Coupler bias δ ∈ [0, π/2] reproducing |target_g| (rad/s) on the monotone
/// branch. Zero target returns the off bias π/2.
pub fn solve_coupler_bias(
    target_g: f64,
    q: &QubitParams,
    mode: &StandingMode,
    c: &CouplerParams,
) -> Result<f64> {
    let g_at = |delta: f64| coupling_strength(q, mode, &c.with_delta(delta), CouplingEnd::Near).abs();
    let target = target_g.abs();
    let g_max = g_at(0.0);
    if target > g_max {
        return Err(Error::Range(format!(
            "|g|/2π = {:.4} MHz exceeds the maximum achievable {:.4} MHz",
            target / (2.0 * PI * 1e6),
            g_max / (2.0 * PI * 1e6)
        )));
    }
    if target == 0.0 {
        return Ok(FRAC_PI_2);
    }
    if target == g_max {
        return Ok(0.0);
    }
    // |g| decreases monotonically from δ = 0 to δ = π/2.
    let (mut lo, mut hi) = (0.0f64, FRAC_PI_2);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g_at(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
