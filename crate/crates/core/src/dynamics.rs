//! Lindblad dynamics of two qubits coupled through cable standing modes,
//! and the pulse protocols built on it.
//!
//! The space is ordered sender ⊗ modes ⊗ receiver and the frame rotates at
//! the first mode's frequency. Times are seconds and rates rad/s at the
//! API; the integrator runs in nanoseconds internally.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::devicelab::QubitParams;
use crate::error::{Error, Result};
use crate::hilbert::{
    annihilation, embed, fidelity_pure, partial_trace, pauli_z, CMatrix, DensityMatrix,
    HilbertSpace, Operator, StateVector, C64, I, ONE, ZERO,
};
use crate::ode::{integrate, OdeConfig, OdeStats};
use crate::optim::{levenberg_marquardt, LmConfig};
use crate::tomo::process_inputs;

const NS: f64 = 1e-9;
/// Tolerance for sampled states coming out of the integrator.
pub const STATE_TOL: f64 = 1e-6;
/// Fitted ringdown times above this (seconds) are reported as infinite.
pub const T1R_CAP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QubitRates {
    /// 1/T1, 1/s.
    pub gamma1: f64,
    /// 1/Tφ, 1/s.
    pub gamma_phi: f64,
}

impl QubitRates {
    pub fn from_params(q: &QubitParams) -> Self {
        Self { gamma1: q.gamma1(), gamma_phi: q.gamma_phi() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityMode {
    /// Offset from the frame frequency, rad/s.
    pub detuning: f64,
    /// Energy decay rate ω_m/Q_int, 1/s.
    pub kappa: f64,
    /// Applied to the receiver coupling.
    pub parity_sign: i8,
    /// Multiplies both channel couplings for this mode.
    pub coupling_scale: f64,
}

impl CavityMode {
    pub fn resonant(kappa: f64, parity_sign: i8) -> Self {
        Self { detuning: 0.0, kappa, parity_sign, coupling_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatingFrameModel {
    pub sender: QubitRates,
    pub receiver: QubitRates,
    pub modes: Vec<CavityMode>,
    /// Fock truncation of every mode.
    pub mode_dim: usize,
}

impl RotatingFrameModel {
    pub fn single_mode(
        sender: QubitRates,
        receiver: QubitRates,
        kappa: f64,
        parity_sign: i8,
        mode_dim: usize,
    ) -> Self {
        Self { sender, receiver, modes: vec![CavityMode::resonant(kappa, parity_sign)], mode_dim }
    }

    pub fn noiseless(parity_sign: i8) -> Self {
        Self::single_mode(QubitRates::default(), QubitRates::default(), 0.0, parity_sign, 3)
    }

    /// Rates from tabulated qubit parameters and a mode lifetime T1r (s).
    pub fn from_device(
        sender: &QubitParams,
        receiver: &QubitParams,
        t1r: f64,
        parity_sign: i8,
        mode_dim: usize,
    ) -> Self {
        let kappa = if t1r.is_infinite() { 0.0 } else { 1.0 / t1r };
        Self::single_mode(
            QubitRates::from_params(sender),
            QubitRates::from_params(receiver),
            kappa,
            parity_sign,
            mode_dim,
        )
    }

    /// Modes `m` and `m + 1`, frame on `m`; couplings scale as √ω_m.
    pub fn two_mode(sender: QubitRates, receiver: QubitRates, m: u32, fsr: f64, kappas: [f64; 2], mode_dim: usize) -> Self {
        let sign = |k: u32| if k % 2 == 0 { 1 } else { -1 };
        let modes = vec![
            CavityMode { detuning: 0.0, kappa: kappas[0], parity_sign: sign(m), coupling_scale: 1.0 },
            CavityMode {
                detuning: fsr,
                kappa: kappas[1],
                parity_sign: sign(m + 1),
                coupling_scale: (f64::from(m + 1) / f64::from(m)).sqrt(),
            },
        ];
        Self { sender, receiver, modes, mode_dim }
    }

    pub fn without_decoherence(&self) -> Self {
        let mut out = self.clone();
        out.sender = QubitRates::default();
        out.receiver = QubitRates::default();
        for m in &mut out.modes {
            m.kappa = 0.0;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("sender", &self.sender), ("receiver", &self.receiver)] {
            if !(r.gamma1 >= 0.0 && r.gamma_phi >= 0.0) {
                return Err(Error::param(name, "decoherence rates must be non-negative"));
            }
        }
        if self.modes.is_empty() {
            return Err(Error::param("modes", "need at least one mode"));
        }
        for m in &self.modes {
            if !(m.kappa >= 0.0) {
                return Err(Error::param("kappa", "must be non-negative"));
            }
            if !matches!(m.parity_sign, 1 | -1) {
                return Err(Error::param("parity_sign", "must be ±1"));
            }
            if !m.detuning.is_finite() || !m.coupling_scale.is_finite() {
                return Err(Error::param("modes", "must be finite"));
            }
        }
        if self.mode_dim < 2 {
            return Err(Error::param("mode_dim", "truncation must be ≥ 2"));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<HilbertSpace> {
        let mut dims = vec![2];
        dims.extend(std::iter::repeat_n(self.mode_dim, self.modes.len()));
        dims.push(2);
        HilbertSpace::new(dims)
    }

    pub fn receiver_index(&self) -> usize {
        self.modes.len() + 1
    }

    /// Product of two qubit states with every mode in vacuum.
    pub fn product_state(&self, sender: &CMatrix, receiver: &CMatrix) -> Result<DensityMatrix> {
        let mut vac = CMatrix::zeros(self.mode_dim, self.mode_dim);
        vac[(0, 0)] = ONE;
        let mut m = sender.clone();
        for _ in &self.modes {
            m = m.kronecker(&vac);
        }
        DensityMatrix::new(self.space()?, m.kronecker(receiver))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeProfile {
    Rectangular,
    /// Raised-cosine rise and fall of `ramp` seconds on the coupling channels.
    RaisedCosine { ramp: f64 },
}

impl Default for EdgeProfile {
    fn default() -> Self {
        EdgeProfile::RaisedCosine { ramp: 4.0 * NS }
    }
}

impl EdgeProfile {
    fn ramp(&self, duration: f64) -> f64 {
        match *self {
            EdgeProfile::Rectangular => 0.0,
            EdgeProfile::RaisedCosine { ramp } => ramp.min(0.5 * duration),
        }
    }

    /// Coupling envelope in [0, 1] at time `t` into a segment.
    pub fn envelope(&self, t: f64, duration: f64) -> f64 {
        let r = self.ramp(duration);
        if r <= 0.0 {
            return 1.0;
        }
        let edge = t.min(duration - t).max(0.0);
        if edge >= r {
            1.0
        } else {
            0.5 * (1.0 - (PI * edge / r).cos())
        }
    }

    /// ∫ envelope over a segment.
    pub fn area(&self, duration: f64) -> f64 {
        duration - self.ramp(duration)
    }

    /// Segment duration whose envelope area equals `area`.
    pub fn duration_for_area(&self, area: f64) -> f64 {
        match *self {
            EdgeProfile::Rectangular => area,
            EdgeProfile::RaisedCosine { ramp } => {
                if area >= ramp {
                    area + ramp
                } else {
                    2.0 * area
                }
            }
        }
    }

    /// Segment duration for a flat top of `flat` seconds plus both ramps.
    pub fn padded(&self, flat: f64) -> f64 {
        match *self {
            EdgeProfile::Rectangular => flat,
            EdgeProfile::RaisedCosine { ramp } => flat + 2.0 * ramp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Setpoints {
    /// Qubit detunings from the frame, rad/s.
    pub delta_q1: f64,
    pub delta_q2: f64,
    /// Peak couplings, rad/s.
    pub g1: f64,
    pub g2: f64,
}

impl Setpoints {
    pub fn couple(g1: f64, g2: f64) -> Self {
        Self { g1, g2, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Seconds.
    pub duration: f64,
    pub setpoints: Setpoints,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub segments: Vec<Segment>,
    pub edge: EdgeProfile,
}

impl ControlSchedule {
    pub fn new(edge: EdgeProfile) -> Self {
        Self { segments: Vec::new(), edge }
    }

    /// Append a segment; zero-length segments are dropped.
    pub fn then(mut self, duration: f64, setpoints: Setpoints) -> Self {
        if duration != 0.0 {
            self.segments.push(Segment { duration, setpoints });
        }
        self
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration > 0.0 && s.duration.is_finite()) {
                return Err(Error::param(format!("segments[{i}].duration"), "must be positive"));
            }
            let p = s.setpoints;
            if ![p.delta_q1, p.delta_q2, p.g1, p.g2].iter().all(|v| v.is_finite()) {
                return Err(Error::param(format!("segments[{i}].setpoints"), "must be finite"));
            }
        }
        if let EdgeProfile::RaisedCosine { ramp } = self.edge {
            if !(ramp >= 0.0) {
                return Err(Error::param("edge.ramp", "must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// ⟨n⟩ of every subsystem at each sample time (P1 for qubits).
    pub excitations: Vec<Vec<f64>>,
    pub final_state: DensityMatrix,
    /// Largest |Tr ρ − 1| seen at any accepted step.
    pub max_trace_drift: f64,
    pub stats: OdeStats,
}

/// Operators of the model in units of 1/ns.
struct Generators {
    n1: CMatrix,
    n2: CMatrix,
    modes: CMatrix,
    v1: CMatrix,
    v2: CMatrix,
    jumps: Vec<CMatrix>,
    /// −(i/2) Σ c†c.
    damping: CMatrix,
}

fn local_embed(m: CMatrix, sub: usize, space: &HilbertSpace) -> Result<CMatrix> {
    Ok(embed(&Operator::local(m)?, sub, space)?.into_matrix())
}

impl Generators {
    fn new(model: &RotatingFrameModel, space: &HilbertSpace) -> Result<Self> {
        let d = space.dim();
        let sm = annihilation(2);
        let rx = model.receiver_index();
        let s1 = local_embed(sm.clone(), 0, space)?;
        let s2 = local_embed(sm, rx, space)?;
        let n1 = s1.adjoint() * &s1;
        let n2 = s2.adjoint() * &s2;
        let mut modes = CMatrix::zeros(d, d);
        let mut v1 = CMatrix::zeros(d, d);
        let mut v2 = CMatrix::zeros(d, d);
        let mut jumps = Vec::new();
        for (k, mode) in model.modes.iter().enumerate() {
            let a = local_embed(annihilation(model.mode_dim), k + 1, space)?;
            let ad = a.adjoint();
            modes += &ad * &a * C64::new(mode.detuning * NS, 0.0);
            let x1 = &s1 * &ad + s1.adjoint() * &a;
            let x2 = &s2 * &ad + s2.adjoint() * &a;
            v1 += x1 * C64::new(mode.coupling_scale, 0.0);
            v2 += x2 * C64::new(mode.coupling_scale * f64::from(mode.parity_sign), 0.0);
            if mode.kappa > 0.0 {
                jumps.push(a * C64::new((mode.kappa * NS).sqrt(), 0.0));
            }
        }
        for (sub, rates) in [(0, &model.sender), (rx, &model.receiver)] {
            if rates.gamma1 > 0.0 {
                let s = local_embed(annihilation(2), sub, space)?;
                jumps.push(s * C64::new((rates.gamma1 * NS).sqrt(), 0.0));
            }
            if rates.gamma_phi > 0.0 {
                let z = local_embed(pauli_z(), sub, space)?;
                jumps.push(z * C64::new((0.5 * rates.gamma_phi * NS).sqrt(), 0.0));
            }
        }
        let mut damping = CMatrix::zeros(d, d);
        for c in &jumps {
            damping += c.adjoint() * c;
        }
        damping *= C64::new(0.0, -0.5);
        Ok(Self { n1, n2, modes, v1, v2, jumps, damping })
    }

    fn static_part(&self, p: &Setpoints) -> CMatrix {
        &self.modes + &self.n1 * C64::new(p.delta_q1 * NS, 0.0) + &self.n2 * C64::new(p.delta_q2 * NS, 0.0)
    }

    fn rhs(&self, h_static: &CMatrix, p: &Setpoints, env: f64, rho: &CMatrix) -> CMatrix {
        let mut h_eff = h_static + &self.damping;
        if p.g1 != 0.0 {
            h_eff += &self.v1 * C64::new(env * p.g1 * NS, 0.0);
        }
        if p.g2 != 0.0 {
            h_eff += &self.v2 * C64::new(env * p.g2 * NS, 0.0);
        }
        let left = &h_eff * rho;
        let mut out = (&left - rho * h_eff.adjoint()) * (-I);
        for c in &self.jumps {
            out += c * rho * c.adjoint();
        }
        out
    }
}

fn excitation_digits(space: &HilbertSpace) -> Vec<Vec<usize>> {
    (0..space.dim()).map(|i| space.digits_of(i)).collect()
}

fn excitations(rho: &CMatrix, digits: &[Vec<usize>], n_sub: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_sub];
    for (i, dg) in digits.iter().enumerate() {
        let p = rho[(i, i)].re;
        for (slot, &x) in out.iter_mut().zip(dg) {
            *slot += p * x as f64;
        }
    }
    out
}

fn hermitize(m: CMatrix) -> CMatrix {
    (&m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Integrate the master equation over a schedule, sampling at
/// `sample_times` (seconds, sorted, within the schedule).
pub fn evolve_lindblad(
    model: &RotatingFrameModel,
    rho0: &DensityMatrix,
    schedule: &ControlSchedule,
    sample_times: &[f64],
) -> Result<EvolutionResult> {
    model.validate()?;
    schedule.validate()?;
    let space = model.space()?;
    if rho0.space() != &space {
        return Err(Error::Dimension(format!(
            "initial state lives on {:?}, model space is {:?}",
            rho0.space().dims(),
            space.dims()
        )));
    }
    let total = schedule.total_duration();
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("sample_times", "must be sorted"));
    }
    if let Some(&t) = sample_times.iter().find(|&&t| t < 0.0 || t > total * (1.0 + 1e-12)) {
        return Err(Error::param("sample_times", format!("{t:.3e} s lies outside [0, {total:.3e}] s")));
    }
    let gens = Generators::new(model, &space)?;
    let digits = excitation_digits(&space);
    let n_sub = space.num_subsystems();
    let cfg = OdeConfig::default();
    let mut stats = OdeStats::default();

    let mut raw: Vec<(f64, CMatrix)> = Vec::with_capacity(sample_times.len());
    let mut next = 0;
    while next < sample_times.len() && sample_times[next] <= 0.0 {
        raw.push((sample_times[next], rho0.matrix().clone()));
        next += 1;
    }
    let mut rho = rho0.matrix().clone();
    let mut drift: f64 = 0.0;
    let mut t_start = 0.0;
    let mut h = None;
    for (i, seg) in schedule.segments.iter().enumerate() {
        let is_last = i + 1 == schedule.segments.len();
        let t_end = if is_last { total } else { t_start + seg.duration };
        let mut seg_samples = Vec::new();
        while next < sample_times.len() && (sample_times[next] <= t_end || is_last) {
            seg_samples.push((sample_times[next].min(t_end) - t_start) / NS);
            next += 1;
        }
        let h_static = gens.static_part(&seg.setpoints);
        let dur_ns = seg.duration / NS;
        let p = seg.setpoints;
        let edge_ns = match schedule.edge {
            EdgeProfile::Rectangular => EdgeProfile::Rectangular,
            EdgeProfile::RaisedCosine { ramp } => EdgeProfile::RaisedCosine { ramp: ramp / NS },
        };
        let rhs = |t: f64, y: &CMatrix| gens.rhs(&h_static, &p, edge_ns.envelope(t, dur_ns), y);
        let base = t_start;
        let (y, h_last) = integrate(
            rhs,
            0.0,
            dur_ns,
            rho,
            h,
            &seg_samples,
            &cfg,
            &mut stats,
            |ts, ys| raw.push((base + ts * NS, ys)),
            |_, ys| drift = drift.max((ys.trace() - ONE).norm()),
        )
        .map_err(|e| match e {
            Error::Integrator { t, reason } => Error::Integrator { t: base + t * NS, reason },
            other => other,
        })?;
        rho = y;
        h = Some(h_last);
        t_start = t_end;
    }
    while next < sample_times.len() {
        raw.push((sample_times[next], rho.clone()));
        next += 1;
    }

    let mut times = Vec::with_capacity(raw.len());
    let mut states = Vec::with_capacity(raw.len());
    let mut exc = Vec::with_capacity(raw.len());
    for (t, m) in raw {
        let m = hermitize(m);
        exc.push(excitations(&m, &digits, n_sub));
        times.push(t);
        states.push(DensityMatrix::with_tolerance(space.clone(), m, STATE_TOL)?);
    }
    let final_state = DensityMatrix::with_tolerance(space, hermitize(rho), STATE_TOL)?;
    Ok(EvolutionResult { times, states, excitations: exc, final_state, max_trace_drift: drift, stats })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChevronMap {
    /// Qubit–mode detunings, rad/s.
    pub detunings: Vec<f64>,
    /// Seconds.
    pub times: Vec<f64>,
    /// `p1[i][j]`: sender P1 at `detunings[i]`, `times[j]`.
    pub p1: Vec<Vec<f64>>,
}

fn excited() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, ONE])
}

fn ground() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO])
}

/// Sender starts in |1⟩ with its coupler held at `g`; one row per detuning.
pub fn vacuum_rabi_chevron(
    model: &RotatingFrameModel,
    g: f64,
    detunings: &[f64],
    times: &[f64],
) -> Result<ChevronMap> {
    if detunings.is_empty() || times.is_empty() {
        return Err(Error::Precondition("chevron grids must be non-empty".into()));
    }
    let rho0 = model.product_state(&excited(), &ground())?;
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rows: Vec<Vec<f64>> = detunings
        .par_iter()
        .map(|&delta| -> Result<Vec<f64>> {
            if t_max == 0.0 {
                return Ok(vec![1.0; times.len()]);
            }
            let sched = ControlSchedule::new(EdgeProfile::Rectangular)
                .then(t_max, Setpoints { delta_q1: delta, g1: g, ..Setpoints::default() });
            let res = evolve_lindblad(model, &rho0, &sched, &sorted)?;
            Ok(times
                .iter()
                .map(|t| {
                    let k = sorted.partition_point(|s| s < t);
                    res.excitations[k][0]
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(ChevronMap { detunings: detunings.to_vec(), times: times.to_vec(), p1: rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpFitMethod {
    LogLinear,
    Bounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingdownResult {
    /// Seconds.
    pub waits: Vec<f64>,
    pub p1: Vec<f64>,
    /// Seconds; infinite when the decay is slower than [`T1R_CAP`].
    pub t1r: f64,
    pub amplitude: f64,
    pub method: ExpFitMethod,
}

/// Fit y = A·exp(−t/T). Log-linear when every sample is positive, bounded
/// nonlinear otherwise. Returns (A, T, method).
pub fn fit_exponential(t: &[f64], y: &[f64]) -> Result<(f64, f64, ExpFitMethod)> {
    if t.len() != y.len() || t.len() < 2 {
        return Err(Error::Precondition("exponential fit needs ≥ 2 paired samples".into()));
    }
    let to_t = |rate: f64| if rate <= 1.0 / T1R_CAP { f64::INFINITY } else { 1.0 / rate };
    if y.iter().all(|&v| v > 0.0) {
        let n = t.len() as f64;
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let mt = t.iter().sum::<f64>() / n;
        let ml = ly.iter().sum::<f64>() / n;
        let sxx: f64 = t.iter().map(|x| (x - mt).powi(2)).sum();
        if sxx == 0.0 {
            return Err(Error::Precondition("wait grid has no spread".into()));
        }
        let sxy: f64 = t.iter().zip(&ly).map(|(x, l)| (x - mt) * (l - ml)).sum();
        let slope = sxy / sxx;
        let amp = (ml - slope * mt).exp();
        return Ok((amp, to_t(-slope), ExpFitMethod::LogLinear));
    }
    let t_scale = t.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let y0 = y.iter().copied().fold(0.0, f64::max).max(1e-12);
    let f = |x: &[f64]| -> Vec<f64> {
        let (a, k) = (x[0].exp(), x[1].exp());
        t.iter().zip(y).map(|(ti, yi)| a * (-k * ti / t_scale).exp() - yi).collect()
    };
    let res = levenberg_marquardt(f, &[y0.ln(), 0.0], &LmConfig::default());
    if !res.converged {
        return Err(Error::Fit("bounded exponential fit did not converge".into()));
    }
    let rate = res.params[1].exp() / t_scale;
    Ok((res.params[0].exp(), to_t(rate), ExpFitMethod::Bounded))
}

/// Swap a photon into the mode, wait, swap it back, read P1.
pub fn t1r_ringdown(
    model: &RotatingFrameModel,
    g: f64,
    waits: &[f64],
    edge: EdgeProfile,
) -> Result<RingdownResult> {
    if g == 0.0 {
        return Err(Error::Precondition("swap needs a non-zero coupling".into()));
    }
    if waits.iter().any(|&w| w < 0.0) {
        return Err(Error::param("waits", "must be non-negative"));
    }
    let swap = edge.duration_for_area(FRAC_PI_2 / g.abs());
    let rho0 = model.product_state(&excited(), &ground())?;
    let p1: Vec<f64> = waits
        .par_iter()
        .map(|&w| -> Result<f64> {
            let on = Setpoints::couple(g, 0.0);
            let sched = ControlSchedule::new(edge)
                .then(swap, on)
                .then(w, Setpoints::default())
                .then(swap, on);
            let res = evolve_lindblad(model, &rho0, &sched, &[])?;
            let d = res.final_state.matrix();
            let digits = excitation_digits(res.final_state.space());
            Ok(excitations(d, &digits, digits[0].len())[0])
        })
        .collect::<Result<_>>()?;
    let (amplitude, t1r, method) = fit_exponential(waits, &p1)?;
    Ok(RingdownResult { waits: waits.to_vec(), p1, t1r, amplitude, method })
}

fn qst_schedule(g0: f64, tau: f64, edge: EdgeProfile) -> ControlSchedule {
    let sched = ControlSchedule::new(edge);
    if tau > 0.0 {
        sched.then(edge.padded(tau), Setpoints::couple(g0, g0))
    } else {
        sched
    }
}

fn two_qubit(model: &RotatingFrameModel, rho: &DensityMatrix) -> Result<DensityMatrix> {
    partial_trace(rho, &[0, model.receiver_index()])
}

/// Simultaneous resonant coupling of both qubits for a flat top of `tau`;
/// returns the two-qubit state with the modes traced out.
pub fn qst_protocol(
    model: &RotatingFrameModel,
    g0: f64,
    tau: f64,
    edge: EdgeProfile,
    sender: &CMatrix,
) -> Result<DensityMatrix> {
    if !(tau >= 0.0) {
        return Err(Error::param("tau", "must be non-negative"));
    }
    let rho0 = model.product_state(sender, &ground())?;
    let res = evolve_lindblad(model, &rho0, &qst_schedule(g0, tau, edge), &[])?;
    two_qubit(model, &res.final_state)
}

/// Ideal transfer time π/(√2·g0).
pub fn qst_ideal_time(g0: f64) -> f64 {
    PI / (std::f64::consts::SQRT_2 * g0.abs())
}

fn receiver_state(two: &DensityMatrix) -> Result<CMatrix> {
    Ok(partial_trace(two, &[1])?.into_matrix())
}

fn rz(phi: f64) -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, C64::from_polar(1.0, phi)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferChannel {
    pub inputs: Vec<CMatrix>,
    /// Receiver states after the phase correction.
    pub outputs: Vec<CMatrix>,
    /// Deterministic receiver phase removed by a virtual Z, rad.
    pub phase: f64,
}

/// Receiver outputs for the process-tomography inputs, phase-corrected with
/// the noiseless transfer phase.
pub fn qst_channel(model: &RotatingFrameModel, g0: f64, tau: f64, edge: EdgeProfile) -> Result<TransferChannel> {
    let plus = process_inputs()[2].clone();
    let ideal = qst_protocol(&model.without_decoherence(), g0, tau, edge, &plus)?;
    let r = receiver_state(&ideal)?;
    let phase = if r[(1, 0)].norm() > 1e-9 { r[(1, 0)].arg() } else { 0.0 };
    let fix = rz(-phase);
    let inputs = process_inputs().to_vec();
    let outputs = inputs
        .par_iter()
        .map(|input| -> Result<CMatrix> {
            let two = qst_protocol(model, g0, tau, edge, input)?;
            let r = receiver_state(&two)?;
            Ok(&fix * r * fix.adjoint())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferChannel { inputs, outputs, phase })
}

#[derive(Debug, Clone)]
pub struct BellResult {
    pub state: DensityMatrix,
    /// φ in (|10⟩ + e^{iφ}|01⟩)/√2, from the noiseless run.
    pub phase: f64,
    pub fidelity: f64,
}

fn bell_schedule(g0: f64, tau_b: f64, edge: EdgeProfile) -> ControlSchedule {
    let sched = ControlSchedule::new(edge);
    let sched = if tau_b > 0.0 { sched.then(edge.padded(tau_b), Setpoints::couple(g0, 0.0)) } else { sched };
    sched.then(edge.duration_for_area(FRAC_PI_2 / g0.abs()), Setpoints::couple(0.0, g0))
}

pub fn bell_target(phase: f64) -> Result<StateVector> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    StateVector::from_slice(
        HilbertSpace::qubits(2)?,
        &[ZERO, C64::from_polar(s, phase), C64::new(s, 0.0), ZERO],
    )
}

/// Sender shares half a photon with the mode for `tau_b`, then the mode is
/// swapped into the receiver.
pub fn bell_protocol(model: &RotatingFrameModel, g0: f64, tau_b: f64, edge: EdgeProfile) -> Result<BellResult> {
    if g0 == 0.0 {
        return Err(Error::Precondition("Bell protocol needs a non-zero coupling".into()));
    }
    let run = |m: &RotatingFrameModel| -> Result<DensityMatrix> {
        let rho0 = m.product_state(&excited(), &ground())?;
        let res = evolve_lindblad(m, &rho0, &bell_schedule(g0, tau_b, edge), &[])?;
        two_qubit(m, &res.final_state)
    };
    let ideal = run(&model.without_decoherence())?;
    let c = ideal.matrix()[(1, 2)];
    let phase = if c.norm() > 1e-9 { c.arg() } else { 0.0 };
    let state = run(model)?;
    let fidelity = fidelity_pure(&state, &bell_target(phase)?)?;
    Ok(BellResult { state, phase, fidelity })
}

/// Stage-one duration that leaves half the photon in the sender.
pub fn bell_half_time(g0: f64) -> f64 {
    FRAC_PI_4 / g0.abs()
}
