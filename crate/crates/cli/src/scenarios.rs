//! Scenario construction and execution.
//!
//! [`prepare`] resolves every input and builds the models without running
//! anything; [`Plan::execute`] does the work and returns the data files.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use qlink_core::circuits::{
    build_ghz_circuit, simulate_ghz_fidelity, simulate_trajectories, Circuit, GhzStep, NoiseModel,
};
use qlink_core::devicelab::{mode_at, parity_sign, read_qubit_table, CableParams, QubitParams};
use qlink_core::dynamics::{
    bell_half_time, bell_protocol, bell_target, qst_channel, t1r_ringdown, vacuum_rabi_chevron, EdgeProfile,
    QubitRates, RotatingFrameModel,
};
use qlink_core::hilbert::{fidelity_pure, DensityMatrix, HilbertSpace, C64};
use qlink_core::lossfit::{
    fit_hanger_with_asymmetry, fit_loss_model, q_int, read_q_data, s21_hanger, t1r_from_q,
    HangerResonance, LossFitOptions, LossGeometry, QDataPoint, ResidualScale,
};
use qlink_core::reference;
use qlink_core::tomo::{
    bootstrap_repeats, measure_state, process_fidelity, process_tomography, state_tomography, write_matrix_csv,
    ConfusionMatrix, ProcessMatrix, TomographySettings,
};
use qlink_core::units::{ghz_to_rad_s, mhz_to_rad_s};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use crate::config::*;
use crate::error::CliError;

const NS: f64 = 1e-9;
const US: f64 = 1e-6;

/// Data files keyed by file name, plus the run summary.
#[derive(Debug, Clone, Default)]
pub struct Output {
    pub files: BTreeMap<String, Vec<u8>>,
    pub summary: BTreeMap<String, Value>,
}

impl Output {
    fn put(&mut self, key: &str, v: impl Into<Value>) {
        self.summary.insert(key.into(), v.into());
    }
}

/// A fully resolved scenario ready to execute.
#[derive(Debug, Clone)]
pub enum Plan {
    Chevron { model: RotatingFrameModel, g: f64, detunings: Vec<f64>, times: Vec<f64> },
    Ringdown { model: RotatingFrameModel, g: f64, waits: Vec<f64>, edge: EdgeProfile, t1r: f64 },
    Qst(TransferPlan),
    Bell(TransferPlan),
    Ghz { steps: Vec<(GhzStep, Circuit)>, noise: NoiseModel, params: GhzParams, seed: u64 },
    Lossfit { points: Vec<QDataPoint>, geometry: LossGeometry, opts: LossFitOptions },
    Hanger { freqs: Vec<f64>, trace: Vec<C64>, truth: Option<HangerResonance>, asymmetry: f64 },
}

#[derive(Debug, Clone)]
pub struct TransferPlan {
    pub model: RotatingFrameModel,
    pub g: f64,
    pub tau: f64,
    pub edge: EdgeProfile,
    pub tomography: TomographyParams,
    /// Readout of (sender, receiver).
    pub confusion: [ConfusionMatrix; 2],
    pub seed: u64,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

fn require(ok: bool, path: &str, message: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::field(path, message))
    }
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    require(v.is_finite() && v > 0.0, path, "must be positive and finite")
}

fn edge(path: &str, ramp_ns: f64) -> Result<EdgeProfile, CliError> {
    require(ramp_ns.is_finite() && ramp_ns >= 0.0, path, "must be ≥ 0")?;
    Ok(if ramp_ns == 0.0 { EdgeProfile::Rectangular } else { EdgeProfile::RaisedCosine { ramp: ramp_ns * NS } })
}

fn existing(cfg: &Config, path: &Path, field: &str) -> Result<std::path::PathBuf, CliError> {
    let p = cfg.resolve(path);
    if !p.is_file() {
        return Err(CliError::field(field, format!("file `{}` does not exist", p.display())));
    }
    Ok(p)
}

fn qubit(table: &[QubitParams], spec: &QubitSpec, path: &str) -> Result<QubitParams, CliError> {
    let mut q = table
        .iter()
        .find(|q| q.label == spec.label)
        .cloned()
        .ok_or_else(|| CliError::field(format!("{path}.label"), format!("no qubit `{}` in the device table", spec.label)))?;
    if let Some(v) = spec.t1_us {
        positive(&format!("{path}.t1_us"), v)?;
        q.t1_us = v;
    }
    if let Some(v) = spec.tphi_us {
        positive(&format!("{path}.tphi_us"), v)?;
        q.tphi_us = v;
    }
    for (name, v, slot) in [("f0", spec.f0, &mut q.f0), ("f1", spec.f1, &mut q.f1)] {
        if let Some(v) = v {
            require((0.0..=1.0).contains(&v), &format!("{path}.{name}"), "must lie in [0, 1]")?;
            *slot = v;
        }
    }
    Ok(q)
}

struct Device {
    sender: QubitParams,
    receiver: QubitParams,
    model: RotatingFrameModel,
}

fn device(cfg: &Config, d: &DeviceParams, t1r_s: f64) -> Result<Device, CliError> {
    let table = match &d.device_file {
        Some(f) => {
            let p = existing(cfg, f, "params.device.device_file")?;
            let file = std::fs::File::open(&p).map_err(|e| CliError::io(&p, e))?;
            read_qubit_table(file).map_err(|e| CliError::core("devicelab", "params.device.device_file", e))?
        }
        None => reference::qubit_table(),
    };
    let sender = qubit(&table, &d.sender, "params.device.sender")?;
    let receiver = qubit(&table, &d.receiver, "params.device.receiver")?;
    require(d.mode_m >= 1, "params.device.mode_m", "must be ≥ 1")?;
    require((2..=8).contains(&d.mode_dim), "params.device.mode_dim", "must lie in 2..=8")?;
    let mut model = RotatingFrameModel::from_device(&sender, &receiver, t1r_s, parity_sign(d.mode_m), d.mode_dim);
    if !d.decoherence {
        model.sender = QubitRates::default();
        model.receiver = QubitRates::default();
    }
    model.validate().map_err(|e| CliError::core("dynamics", "params.device", e))?;
    Ok(Device { sender, receiver, model })
}

fn mode_lifetime(d: &DeviceParams) -> Result<f64, CliError> {
    require(d.t1r_us > 0.0, "params.device.t1r_us", "must be positive (inf for a lossless mode)")?;
    Ok(d.t1r_us * US)
}

fn seed_of(cfg: &Config) -> u64 {
    cfg.seed.unwrap_or(0)
}

/// Resolve inputs and build models without executing.
pub fn prepare(cfg: &Config) -> Result<Plan, CliError> {
    if cfg.params.is_stochastic() && cfg.seed.is_none() {
        return Err(CliError::field("seed", format!("required for the stochastic `{}` scenario", cfg.scenario)));
    }
    if let Some(t) = cfg.threads {
        require(t >= 1, "threads", "must be ≥ 1")?;
    }
    match &cfg.params {
        Params::Chevron(p) => {
            let dev = device(cfg, &p.device, mode_lifetime(&p.device)?)?;
            positive("params.g_mhz", p.g_mhz)?;
            positive("params.t_max_ns", p.t_max_ns)?;
            require(p.detuning_points >= 1, "params.detuning_points", "must be ≥ 1")?;
            require(p.time_points >= 2, "params.time_points", "must be ≥ 2")?;
            require(
                p.detuning_min_mhz <= p.detuning_max_mhz,
                "params.detuning_max_mhz",
                "must not be below detuning_min_mhz",
            )?;
            Ok(Plan::Chevron {
                model: dev.model,
                g: mhz_to_rad_s(p.g_mhz),
                detunings: linspace(p.detuning_min_mhz, p.detuning_max_mhz, p.detuning_points)
                    .into_iter()
                    .map(mhz_to_rad_s)
                    .collect(),
                times: linspace(0.0, p.t_max_ns * NS, p.time_points),
            })
        }
        Params::Ringdown(p) => {
            positive("params.q_int", p.q_int)?;
            positive("params.freq_ghz", p.freq_ghz)?;
            positive("params.g_mhz", p.g_mhz)?;
            positive("params.wait_max_us", p.wait_max_us)?;
            require(p.wait_points >= 2, "params.wait_points", "must be ≥ 2")?;
            let t1r = t1r_from_q(p.q_int, ghz_to_rad_s(p.freq_ghz));
            let dev = device(cfg, &p.device, t1r)?;
            Ok(Plan::Ringdown {
                model: dev.model,
                g: mhz_to_rad_s(p.g_mhz),
                waits: linspace(0.0, p.wait_max_us * US, p.wait_points),
                edge: edge("params.ramp_ns", p.ramp_ns)?,
                t1r,
            })
        }
        Params::Qst(p) => {
            let dev = device(cfg, &p.device, mode_lifetime(&p.device)?)?;
            positive("params.g_mhz", p.g_mhz)?;
            require(p.tau_ns.is_finite() && p.tau_ns >= 0.0, "params.tau_ns", "must be ≥ 0")?;
            Ok(Plan::Qst(transfer(cfg, dev, p.g_mhz, p.tau_ns * NS, edge("params.ramp_ns", p.ramp_ns)?, &p.tomography)?))
        }
        Params::Bell(p) => {
            let dev = device(cfg, &p.device, mode_lifetime(&p.device)?)?;
            positive("params.g_mhz", p.g_mhz)?;
            let g = mhz_to_rad_s(p.g_mhz);
            let tau = match p.tau_ns {
                Some(t) => {
                    require(t.is_finite() && t >= 0.0, "params.tau_ns", "must be ≥ 0")?;
                    t * NS
                }
                None => bell_half_time(g),
            };
            Ok(Plan::Bell(transfer(cfg, dev, p.g_mhz, tau, edge("params.ramp_ns", p.ramp_ns)?, &p.tomography)?))
        }
        Params::Ghz(p) => prepare_ghz(cfg, p),
        Params::Lossfit(p) => {
            let points = match &p.data_file {
                Some(f) => {
                    let path = existing(cfg, f, "params.data_file")?;
                    let file = std::fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
                    read_q_data(file).map_err(|e| CliError::core("lossfit", "params.data_file", e))?
                }
                None => reference::five_mode_data(),
            };
            positive("params.match_ghz", p.match_ghz)?;
            require(p.max_iter >= 1, "params.max_iter", "must be ≥ 1")?;
            let base = CableParams::chip_cable_chip();
            let cable = CableParams { cpw_length_m: base.quarter_wave_length(p.match_ghz), ..base };
            cable.validate().map_err(|e| CliError::core("devicelab", "params", e))?;
            let residual = match p.residual {
                Residual::Linear => ResidualScale::Linear,
                Residual::Log => ResidualScale::Log,
            };
            Ok(Plan::Lossfit {
                points,
                geometry: LossGeometry { cable, n_bonds: p.n_bonds },
                opts: LossFitOptions { residual, max_iter: p.max_iter },
            })
        }
        Params::Hanger(p) => prepare_hanger(cfg, p),
    }
}

fn transfer(
    cfg: &Config,
    dev: Device,
    g_mhz: f64,
    tau: f64,
    edge: EdgeProfile,
    tomo: &TomographyParams,
) -> Result<TransferPlan, CliError> {
    require(tomo.repeats >= 1, "params.tomography.repeats", "must be ≥ 1")?;
    let conf = |q: &QubitParams, path: &str| {
        ConfusionMatrix::new(q.f0, q.f1).map_err(|e| CliError::core("tomo", path, e))
    };
    Ok(TransferPlan {
        model: dev.model,
        g: mhz_to_rad_s(g_mhz),
        tau,
        edge,
        tomography: tomo.clone(),
        confusion: [conf(&dev.sender, "params.device.sender")?, conf(&dev.receiver, "params.device.receiver")?],
        seed: seed_of(cfg),
    })
}

fn prepare_ghz(cfg: &Config, p: &GhzParams) -> Result<Plan, CliError> {
    require(!p.steps.is_empty(), "params.steps", "must list at least one step")?;
    require(p.n_traj >= 2, "params.n_traj", "must be ≥ 2")?;
    let mut steps = Vec::new();
    for (i, s) in p.steps.iter().enumerate() {
        let step: GhzStep = s.parse().map_err(|_| CliError::field(format!("params.steps[{i}]"), format!("unknown GHZ step `{s}`")))?;
        if steps.iter().any(|(k, _)| *k == step) {
            return Err(CliError::field(format!("params.steps[{i}]"), format!("step {step} listed twice")));
        }
        let circuit = build_ghz_circuit(step, &p.layout).map_err(|e| CliError::core("circuits", "params.layout", e))?;
        steps.push((step, circuit));
    }
    let n_max = steps.iter().map(|(s, _)| s.n_qubits()).max().unwrap_or(0);
    require(
        p.gamma_points > 2 * n_max,
        "params.gamma_points",
        &format!("must exceed twice the largest register ({n_max} qubits)"),
    )?;
    let n = &p.noise;
    let mut noise = match n.preset {
        NoisePreset::Calibrated => {
            NoiseModel::calibrated(&p.layout).map_err(|e| CliError::core("circuits", "params.layout", e))?
        }
        NoisePreset::Ideal => NoiseModel::ideal(),
    };
    if let Some(v) = n.p1 {
        noise.p1 = v;
    }
    if let Some(v) = n.p2 {
        noise.p2 = v;
    }
    if let Some(e) = n.link_epsilon {
        noise.links.iter_mut().for_each(|l| l.epsilon = e);
        noise.default_link_epsilon = Some(e);
    }
    if let Some(d) = n.durations {
        noise.durations = d;
    }
    noise.idle_on_gated = n.idle_on_gated;
    for (label, q) in &n.qubits {
        noise.qubits.insert(label.clone(), *q);
    }
    noise.validate().map_err(|e| CliError::core("circuits", "params.noise", e))?;
    for (_, c) in &steps {
        for label in c.labels() {
            noise.qubit(&label).map_err(|e| CliError::core("circuits", "params.noise", e))?;
        }
    }
    Ok(Plan::Ghz { steps, noise, params: p.clone(), seed: seed_of(cfg) })
}

fn prepare_hanger(cfg: &Config, p: &HangerParams) -> Result<Plan, CliError> {
    require(p.asymmetry_rad.is_finite(), "params.asymmetry_rad", "must be finite")?;
    if let Some(f) = &p.data_file {
        let path = existing(cfg, f, "params.data_file")?;
        let (freqs, trace) = read_s21(&path)?;
        return Ok(Plan::Hanger { freqs, trace, truth: None, asymmetry: p.asymmetry_rad });
    }
    positive("params.f0_ghz", p.f0_ghz)?;
    positive("params.q_int", p.q_int)?;
    positive("params.q_c", p.q_c)?;
    positive("params.amplitude", p.amplitude)?;
    positive("params.span_linewidths", p.span_linewidths)?;
    require(p.points >= 20, "params.points", "must be ≥ 20")?;
    require(p.noise_rel.is_finite() && p.noise_rel >= 0.0, "params.noise_rel", "must be ≥ 0")?;
    let truth = HangerResonance {
        f0_hz: p.f0_ghz * 1e9,
        q_int: p.q_int,
        q_c: p.q_c,
        amplitude: p.amplitude,
        phase_rad: p.phase_rad,
        asymmetry_rad: p.asymmetry_rad,
    };
    let half = 0.5 * p.span_linewidths * truth.linewidth_hz();
    let freqs = linspace(truth.f0_hz - half, truth.f0_hz + half, p.points);
    let mut trace = s21_hanger(&freqs, &truth);
    if p.noise_rel > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(cfg));
        let normal = Normal::new(0.0, p.noise_rel * p.amplitude).expect("finite sigma");
        for z in &mut trace {
            *z += C64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(Plan::Hanger { freqs, trace, truth: Some(truth), asymmetry: p.asymmetry_rad })
}

fn read_s21(path: &Path) -> Result<(Vec<f64>, Vec<C64>), CliError> {
    #[derive(serde::Deserialize)]
    struct Row {
        freq_hz: f64,
        s21_re: f64,
        s21_im: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_err(path, e))?;
    let (mut f, mut t) = (Vec::new(), Vec::new());
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| CliError::field("params.data_file", format!("row {}: {e}", i + 1)))?;
        f.push(row.freq_hz);
        t.push(C64::new(row.s21_re, row.s21_im));
    }
    Ok((f, t))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    let msg = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        _ => CliError::field("params.data_file", msg),
    }
}

/// CSV with a header row; every value is written with `Display`, which
/// round-trips `f64` exactly.
fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn json_bytes(v: &impl serde::Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

impl Plan {
    pub fn kind(&self) -> ScenarioKind {
        match self {
            Plan::Chevron { .. } => ScenarioKind::Chevron,
            Plan::Ringdown { .. } => ScenarioKind::Ringdown,
            Plan::Qst(_) => ScenarioKind::Qst,
            Plan::Bell(_) => ScenarioKind::Bell,
            Plan::Ghz { .. } => ScenarioKind::Ghz,
            Plan::Lossfit { .. } => ScenarioKind::Lossfit,
            Plan::Hanger { .. } => ScenarioKind::Hanger,
        }
    }

    /// One line per resolved quantity, for `validate`.
    pub fn describe(&self) -> Vec<String> {
        match self {
            Plan::Chevron { detunings, times, .. } => {
                vec![format!("grid {} detunings × {} times", detunings.len(), times.len())]
            }
            Plan::Ringdown { waits, t1r, .. } => {
                vec![format!("T1r {:.4} us from Q_int, {} waits", t1r / US, waits.len())]
            }
            Plan::Qst(t) | Plan::Bell(t) => vec![format!(
                "coupling time {:.3} ns, tomography {} ({} repeats)",
                t.tau / NS,
                if t.tomography.shots == 0 { "exact".to_string() } else { format!("{} shots", t.tomography.shots) },
                t.tomography.repeats
            )],
            Plan::Ghz { steps, noise, params, .. } => steps
                .iter()
                .map(|(s, c)| {
                    format!(
                        "step {s}: {} qubits, {} layers, {} ns, {} trajectories",
                        c.n_qubits(),
                        c.layers().len(),
                        c.duration_ns(&noise.durations),
                        params.n_traj
                    )
                })
                .collect(),
            Plan::Lossfit { points, .. } => vec![format!("{} data points", points.len())],
            Plan::Hanger { freqs, truth, .. } => {
                vec![format!("{} points, {}", freqs.len(), if truth.is_some() { "synthetic" } else { "measured" })]
            }
        }
    }

    pub fn execute(self) -> Result<Output, CliError> {
        match self {
            Plan::Chevron { model, g, detunings, times } => run_chevron(&model, g, &detunings, &times),
            Plan::Ringdown { model, g, waits, edge, t1r } => run_ringdown(&model, g, &waits, edge, t1r),
            Plan::Qst(t) => run_qst(&t),
            Plan::Bell(t) => run_bell(&t),
            Plan::Ghz { steps, noise, params, seed } => run_ghz(&steps, &noise, &params, seed),
            Plan::Lossfit { points, geometry, opts } => run_lossfit(&points, &geometry, &opts),
            Plan::Hanger { freqs, trace, truth, asymmetry } => run_hanger(&freqs, &trace, truth, asymmetry),
        }
    }
}

fn run_chevron(model: &RotatingFrameModel, g: f64, detunings: &[f64], times: &[f64]) -> Result<Output, CliError> {
    let map = vacuum_rabi_chevron(model, g, detunings, times).map_err(|e| CliError::core("dynamics", "params", e))?;
    let mut out = Output::default();
    let rows = map.detunings.iter().zip(&map.p1).flat_map(|(d, row)| {
        map.times.iter().zip(row).map(move |(t, p)| {
            vec![(d / (2.0 * PI * 1e6)).to_string(), (t / NS).to_string(), p.to_string()]
        })
    });
    out.files.insert("chevron.csv".into(), csv_bytes(&["detuning_mhz", "time_ns", "p1_sender"], rows));
    // First local minimum of the row nearest resonance.
    let k0 = (0..detunings.len()).min_by(|&a, &b| detunings[a].abs().total_cmp(&detunings[b].abs())).unwrap_or(0);
    let row = &map.p1[k0];
    let first_min = (1..row.len().saturating_sub(1)).find(|&k| row[k] <= row[k - 1] && row[k] <= row[k + 1]);
    out.put("g_mhz", g / (2.0 * PI * 1e6));
    out.put("detuning_points", detunings.len());
    out.put("time_points", times.len());
    out.put("resonant_detuning_mhz", detunings[k0] / (2.0 * PI * 1e6));
    if let Some(k) = first_min {
        out.put("resonant_swap_ns", times[k] / NS);
        out.put("resonant_swap_p1", row[k]);
    }
    Ok(out)
}

fn run_ringdown(model: &RotatingFrameModel, g: f64, waits: &[f64], edge: EdgeProfile, t1r: f64) -> Result<Output, CliError> {
    let res = t1r_ringdown(model, g, waits, edge).map_err(|e| CliError::core("dynamics", "params", e))?;
    let mut out = Output::default();
    let rows = res.waits.iter().zip(&res.p1).map(|(w, p)| vec![(w / US).to_string(), p.to_string()]);
    out.files.insert("ringdown.csv".into(), csv_bytes(&["wait_us", "p1"], rows));
    out.put("t1r_configured_us", t1r / US);
    out.put("t1r_fit_us", if res.t1r.is_finite() { json!(res.t1r / US) } else { json!("inf") });
    out.put("amplitude", res.amplitude);
    out.put("fit_method", serde_json::to_value(res.method).expect("enum"));
    Ok(out)
}

fn one_qubit(m: &qlink_core::CMatrix) -> Result<DensityMatrix, qlink_core::Error> {
    DensityMatrix::new(HilbertSpace::qubits(1)?, m.clone())
}

fn run_qst(t: &TransferPlan) -> Result<Output, CliError> {
    let err = |e| CliError::core("dynamics", "params", e);
    let ch = qst_channel(&t.model, t.g, t.tau, t.edge).map_err(err)?;
    let ideal = ProcessMatrix::identity();
    let exact_chi = process_tomography(&ch.outputs).map_err(|e| CliError::core("tomo", "params", e))?;
    let f_exact = process_fidelity(&exact_chi, &ideal);
    let tomo = &t.tomography;
    let conf = [t.confusion[1]];
    let estimate = |seed: u64| -> qlink_core::Result<ProcessMatrix> {
        if tomo.shots == 0 {
            let mut outs = Vec::new();
            for o in &ch.outputs {
                let data = measure_state(&one_qubit(o)?, &TomographySettings::exact(1), None, &mut ChaCha8Rng::seed_from_u64(0))?;
                outs.push(state_tomography(&data, None)?.into_matrix());
            }
            return process_tomography(&outs);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut outs = Vec::new();
        for o in &ch.outputs {
            let data = measure_state(&one_qubit(o)?, &TomographySettings::sampled(1, tomo.shots), Some(&conf), &mut rng)?;
            let correction = tomo.readout_correction.then_some(&conf[..]);
            outs.push(state_tomography(&data, correction)?.into_matrix());
        }
        process_tomography(&outs)
    };
    let terr = |e| CliError::core("tomo", "params.tomography", e);
    let (mean, std) = bootstrap_repeats(|s| estimate(s).map(|chi| process_fidelity(&chi, &ideal)), tomo.repeats, t.seed)
        .map_err(terr)?;
    let chi = estimate(t.seed).map_err(terr)?;
    let mut out = Output::default();
    let mut buf = Vec::new();
    write_matrix_csv(chi.chi(), &mut buf).map_err(terr)?;
    out.files.insert("chi.csv".into(), buf);
    out.put("f_qst", mean);
    out.put("f_qst_std", std);
    out.put("f_qst_exact", f_exact);
    out.put("receiver_phase_rad", ch.phase);
    out.put("coupling_time_ns", t.tau / NS);
    out.put("shots", tomo.shots);
    out.put("repeats", tomo.repeats);
    Ok(out)
}

fn run_bell(t: &TransferPlan) -> Result<Output, CliError> {
    let res = bell_protocol(&t.model, t.g, t.tau, t.edge).map_err(|e| CliError::core("dynamics", "params", e))?;
    let target = bell_target(res.phase).map_err(|e| CliError::core("dynamics", "params", e))?;
    let tomo = &t.tomography;
    let conf = t.confusion;
    let estimate = |seed: u64| -> qlink_core::Result<DensityMatrix> {
        if tomo.shots == 0 {
            let data = measure_state(&res.state, &TomographySettings::exact(2), None, &mut ChaCha8Rng::seed_from_u64(0))?;
            return state_tomography(&data, None);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = measure_state(&res.state, &TomographySettings::sampled(2, tomo.shots), Some(&conf), &mut rng)?;
        state_tomography(&data, tomo.readout_correction.then_some(&conf[..]))
    };
    let terr = |e| CliError::core("tomo", "params.tomography", e);
    let (mean, std) =
        bootstrap_repeats(|s| estimate(s).and_then(|rho| fidelity_pure(&rho, &target)), tomo.repeats, t.seed)
            .map_err(terr)?;
    let rho = estimate(t.seed).map_err(terr)?;
    let mut out = Output::default();
    let mut buf = Vec::new();
    write_matrix_csv(rho.matrix(), &mut buf).map_err(terr)?;
    out.files.insert("rho.csv".into(), buf);
    out.put("f_bell", mean);
    out.put("f_bell_std", std);
    out.put("f_bell_exact", res.fidelity);
    out.put("bell_phase_rad", res.phase);
    out.put("half_swap_ns", t.tau / NS);
    out.put("shots", tomo.shots);
    out.put("repeats", tomo.repeats);
    Ok(out)
}

fn run_ghz(steps: &[(GhzStep, Circuit)], noise: &NoiseModel, p: &GhzParams, seed: u64) -> Result<Output, CliError> {
    let err = |e| CliError::core("circuits", "params", e);
    let mut out = Output::default();
    let mut table = Vec::new();
    let mut per_step = serde_json::Map::new();
    for (step, circuit) in steps {
        let run = simulate_ghz_fidelity(circuit, noise, p.n_traj, p.gamma_points, seed).map_err(err)?;
        let rows = run.gammas.iter().zip(&run.parities).map(|(g, v)| vec![g.to_string(), v.to_string()]);
        out.files.insert(format!("parity_step_{step}.csv"), csv_bytes(&["gamma_rad", "parity_expectation"], rows));
        out.files.insert(format!("circuit_step_{step}.txt"), circuit.to_string().into_bytes());
        if p.shots_per_traj > 0 {
            let traj = simulate_trajectories(circuit, noise, p.n_traj, p.shots_per_traj, seed).map_err(err)?;
            let mut buf = Vec::new();
            traj.record.write_csv(&mut buf).map_err(err)?;
            out.files.insert(format!("shots_step_{step}.csv"), buf);
        }
        table.push(vec![
            step.to_string(),
            run.n_qubits.to_string(),
            run.fidelity.to_string(),
            run.std_error.to_string(),
            run.p_all0.to_string(),
            run.p_all1.to_string(),
            run.coherence.to_string(),
            run.phase.to_string(),
        ]);
        per_step.insert(
            step.to_string(),
            json!({
                "n_qubits": run.n_qubits,
                "fidelity": run.fidelity,
                "std_error": run.std_error,
                "p_all0": run.p_all0,
                "p_all1": run.p_all1,
                "coherence": run.coherence,
                "phase_rad": run.phase,
                "duration_ns": circuit.duration_ns(&noise.durations),
            }),
        );
    }
    out.files.insert(
        "ghz_fidelity.csv".into(),
        csv_bytes(&["step", "n_qubits", "fidelity", "std_error", "p_all0", "p_all1", "coherence", "phase_rad"], table),
    );
    out.put("steps", Value::Object(per_step));
    out.put("n_traj", p.n_traj);
    out.put("gamma_points", p.gamma_points);
    out.put("p1", noise.p1);
    out.put("p2", noise.p2);
    out.put("idle_on_gated", noise.idle_on_gated);
    Ok(out)
}

fn run_lossfit(points: &[QDataPoint], geometry: &LossGeometry, opts: &LossFitOptions) -> Result<Output, CliError> {
    let fit = fit_loss_model(points, geometry, opts).map_err(|e| CliError::core("lossfit", "params", e))?;
    let model = fit.model(geometry);
    let rows = points.iter().map(|p| {
        let mode = mode_at(&geometry.cable, p.m, p.omega_rad_s);
        let q = q_int(&model, &mode);
        vec![
            p.m.to_string(),
            (p.omega_rad_s / (2.0 * PI * 1e9)).to_string(),
            p.q_int.to_string(),
            q.to_string(),
            (t1r_from_q(p.q_int, p.omega_rad_s) / US).to_string(),
            (t1r_from_q(q, p.omega_rad_s) / US).to_string(),
        ]
    });
    let mut out = Output::default();
    out.files.insert(
        "curve.csv".into(),
        csv_bytes(&["mode_m", "freq_ghz", "q_int_data", "q_int_model", "t1r_data_us", "t1r_model_us"], rows),
    );
    out.files.insert("fit.json".into(), json_bytes(&fit));
    out.put("q_cb", fit.q_cb);
    out.put("r_s_ohm", fit.r_s_ohm);
    out.put("q_cb_std", fit.covariance[0][0].sqrt());
    out.put("r_s_std_ohm", fit.covariance[1][1].sqrt());
    out.put("rms_residual", fit.rms_residual);
    out.put("iterations", fit.iterations);
    Ok(out)
}

fn run_hanger(freqs: &[f64], trace: &[C64], truth: Option<HangerResonance>, asymmetry: f64) -> Result<Output, CliError> {
    let fit = fit_hanger_with_asymmetry(freqs, trace, asymmetry).map_err(|e| CliError::core("lossfit", "params", e))?;
    let model = s21_hanger(freqs, &fit);
    let rows = freqs.iter().zip(trace).zip(&model).map(|((f, z), m)| {
        vec![f.to_string(), z.re.to_string(), z.im.to_string(), m.re.to_string(), m.im.to_string()]
    });
    let mut out = Output::default();
    out.files.insert("s21.csv".into(), csv_bytes(&["freq_hz", "s21_re", "s21_im", "fit_re", "fit_im"], rows));
    out.files.insert("fit.json".into(), json_bytes(&fit));
    out.put("f0_ghz", fit.f0_hz / 1e9);
    out.put("q_int", fit.q_int);
    out.put("q_c", fit.q_c);
    out.put("q_loaded", fit.loaded_q());
    if let Some(t) = truth {
        out.put("q_int_true", t.q_int);
        out.put("q_c_true", t.q_c);
    }
    Ok(out)
}
