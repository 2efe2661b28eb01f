//! Scenario configuration: TOML with a versioned schema, unit-suffixed keys.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qlink_core::circuits::{GateDurations, GhzLayout, QubitNoise};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Chevron,
    Ringdown,
    Qst,
    Bell,
    Ghz,
    Lossfit,
    Hanger,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::Chevron,
        ScenarioKind::Ringdown,
        ScenarioKind::Qst,
        ScenarioKind::Bell,
        ScenarioKind::Ghz,
        ScenarioKind::Lossfit,
        ScenarioKind::Hanger,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Chevron => "chevron",
            ScenarioKind::Ringdown => "ringdown",
            ScenarioKind::Qst => "qst",
            ScenarioKind::Bell => "bell",
            ScenarioKind::Ghz => "ghz",
            ScenarioKind::Lossfit => "lossfit",
            ScenarioKind::Hanger => "hanger",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioKind::Chevron => "sender P1 versus qubit-mode detuning and interaction time",
            ScenarioKind::Ringdown => "swap-wait-swap measurement of the mode lifetime T1r",
            ScenarioKind::Qst => "cable state transfer with process tomography",
            ScenarioKind::Bell => "half-transfer Bell pair with state tomography",
            ScenarioKind::Ghz => "noisy multi-module GHZ preparation, parity sweep and fidelity",
            ScenarioKind::Lossfit => "fit of cable and wirebond loss to per-mode Q_int",
            ScenarioKind::Hanger => "hanger resonator S21 fit (synthetic or measured trace)",
        }
    }

    pub fn default_params(self) -> Params {
        match self {
            ScenarioKind::Chevron => Params::Chevron(Default::default()),
            ScenarioKind::Ringdown => Params::Ringdown(Default::default()),
            ScenarioKind::Qst => Params::Qst(Default::default()),
            ScenarioKind::Bell => Params::Bell(Default::default()),
            ScenarioKind::Ghz => Params::Ghz(Default::default()),
            ScenarioKind::Lossfit => Params::Lossfit(Default::default()),
            ScenarioKind::Hanger => Params::Hanger(Default::default()),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ScenarioKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

/// One qubit from the device table with optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitSpec {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t1_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tphi_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

impl QubitSpec {
    fn label(label: &str) -> Self {
        Self { label: label.into(), t1_us: None, tphi_us: None, f0: None, f1: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceParams {
    /// Qubit table in the shipped CSV layout; the built-in table when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub device_file: Option<PathBuf>,
    pub sender: QubitSpec,
    pub receiver: QubitSpec,
    /// Communication-mode lifetime; `inf` for a lossless mode.
    pub t1r_us: f64,
    /// Standing-mode index; its parity sets the sign of the far-end coupling.
    pub mode_m: u32,
    pub mode_dim: usize,
    /// Qubit relaxation and dephasing on or off.
    pub decoherence: bool,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            device_file: None,
            sender: QubitSpec::label("Q1A"),
            receiver: QubitSpec::label("Q3B"),
            t1r_us: 26.4,
            mode_m: 11,
            mode_dim: 3,
            decoherence: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChevronParams {
    pub device: DeviceParams,
    pub g_mhz: f64,
    pub detuning_min_mhz: f64,
    pub detuning_max_mhz: f64,
    pub detuning_points: usize,
    pub t_max_ns: f64,
    pub time_points: usize,
}

impl Default for ChevronParams {
    fn default() -> Self {
        Self {
            device: DeviceParams::default(),
            g_mhz: 5.0,
            detuning_min_mhz: -40.0,
            detuning_max_mhz: 40.0,
            detuning_points: 81,
            t_max_ns: 250.0,
            time_points: 126,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingdownParams {
    pub device: DeviceParams,
    /// Mode internal quality factor; sets κ = ω/Q.
    pub q_int: f64,
    pub freq_ghz: f64,
    pub g_mhz: f64,
    pub wait_max_us: f64,
    pub wait_points: usize,
    /// Coupler ramp; 0 for rectangular pulses.
    pub ramp_ns: f64,
}

impl Default for RingdownParams {
    fn default() -> Self {
        Self {
            device: DeviceParams { decoherence: false, ..DeviceParams::default() },
            q_int: 8.1e5,
            freq_ghz: 4.885,
            g_mhz: 5.0,
            wait_max_us: 80.0,
            wait_points: 21,
            ramp_ns: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographyParams {
    /// 0 selects exact expectations.
    pub shots: u64,
    pub repeats: usize,
    pub readout_correction: bool,
}

impl Default for TomographyParams {
    fn default() -> Self {
        Self { shots: 0, repeats: 1, readout_correction: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QstParams {
    pub device: DeviceParams,
    pub g_mhz: f64,
    /// Flat-top coupling time.
    pub tau_ns: f64,
    pub ramp_ns: f64,
    pub tomography: TomographyParams,
}

impl Default for QstParams {
    fn default() -> Self {
        Self { device: DeviceParams::default(), g_mhz: 5.0, tau_ns: 66.0, ramp_ns: 4.0, tomography: TomographyParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BellParams {
    pub device: DeviceParams,
    pub g_mhz: f64,
    /// Half-transfer time; π/(4 g) when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_ns: Option<f64>,
    pub ramp_ns: f64,
    pub tomography: TomographyParams,
}

impl Default for BellParams {
    fn default() -> Self {
        Self {
            device: DeviceParams::default(),
            g_mhz: 5.0,
            tau_ns: None,
            ramp_ns: 0.0,
            tomography: TomographyParams { shots: 3000, repeats: 50, readout_correction: true },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePreset {
    /// Tabulated qubits, benchmarked gates, links matched to Bell fidelities.
    Calibrated,
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GhzNoiseParams {
    pub preset: NoisePreset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link_epsilon: Option<f64>,
    pub idle_on_gated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub durations: Option<GateDurations>,
    /// Per-label overrides of the preset's qubit entries.
    #[serde(skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub qubits: std::collections::BTreeMap<String, QubitNoise>,
}

impl Default for GhzNoiseParams {
    fn default() -> Self {
        Self {
            preset: NoisePreset::Calibrated,
            p1: None,
            p2: None,
            link_epsilon: None,
            idle_on_gated: false,
            durations: None,
            qubits: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GhzParams {
    pub steps: Vec<String>,
    pub n_traj: usize,
    pub gamma_points: usize,
    /// Extra computational-basis shots per trajectory written as counts; 0 skips.
    pub shots_per_traj: u64,
    pub layout: GhzLayout,
    pub noise: GhzNoiseParams,
}

impl Default for GhzParams {
    fn default() -> Self {
        Self {
            steps: ["I", "II", "III", "IV"].map(String::from).to_vec(),
            n_traj: 2000,
            gamma_points: qlink_core::circuits::DEFAULT_GAMMA_POINTS,
            shots_per_traj: 0,
            layout: GhzLayout::default(),
            noise: GhzNoiseParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Residual {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossfitParams {
    /// CSV with mode_m, freq_GHz, Q_int, sigma; the shipped five-mode set when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_file: Option<PathBuf>,
    /// CPW transformers matched at this frequency.
    pub match_ghz: f64,
    pub n_bonds: u8,
    pub residual: Residual,
    pub max_iter: usize,
}

impl Default for LossfitParams {
    fn default() -> Self {
        Self {
            data_file: None,
            match_ghz: qlink_core::reference::FIVE_MODE_MATCH_GHZ,
            n_bonds: 2,
            residual: Residual::Linear,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HangerParams {
    /// CSV with freq_hz, s21_re, s21_im; a synthetic trace when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_file: Option<PathBuf>,
    pub f0_ghz: f64,
    pub q_int: f64,
    pub q_c: f64,
    pub amplitude: f64,
    pub phase_rad: f64,
    pub asymmetry_rad: f64,
    /// Sweep width in loaded linewidths.
    pub span_linewidths: f64,
    pub points: usize,
    /// Complex Gaussian noise relative to the baseline amplitude.
    pub noise_rel: f64,
}

impl Default for HangerParams {
    fn default() -> Self {
        Self {
            data_file: None,
            f0_ghz: 5.0,
            q_int: 8.0e5,
            q_c: 3.0e5,
            amplitude: 1.0,
            phase_rad: 0.4,
            asymmetry_rad: 0.0,
            span_linewidths: 12.0,
            points: 401,
            noise_rel: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Chevron(ChevronParams),
    Ringdown(RingdownParams),
    Qst(QstParams),
    Bell(BellParams),
    Ghz(GhzParams),
    Lossfit(LossfitParams),
    Hanger(HangerParams),
}

impl Params {
    pub fn is_stochastic(&self) -> bool {
        match self {
            Params::Qst(p) => p.tomography.shots > 0,
            Params::Bell(p) => p.tomography.shots > 0,
            Params::Ghz(_) => true,
            Params::Hanger(p) => p.data_file.is_none() && p.noise_rel > 0.0,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub schema_version: u32,
    pub scenario: ScenarioKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub params: Params,
    /// Directory relative paths in the file are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    scenario: ScenarioKind,
    seed: Option<u64>,
    threads: Option<usize>,
    out_dir: Option<PathBuf>,
    #[serde(default)]
    params: toml::Table,
}

fn from_value<T: DeserializeOwned>(value: toml::Value, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (true, _) => inner.clone(),
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        CliError::Field { path, message: e.into_inner().to_string() }
    })
}

impl Config {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Syntax(e.to_string()))?;
        let header: Header = from_value(toml::Value::Table(table), "")?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(CliError::field(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", header.schema_version),
            ));
        }
        let v = toml::Value::Table(header.params);
        let params = match header.scenario {
            ScenarioKind::Chevron => Params::Chevron(from_value(v, "params")?),
            ScenarioKind::Ringdown => Params::Ringdown(from_value(v, "params")?),
            ScenarioKind::Qst => Params::Qst(from_value(v, "params")?),
            ScenarioKind::Bell => Params::Bell(from_value(v, "params")?),
            ScenarioKind::Ghz => Params::Ghz(from_value(v, "params")?),
            ScenarioKind::Lossfit => Params::Lossfit(from_value(v, "params")?),
            ScenarioKind::Hanger => Params::Hanger(from_value(v, "params")?),
        };
        Ok(Self {
            schema_version: header.schema_version,
            scenario: header.scenario,
            seed: header.seed,
            threads: header.threads,
            out_dir: header.out_dir,
            params,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Canonical JSON of the effective configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Default configuration text for a scenario.
    pub fn template(kind: ScenarioKind) -> String {
        let params = match kind.default_params() {
            Params::Chevron(p) => toml::to_string(&p),
            Params::Ringdown(p) => toml::to_string(&p),
            Params::Qst(p) => toml::to_string(&p),
            Params::Bell(p) => toml::to_string(&p),
            Params::Ghz(p) => toml::to_string(&p),
            Params::Lossfit(p) => toml::to_string(&p),
            Params::Hanger(p) => toml::to_string(&p),
        }
        .expect("defaults serialize");
        let mut out = format!("schema_version = {SCHEMA_VERSION}\nscenario = \"{kind}\"\nseed = 1\n\n");
        // Nest every table of the parameter block under `params`.
        let mut top = String::new();
        let mut rest = String::new();
        let mut in_table = false;
        for line in params.lines() {
            if let Some(name) = line.strip_prefix("[[").and_then(|l| l.strip_suffix("]]")) {
                in_table = true;
                rest.push_str(&format!("[[params.{name}]]\n"));
            } else if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                in_table = true;
                rest.push_str(&format!("[params.{name}]\n"));
            } else if in_table {
                rest.push_str(line);
                rest.push('\n');
            } else {
                top.push_str(line);
                top.push('\n');
            }
        }
        out.push_str("[params]\n");
        out.push_str(&top);
        if !rest.is_empty() {
            out.push('\n');
            out.push_str(&rest);
        }
        while out.contains("\n\n\n") {
            out = out.replace("\n\n\n", "\n\n");
        }
        out
    }
}
