//! Gate-level noisy circuits across modules: GHZ construction, trajectory
//! sampling and parity analysis.
//!
//! Qubit 0 of a register is the most significant bit of a basis index and
//! the leftmost character of a bitstring.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::devicelab::QubitParams;
use crate::error::{Error, Result};
use crate::hilbert::{CMatrix, CVector, DensityMatrix, HilbertSpace, StateVector, C64};
use crate::reference;
use crate::tomo::ConfusionMatrix;

pub const MAX_SIM_QUBITS: usize = 14;
pub const MAX_DENSITY_QUBITS: usize = 6;
pub const DEFAULT_GAMMA_POINTS: usize = 60;
/// Benchmarked single-qubit and CZ average gate fidelities of the device.
pub const REFERENCE_1Q_FIDELITY: f64 = 0.9985;
pub const REFERENCE_CZ_FIDELITY: f64 = 0.961;

// Trajectories are reduced in fixed-size blocks so results do not depend on
// the thread count.
const BLOCK: usize = 64;

type M2 = [[C64; 2]; 2];
type M4 = [[C64; 4]; 4];

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

// ---------------------------------------------------------------------------
// Gates

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
    /// cos(φ) X + sin(φ) Y.
    Equatorial(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    Rotation { qubit: usize, axis: Axis, angle: f64 },
    Cz { a: usize, b: usize },
    Cnot { control: usize, target: usize },
    /// Half transfer through the cable; ideal action |00⟩ → (|00⟩ + |11⟩)/√2.
    BellLink { a: usize, b: usize },
    /// Full transfer through the cable, ideally a SWAP.
    QstLink { from: usize, to: usize },
    Idle { qubit: usize, duration_ns: f64 },
    MeasureAll,
}

impl Gate {
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::Rotation { qubit, .. } | Gate::Idle { qubit, .. } => vec![qubit],
            Gate::Cz { a, b } | Gate::BellLink { a, b } => vec![a, b],
            Gate::Cnot { control, target } => vec![control, target],
            Gate::QstLink { from, to } => vec![from, to],
            Gate::MeasureAll => Vec::new(),
        }
    }

    pub fn is_link(&self) -> bool {
        matches!(self, Gate::BellLink { .. } | Gate::QstLink { .. })
    }

    /// Z rotations are frame updates and take no time.
    pub fn is_virtual(&self) -> bool {
        matches!(self, Gate::Rotation { axis: Axis::Z, .. })
    }

    fn duration_ns(&self, d: &GateDurations) -> f64 {
        match self {
            Gate::Rotation { axis: Axis::Z, .. } | Gate::MeasureAll => 0.0,
            Gate::Rotation { .. } => d.single_ns,
            Gate::Cz { .. } => d.cz_ns,
            Gate::Cnot { .. } => 2.0 * d.single_ns + d.cz_ns,
            Gate::BellLink { .. } => d.bell_link_ns,
            Gate::QstLink { .. } => d.qst_link_ns,
            Gate::Idle { duration_ns, .. } => *duration_ns,
        }
    }
}

pub fn rotation_matrix(axis: Axis, angle: f64) -> CMatrix {
    let m = rotation(axis, angle);
    CMatrix::from_fn(2, 2, |i, j| m[i][j])
}

fn rotation(axis: Axis, angle: f64) -> M2 {
    let (s, c) = (angle / 2.0).sin_cos();
    let c = C64::new(c, 0.0);
    match axis {
        Axis::X => [[c, C64::new(0.0, -s)], [C64::new(0.0, -s), c]],
        Axis::Y => [[c, C64::new(-s, 0.0)], [C64::new(s, 0.0), c]],
        Axis::Z => [[C64::from_polar(1.0, -angle / 2.0), ZERO], [ZERO, C64::from_polar(1.0, angle / 2.0)]],
        Axis::Equatorial(phi) => [
            [c, C64::new(0.0, -s) * C64::from_polar(1.0, -phi)],
            [C64::new(0.0, -s) * C64::from_polar(1.0, phi), c],
        ],
    }
}

fn cz_matrix() -> M4 {
    let mut m = [[ZERO; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = if i == 3 { -ONE } else { ONE };
    }
    m
}

fn swap_matrix() -> M4 {
    let mut m = [[ZERO; 4]; 4];
    m[0][0] = ONE;
    m[1][2] = ONE;
    m[2][1] = ONE;
    m[3][3] = ONE;
    m
}

// CNOT(a→b) · (H ⊗ I) in the |ab⟩ basis.
fn bell_link_matrix() -> M4 {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    [[h, ZERO, h, ZERO], [ZERO, h, ZERO, h], [ZERO, h, ZERO, -h], [h, ZERO, -h, ZERO]]
}

/// Two-qubit unitary of a gate in the |ab⟩ basis (first listed qubit is the
/// more significant bit).
pub fn two_qubit_matrix(gate: &Gate) -> Option<CMatrix> {
    let m = match gate {
        Gate::Cz { .. } => cz_matrix(),
        Gate::BellLink { .. } => bell_link_matrix(),
        Gate::QstLink { .. } => swap_matrix(),
        Gate::Cnot { .. } => {
            let y = CMatrix::identity(2, 2).kronecker(&rotation_matrix(Axis::Y, FRAC_PI_2));
            let ym = CMatrix::identity(2, 2).kronecker(&rotation_matrix(Axis::Y, -FRAC_PI_2));
            let cz = CMatrix::from_fn(4, 4, |i, j| cz_matrix()[i][j]);
            return Some(y * cz * ym);
        }
        _ => return None,
    };
    Some(CMatrix::from_fn(4, 4, |i, j| m[i][j]))
}

// ---------------------------------------------------------------------------
// Circuit

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QubitTag {
    pub label: String,
    pub module: String,
}

impl QubitTag {
    pub fn new(label: impl Into<String>, module: impl Into<String>) -> Self {
        Self { label: label.into(), module: module.into() }
    }
}

/// Cable joining two qubits in different modules through standing mode `mode_m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interconnect {
    pub a: String,
    pub b: String,
    pub mode_m: u32,
}

impl Interconnect {
    pub fn new(a: impl Into<String>, b: impl Into<String>, mode_m: u32) -> Self {
        Self { a: a.into(), b: b.into(), mode_m }
    }

    fn joins(&self, x: &str, y: &str) -> bool {
        (self.a == x && self.b == y) || (self.a == y && self.b == x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    qubits: Vec<QubitTag>,
    interconnects: Vec<Interconnect>,
    layers: Vec<Vec<Gate>>,
}

impl Circuit {
    pub fn new(qubits: Vec<QubitTag>) -> Result<Self> {
        if qubits.is_empty() {
            return Err(Error::param("qubits", "register is empty"));
        }
        let mut seen = BTreeSet::new();
        for q in &qubits {
            if q.label.is_empty() || q.label.contains(char::is_whitespace) {
                return Err(Error::param("qubits", format!("bad label `{}`", q.label)));
            }
            if !seen.insert(q.label.as_str()) {
                return Err(Error::param("qubits", format!("duplicate label `{}`", q.label)));
            }
        }
        Ok(Self { qubits, interconnects: Vec::new(), layers: Vec::new() })
    }

    pub fn add_interconnect(&mut self, link: Interconnect) -> Result<()> {
        let a = self.index_of(&link.a)?;
        let b = self.index_of(&link.b)?;
        if self.qubits[a].module == self.qubits[b].module {
            return Err(Error::Layout(format!(
                "interconnect {}–{} joins qubits in the same module",
                link.a, link.b
            )));
        }
        self.interconnects.push(link);
        Ok(())
    }

    pub fn push_layer(&mut self, gates: Vec<Gate>) -> Result<()> {
        self.check_layer(&gates, self.layers.len())?;
        self.layers.push(gates);
        Ok(())
    }

    pub fn qubits(&self) -> &[QubitTag] {
        &self.qubits
    }

    pub fn interconnects(&self) -> &[Interconnect] {
        &self.interconnects
    }

    pub fn layers(&self) -> &[Vec<Gate>] {
        &self.layers
    }

    pub fn n_qubits(&self) -> usize {
        self.qubits.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.qubits.iter().map(|q| q.label.clone()).collect()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.qubits
            .iter()
            .position(|q| q.label == label)
            .ok_or_else(|| Error::param("qubit", format!("unknown qubit `{label}`")))
    }

    fn check_layer(&self, gates: &[Gate], position: usize) -> Result<()> {
        let layer = position + 1;
        if self.layers.last().is_some_and(|l| l.contains(&Gate::MeasureAll)) {
            return Err(Error::param(format!("layer {layer}"), "gates after measure-all"));
        }
        if gates.contains(&Gate::MeasureAll) && gates.len() > 1 {
            return Err(Error::param(format!("layer {layer}"), "measure-all must stand alone"));
        }
        let mut used = BTreeSet::new();
        for g in gates {
            for q in g.qubits() {
                if q >= self.n_qubits() {
                    return Err(Error::Index { index: q, len: self.n_qubits() });
                }
                if !used.insert(q) {
                    return Err(Error::param(
                        format!("layer {layer}"),
                        format!("qubit {} used by more than one gate", self.qubits[q].label),
                    ));
                }
            }
            match g {
                Gate::Rotation { angle, .. } if !angle.is_finite() => {
                    return Err(Error::param(format!("layer {layer}"), "non-finite rotation angle"))
                }
                Gate::Rotation { axis: Axis::Equatorial(phi), .. } if !phi.is_finite() => {
                    return Err(Error::param(format!("layer {layer}"), "non-finite rotation axis"))
                }
                Gate::Idle { duration_ns, .. } if !(duration_ns.is_finite() && *duration_ns >= 0.0) => {
                    return Err(Error::param(format!("layer {layer}"), "idle duration must be ≥ 0"))
                }
                _ => {}
            }
            if g.is_link() {
                let q = g.qubits();
                let (ta, tb) = (&self.qubits[q[0]], &self.qubits[q[1]]);
                if ta.module == tb.module {
                    return Err(Error::Layout(format!(
                        "link gate {}–{} inside module {}",
                        ta.label, tb.label, ta.module
                    )));
                }
                if !self.interconnects.iter().any(|l| l.joins(&ta.label, &tb.label)) {
                    return Err(Error::Layout(format!(
                        "no interconnect declared between {} and {}",
                        ta.label, tb.label
                    )));
                }
            }
        }
        Ok(())
    }

    /// Replaces every CNOT layer by (−Y/2 on targets), (CZ), (Y/2 on targets).
    pub fn expand_cnots(&self) -> Circuit {
        let mut out = Circuit { qubits: self.qubits.clone(), interconnects: self.interconnects.clone(), layers: Vec::new() };
        for layer in &self.layers {
            let targets: Vec<usize> = layer
                .iter()
                .filter_map(|g| match g {
                    Gate::Cnot { target, .. } => Some(*target),
                    _ => None,
                })
                .collect();
            if targets.is_empty() {
                out.layers.push(layer.clone());
                continue;
            }
            let rot = |angle| {
                targets.iter().map(|&t| Gate::Rotation { qubit: t, axis: Axis::Y, angle }).collect::<Vec<_>>()
            };
            out.layers.push(rot(-FRAC_PI_2));
            out.layers.push(
                layer
                    .iter()
                    .map(|g| match *g {
                        Gate::Cnot { control, target } => Gate::Cz { a: control, b: target },
                        ref other => other.clone(),
                    })
                    .collect(),
            );
            out.layers.push(rot(FRAC_PI_2));
        }
        out
    }

    /// Appends the rotation taking cos(γ)X + sin(γ)Y to Z on every qubit,
    /// followed by measure-all.
    pub fn with_parity_rotation(&self, gamma: f64) -> Result<Circuit> {
        let mut c = self.clone();
        if c.layers.last().is_some_and(|l| l.contains(&Gate::MeasureAll)) {
            c.layers.pop();
        }
        let n = c.n_qubits();
        c.push_layer((0..n).map(|q| Gate::Rotation { qubit: q, axis: Axis::Z, angle: -gamma }).collect())?;
        c.push_layer((0..n).map(|q| Gate::Rotation { qubit: q, axis: Axis::Y, angle: -FRAC_PI_2 }).collect())?;
        c.push_layer(vec![Gate::MeasureAll])?;
        Ok(c)
    }

    pub fn count<F: Fn(&Gate) -> bool>(&self, pred: F) -> usize {
        self.layers.iter().flatten().filter(|g| pred(g)).count()
    }

    /// Wall-clock length of the circuit under the given gate durations.
    pub fn duration_ns(&self, d: &GateDurations) -> f64 {
        self.layers.iter().map(|l| layer_duration(l, d)).sum()
    }
}

fn layer_duration(layer: &[Gate], d: &GateDurations) -> f64 {
    layer.iter().map(|g| g.duration_ns(d)).fold(0.0, f64::max)
}

// Text form: header lines `qubit LABEL MODULE` and `link A B M`, then one
// layer per line with gates separated by `;`.
impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in &self.qubits {
            writeln!(f, "qubit {} {}", q.label, q.module)?;
        }
        for l in &self.interconnects {
            writeln!(f, "link {} {} {}", l.a, l.b, l.mode_m)?;
        }
        let name = |q: usize| self.qubits[q].label.as_str();
        for layer in &self.layers {
            let parts: Vec<String> = layer
                .iter()
                .map(|g| match *g {
                    Gate::Rotation { qubit, axis, angle } => match axis {
                        Axis::X => format!("x {} {angle:?}", name(qubit)),
                        Axis::Y => format!("y {} {angle:?}", name(qubit)),
                        Axis::Z => format!("z {} {angle:?}", name(qubit)),
                        Axis::Equatorial(phi) => format!("r {} {phi:?} {angle:?}", name(qubit)),
                    },
                    Gate::Cz { a, b } => format!("cz {} {}", name(a), name(b)),
                    Gate::Cnot { control, target } => format!("cnot {} {}", name(control), name(target)),
                    Gate::BellLink { a, b } => format!("bell {} {}", name(a), name(b)),
                    Gate::QstLink { from, to } => format!("qst {} {}", name(from), name(to)),
                    Gate::Idle { qubit, duration_ns } => format!("idle {} {duration_ns:?}", name(qubit)),
                    Gate::MeasureAll => "measure".to_string(),
                })
                .collect();
            writeln!(f, "{}", parts.join("; "))?;
        }
        Ok(())
    }
}

fn parse_angle(tok: &str, line: usize) -> Result<f64> {
    let t = tok.trim();
    let (sign, body) = match t.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, t),
    };
    let v = if let Some(rest) = body.strip_prefix("pi") {
        match rest.strip_prefix('/') {
            Some(d) => d.parse::<f64>().map(|d| PI / d).ok(),
            None if rest.is_empty() => Some(PI),
            None => None,
        }
    } else {
        body.parse::<f64>().ok()
    };
    v.map(|v| sign * v).ok_or_else(|| Error::Parse(format!("line {line}: bad number `{tok}`")))
}

impl FromStr for Circuit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut tags = Vec::new();
        let mut links = Vec::new();
        let mut layer_lines = Vec::new();
        for (i, raw) in s.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "qubit" => {
                    if toks.len() != 3 || !layer_lines.is_empty() {
                        return Err(Error::Parse(format!("line {line_no}: expected `qubit LABEL MODULE` before any layer")));
                    }
                    tags.push(QubitTag::new(toks[1], toks[2]));
                }
                "link" => {
                    if toks.len() != 4 || !layer_lines.is_empty() {
                        return Err(Error::Parse(format!("line {line_no}: expected `link A B MODE` before any layer")));
                    }
                    let m = toks[3].parse().map_err(|_| Error::Parse(format!("line {line_no}: bad mode index")))?;
                    links.push(Interconnect::new(toks[1], toks[2], m));
                }
                _ => layer_lines.push((line_no, line.to_string())),
            }
        }
        let mut c = Circuit::new(tags)?;
        for l in links {
            c.add_interconnect(l)?;
        }
        for (line_no, line) in layer_lines {
            let mut gates = Vec::new();
            for part in line.split(';') {
                let toks: Vec<&str> = part.split_whitespace().collect();
                if toks.is_empty() {
                    continue;
                }
                let arity = |n: usize| -> Result<()> {
                    if toks.len() == n + 1 {
                        Ok(())
                    } else {
                        Err(Error::Parse(format!("line {line_no}: `{}` takes {n} arguments", toks[0])))
                    }
                };
                let q = |k: usize| c.index_of(toks[k]).map_err(|e| Error::Parse(format!("line {line_no}: {e}")));
                let g = match toks[0] {
                    "x" | "y" | "z" => {
                        arity(2)?;
                        let axis = match toks[0] {
                            "x" => Axis::X,
                            "y" => Axis::Y,
                            _ => Axis::Z,
                        };
                        Gate::Rotation { qubit: q(1)?, axis, angle: parse_angle(toks[2], line_no)? }
                    }
                    "r" => {
                        arity(3)?;
                        Gate::Rotation {
                            qubit: q(1)?,
                            axis: Axis::Equatorial(parse_angle(toks[2], line_no)?),
                            angle: parse_angle(toks[3], line_no)?,
                        }
                    }
                    "cz" => {
                        arity(2)?;
                        Gate::Cz { a: q(1)?, b: q(2)? }
                    }
                    "cnot" => {
                        arity(2)?;
                        Gate::Cnot { control: q(1)?, target: q(2)? }
                    }
                    "bell" => {
                        arity(2)?;
                        Gate::BellLink { a: q(1)?, b: q(2)? }
                    }
                    "qst" => {
                        arity(2)?;
                        Gate::QstLink { from: q(1)?, to: q(2)? }
                    }
                    "idle" => {
                        arity(2)?;
                        Gate::Idle { qubit: q(1)?, duration_ns: parse_angle(toks[2], line_no)? }
                    }
                    "measure" => {
                        arity(0)?;
                        Gate::MeasureAll
                    }
                    other => return Err(Error::Parse(format!("line {line_no}: unknown gate `{other}`"))),
                };
                gates.push(g);
            }
            c.push_layer(gates).map_err(|e| match e {
                Error::Layout(_) => e,
                e => Error::Parse(format!("line {line_no}: {e}")),
            })?;
        }
        Ok(c)
    }
}

// ---------------------------------------------------------------------------
// Noise model

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitNoise {
    /// `None` disables relaxation.
    #[serde(default)]
    pub t1_us: Option<f64>,
    #[serde(default)]
    pub tphi_us: Option<f64>,
    #[serde(default = "one")]
    pub f0: f64,
    #[serde(default = "one")]
    pub f1: f64,
}

fn one() -> f64 {
    1.0
}

impl QubitNoise {
    pub fn ideal() -> Self {
        Self { t1_us: None, tphi_us: None, f0: 1.0, f1: 1.0 }
    }

    pub fn from_params(p: &QubitParams) -> Self {
        Self { t1_us: Some(p.t1_us), tphi_us: Some(p.tphi_us), f0: p.f0, f1: p.f1 }
    }

    fn validate(&self, label: &str) -> Result<()> {
        for (name, v) in [("t1_us", self.t1_us), ("tphi_us", self.tphi_us)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::param(format!("qubits.{label}.{name}"), "must be positive"));
                }
            }
        }
        for (name, v) in [("f0", self.f0), ("f1", self.f1)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!("qubits.{label}.{name}"), "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn damping(&self, t_ns: f64) -> f64 {
        self.t1_us.map_or(0.0, |t1| 1.0 - (-t_ns / (t1 * 1e3)).exp())
    }

    fn dephasing(&self, t_ns: f64) -> f64 {
        self.tphi_us.map_or(0.0, |tp| 0.5 * (1.0 - (-t_ns / (tp * 1e3)).exp()))
    }

    pub fn confusion(&self) -> ConfusionMatrix {
        ConfusionMatrix { f0: self.f0, f1: self.f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDurations {
    pub single_ns: f64,
    pub cz_ns: f64,
    /// Flat-top transfer plus both coupler ramps.
    pub qst_link_ns: f64,
    pub bell_link_ns: f64,
}

impl Default for GateDurations {
    fn default() -> Self {
        Self { single_ns: 25.0, cz_ns: 42.0, qst_link_ns: 74.0, bell_link_ns: 75.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkNoise {
    pub a: String,
    pub b: String,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(default)]
    pub qubits: BTreeMap<String, QubitNoise>,
    /// Used for qubits absent from `qubits`; when `None` they are an error.
    #[serde(default)]
    pub fallback: Option<QubitNoise>,
    #[serde(default)]
    pub durations: GateDurations,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
    #[serde(default)]
    pub links: Vec<LinkNoise>,
    #[serde(default)]
    pub default_link_epsilon: Option<f64>,
    /// Also apply idle relaxation and dephasing to qubits while a gate acts
    /// on them. Off by default: benchmarked gate errors already contain it.
    #[serde(default)]
    pub idle_on_gated: bool,
}

impl NoiseModel {
    pub fn ideal() -> Self {
        Self {
            qubits: BTreeMap::new(),
            fallback: Some(QubitNoise::ideal()),
            durations: GateDurations::default(),
            p1: 0.0,
            p2: 0.0,
            links: Vec::new(),
            default_link_epsilon: Some(0.0),
            idle_on_gated: false,
        }
    }

    /// Tabulated qubit decoherence and readout, benchmarked gate fidelities
    /// and link errors matched to the measured Bell fidelities.
    pub fn calibrated(layout: &GhzLayout) -> Result<Self> {
        let mut qubits = BTreeMap::new();
        for m in &layout.modules {
            for label in &m.qubits {
                qubits.insert(label.clone(), QubitNoise::from_params(&reference::qubit(label)?));
            }
        }
        let mut links = Vec::new();
        for ic in &layout.interconnects {
            let (ma, mb) = (layout.module_of(&ic.a)?, layout.module_of(&ic.b)?);
            let name = if ma <= mb { format!("{ma}-{mb}") } else { format!("{mb}-{ma}") };
            let rec = reference::link(&name)?;
            links.push(LinkNoise { a: ic.a.clone(), b: ic.b.clone(), epsilon: calibrate_link_epsilon(rec.f_bell)? });
        }
        Ok(Self {
            qubits,
            fallback: None,
            durations: GateDurations::default(),
            p1: calibrate_depolarizing(REFERENCE_1Q_FIDELITY, 2)?,
            p2: calibrate_depolarizing(REFERENCE_CZ_FIDELITY, 4)?,
            links,
            default_link_epsilon: None,
            idle_on_gated: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (label, q) in &self.qubits {
            q.validate(label)?;
        }
        if let Some(q) = &self.fallback {
            q.validate("fallback")?;
        }
        let d = &self.durations;
        for (name, v) in
            [("single_ns", d.single_ns), ("cz_ns", d.cz_ns), ("qst_link_ns", d.qst_link_ns), ("bell_link_ns", d.bell_link_ns)]
        {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(format!("durations.{name}"), "must be ≥ 0"));
            }
        }
        for (name, v) in [("p1", self.p1), ("p2", self.p2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, "must lie in [0, 1]"));
            }
        }
        for (i, l) in self.links.iter().enumerate() {
            if !(0.0..=1.0).contains(&l.epsilon) {
                return Err(Error::param(format!("links[{i}].epsilon"), "must lie in [0, 1]"));
            }
        }
        if let Some(e) = self.default_link_epsilon {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::param("default_link_epsilon", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn qubit(&self, label: &str) -> Result<QubitNoise> {
        self.qubits
            .get(label)
            .copied()
            .or(self.fallback)
            .ok_or_else(|| Error::param("qubits", format!("no noise entry for `{label}`")))
    }

    pub fn link_epsilon(&self, a: &str, b: &str) -> Result<f64> {
        self.links
            .iter()
            .find(|l| (l.a == a && l.b == b) || (l.a == b && l.b == a))
            .map(|l| l.epsilon)
            .or(self.default_link_epsilon)
            .ok_or_else(|| Error::param("links", format!("no link error for {a}–{b}")))
    }
}

/// Depolarizing probability giving the stated average gate fidelity in
/// dimension `dim`.
pub fn calibrate_depolarizing(avg_gate_fidelity: f64, dim: usize) -> Result<f64> {
    if !(avg_gate_fidelity > 0.0 && avg_gate_fidelity <= 1.0) {
        return Err(Error::param("avg_gate_fidelity", "must lie in (0, 1]"));
    }
    if dim != 2 && dim != 4 {
        return Err(Error::param("dim", "must be 2 or 4"));
    }
    let d = dim as f64;
    Ok(((1.0 - avg_gate_fidelity) * d / (d - 1.0)).min(1.0))
}

// ---------------------------------------------------------------------------
// Compiled programs

#[derive(Debug, Clone)]
enum Op {
    U1(usize, M2),
    U2(usize, usize, M4),
    Depol1(usize, f64),
    Depol2(usize, usize, f64),
    Damp(usize, f64),
    Dephase(usize, f64),
}

struct Program {
    n: usize,
    ops: Vec<Op>,
    confusions: Vec<ConfusionMatrix>,
}

fn compile(circuit: &Circuit, noise: &NoiseModel) -> Result<Program> {
    noise.validate()?;
    let n = circuit.n_qubits();
    if n > MAX_SIM_QUBITS {
        return Err(Error::Capacity { dim: 1 << n.min(63), cap: 1 << MAX_SIM_QUBITS });
    }
    let labels = circuit.labels();
    let qn: Vec<QubitNoise> = labels.iter().map(|l| noise.qubit(l)).collect::<Result<_>>()?;
    let flat = circuit.expand_cnots();
    let mut ops = Vec::new();
    for layer in flat.layers() {
        let mut linked = BTreeSet::new();
        let mut gated = BTreeSet::new();
        for g in layer {
            match *g {
                Gate::Rotation { qubit, axis, angle } => {
                    ops.push(Op::U1(qubit, rotation(axis, angle)));
                    if !g.is_virtual() {
                        gated.insert(qubit);
                        if noise.p1 > 0.0 {
                            ops.push(Op::Depol1(qubit, noise.p1));
                        }
                    }
                }
                Gate::Cz { a, b } => {
                    ops.push(Op::U2(a, b, cz_matrix()));
                    gated.extend([a, b]);
                    if noise.p2 > 0.0 {
                        ops.push(Op::Depol2(a, b, noise.p2));
                    }
                }
                Gate::BellLink { a, b } | Gate::QstLink { from: a, to: b } => {
                    let m = if matches!(g, Gate::BellLink { .. }) { bell_link_matrix() } else { swap_matrix() };
                    ops.push(Op::U2(a, b, m));
                    linked.extend([a, b]);
                    let eps = noise.link_epsilon(&labels[a], &labels[b])?;
                    if eps > 0.0 {
                        ops.push(Op::Damp(a, eps));
                        ops.push(Op::Damp(b, eps));
                    }
                }
                Gate::Idle { .. } | Gate::MeasureAll => {}
                Gate::Cnot { .. } => unreachable!("expanded above"),
            }
        }
        let t = layer_duration(layer, &noise.durations);
        if t <= 0.0 {
            continue;
        }
        for (q, qn) in qn.iter().enumerate() {
            // Link errors already describe the qubits' decay during transfer.
            if linked.contains(&q) || (!noise.idle_on_gated && gated.contains(&q)) {
                continue;
            }
            let pd = qn.damping(t);
            if pd > 0.0 {
                ops.push(Op::Damp(q, pd));
            }
            let pz = qn.dephasing(t);
            if pz > 0.0 {
                ops.push(Op::Dephase(q, pz));
            }
        }
    }
    Ok(Program { n, ops, confusions: qn.iter().map(QubitNoise::confusion).collect() })
}

fn bit(n: usize, q: usize) -> usize {
    1 << (n - 1 - q)
}

fn apply_u1(psi: &mut [C64], n: usize, q: usize, m: &M2) {
    let b = bit(n, q);
    for i in 0..psi.len() {
        if i & b == 0 {
            let (x, y) = (psi[i], psi[i | b]);
            psi[i] = m[0][0] * x + m[0][1] * y;
            psi[i | b] = m[1][0] * x + m[1][1] * y;
        }
    }
}

fn apply_u2(psi: &mut [C64], n: usize, qa: usize, qb: usize, m: &M4) {
    let (ba, bb) = (bit(n, qa), bit(n, qb));
    for i in 0..psi.len() {
        if i & (ba | bb) == 0 {
            let idx = [i, i | bb, i | ba, i | ba | bb];
            let v = idx.map(|k| psi[k]);
            for (r, &k) in idx.iter().enumerate() {
                psi[k] = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2] + m[r][3] * v[3];
            }
        }
    }
}

fn pauli(k: usize) -> M2 {
    let i = C64::new(0.0, 1.0);
    match k {
        0 => [[ONE, ZERO], [ZERO, ONE]],
        1 => [[ZERO, ONE], [ONE, ZERO]],
        2 => [[ZERO, -i], [i, ZERO]],
        _ => [[ONE, ZERO], [ZERO, -ONE]],
    }
}

fn scale_m2(m: M2, s: f64) -> M2 {
    m.map(|r| r.map(|z| z * s))
}

fn normalize(psi: &mut [C64]) {
    let nrm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if nrm > 0.0 {
        psi.iter_mut().for_each(|z| *z /= nrm);
    }
}

fn run_trajectory<R: Rng>(p: &Program, rng: &mut R) -> Vec<C64> {
    let mut psi = vec![ZERO; 1 << p.n];
    psi[0] = ONE;
    for op in &p.ops {
        match *op {
            Op::U1(q, ref m) => apply_u1(&mut psi, p.n, q, m),
            Op::U2(a, b, ref m) => apply_u2(&mut psi, p.n, a, b, m),
            Op::Depol1(q, prob) => {
                if rng.random::<f64>() < prob {
                    let k = rng.random_range(0..4);
                    if k > 0 {
                        apply_u1(&mut psi, p.n, q, &pauli(k));
                    }
                }
            }
            Op::Depol2(a, b, prob) => {
                if rng.random::<f64>() < prob {
                    let k = rng.random_range(0..16);
                    if k / 4 > 0 {
                        apply_u1(&mut psi, p.n, a, &pauli(k / 4));
                    }
                    if k % 4 > 0 {
                        apply_u1(&mut psi, p.n, b, &pauli(k % 4));
                    }
                }
            }
            Op::Damp(q, prob) => {
                let b = bit(p.n, q);
                let p_exc: f64 = psi.iter().enumerate().filter(|(i, _)| i & b != 0).map(|(_, z)| z.norm_sqr()).sum();
                if rng.random::<f64>() < prob * p_exc {
                    for i in 0..psi.len() {
                        if i & b == 0 {
                            psi[i] = psi[i | b];
                            psi[i | b] = ZERO;
                        }
                    }
                } else {
                    let s = (1.0 - prob).sqrt();
                    for (i, z) in psi.iter_mut().enumerate() {
                        if i & b != 0 {
                            *z *= s;
                        }
                    }
                }
                normalize(&mut psi);
            }
            Op::Dephase(q, prob) => {
                if rng.random::<f64>() < prob {
                    apply_u1(&mut psi, p.n, q, &pauli(3));
                }
            }
        }
    }
    psi
}

// ρ → Σ K ρ K† with each K acting on qubit q (or the pair).
fn density_channel(rho: &CMatrix, n: usize, kraus: &[(Vec<usize>, Vec<C64>)]) -> CMatrix {
    let dim = rho.nrows();
    let mut out = CMatrix::zeros(dim, dim);
    for (qs, m) in kraus {
        let apply_cols = |mat: &mut CMatrix| {
            for col in mat.as_mut_slice().chunks_mut(dim) {
                match qs.len() {
                    1 => apply_u1(col, n, qs[0], &[[m[0], m[1]], [m[2], m[3]]]),
                    _ => {
                        let mm: M4 = std::array::from_fn(|r| std::array::from_fn(|c| m[4 * r + c]));
                        apply_u2(col, n, qs[0], qs[1], &mm)
                    }
                }
            }
        };
        let mut s = rho.clone();
        apply_cols(&mut s);
        let mut s = s.adjoint();
        apply_cols(&mut s);
        out += s;
    }
    out
}

fn flat2(m: &M2) -> Vec<C64> {
    m.iter().flatten().copied().collect()
}

fn flat4(m: &M4) -> Vec<C64> {
    m.iter().flatten().copied().collect()
}

fn kron2(a: &M2, b: &M2) -> M4 {
    std::array::from_fn(|r| std::array::from_fn(|c| a[r / 2][c / 2] * b[r % 2][c % 2]))
}

fn run_density(p: &Program) -> CMatrix {
    let dim = 1 << p.n;
    let mut rho = CMatrix::zeros(dim, dim);
    rho[(0, 0)] = ONE;
    for op in &p.ops {
        let kraus: Vec<(Vec<usize>, Vec<C64>)> = match *op {
            Op::U1(q, ref m) => vec![(vec![q], flat2(m))],
            Op::U2(a, b, ref m) => vec![(vec![a, b], flat4(m))],
            Op::Depol1(q, pr) => (0..4)
                .map(|k| {
                    let w = if k == 0 { 1.0 - 0.75 * pr } else { 0.25 * pr };
                    (vec![q], flat2(&scale_m2(pauli(k), w.sqrt())))
                })
                .collect(),
            Op::Depol2(a, b, pr) => (0..16)
                .map(|k| {
                    let w = if k == 0 { 1.0 - 15.0 / 16.0 * pr } else { pr / 16.0 };
                    let m = kron2(&pauli(k / 4), &pauli(k % 4));
                    (vec![a, b], m.iter().flatten().map(|z| z * w.sqrt()).collect())
                })
                .collect(),
            Op::Damp(q, pr) => vec![
                (vec![q], vec![ONE, ZERO, ZERO, C64::new((1.0 - pr).sqrt(), 0.0)]),
                (vec![q], vec![ZERO, C64::new(pr.sqrt(), 0.0), ZERO, ZERO]),
            ],
            Op::Dephase(q, pr) => vec![
                (vec![q], flat2(&scale_m2(pauli(0), (1.0 - pr).sqrt()))),
                (vec![q], flat2(&scale_m2(pauli(3), pr.sqrt()))),
            ],
        };
        rho = density_channel(&rho, p.n, &kraus);
    }
    rho
}

// ---------------------------------------------------------------------------
// Simulation entry points

/// Exact noiseless final state.
pub fn simulate_statevector(circuit: &Circuit) -> Result<StateVector> {
    let p = compile(circuit, &NoiseModel::ideal())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let psi = run_trajectory(&p, &mut rng);
    StateVector::new(HilbertSpace::qubits(p.n)?, CVector::from_vec(psi))
}

/// Exact channel evolution of the noise model (before readout).
pub fn simulate_density(circuit: &Circuit, noise: &NoiseModel) -> Result<DensityMatrix> {
    if circuit.n_qubits() > MAX_DENSITY_QUBITS {
        return Err(Error::Capacity { dim: 1 << circuit.n_qubits(), cap: 1 << MAX_DENSITY_QUBITS });
    }
    let p = compile(circuit, noise)?;
    DensityMatrix::with_tolerance(HilbertSpace::qubits(p.n)?, run_density(&p), 1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub labels: Vec<String>,
    /// Bitstring (qubit 0 first) → count.
    pub counts: BTreeMap<String, u64>,
    pub shots: u64,
    pub seed: u64,
}

impl ShotRecord {
    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.counts.values().sum();
        if total != self.shots {
            return Err(Error::InvalidState(format!("counts sum to {total}, expected {}", self.shots)));
        }
        if let Some(k) = self.counts.keys().find(|k| k.len() != self.labels.len() || k.chars().any(|c| c != '0' && c != '1')) {
            return Err(Error::InvalidState(format!("bad bitstring `{k}`")));
        }
        Ok(())
    }

    pub fn probability(&self, bits: &str) -> f64 {
        self.counts.get(bits).copied().unwrap_or(0) as f64 / self.shots as f64
    }

    pub fn all_zero(&self) -> f64 {
        self.probability(&"0".repeat(self.labels.len()))
    }

    pub fn all_one(&self) -> f64 {
        self.probability(&"1".repeat(self.labels.len()))
    }

    /// Mean of (−1)^(number of ones).
    pub fn parity(&self) -> f64 {
        let s: i64 = self
            .counts
            .iter()
            .map(|(k, &c)| if k.bytes().filter(|&b| b == b'1').count() % 2 == 0 { c as i64 } else { -(c as i64) })
            .sum();
        s as f64 / self.shots as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bitstring", "count"])?;
        for (k, c) in &self.counts {
            w.write_record([k.as_str(), &c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn bitstring(x: usize, n: usize) -> String {
    (0..n).map(|q| if x & bit(n, q) != 0 { '1' } else { '0' }).collect()
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub record: ShotRecord,
    /// Trajectory-averaged state, kept for registers of at most six qubits.
    pub density: Option<DensityMatrix>,
}

fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Runs `f` on every trajectory index in parallel and folds the results in
/// index order.
fn par_trajectories<T, F, G>(n_traj: usize, map: F, mut fold: G) -> T
where
    T: Send + Default,
    F: Fn(usize, &mut T) + Sync,
    G: FnMut(&mut T, T),
{
    let blocks: Vec<T> = (0..n_traj.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = T::default();
            for i in b * BLOCK..((b + 1) * BLOCK).min(n_traj) {
                map(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = T::default();
    for b in blocks {
        fold(&mut total, b);
    }
    total
}

pub fn simulate_trajectories(
    circuit: &Circuit,
    noise: &NoiseModel,
    n_traj: usize,
    shots_per_traj: u64,
    seed: u64,
) -> Result<TrajectoryResult> {
    if n_traj == 0 {
        return Err(Error::param("n_traj", "must be ≥ 1"));
    }
    let p = compile(circuit, noise)?;
    let n = p.n;
    let keep_rho = n <= MAX_DENSITY_QUBITS;

    #[derive(Default)]
    struct Acc {
        counts: BTreeMap<usize, u64>,
        rho: Option<CMatrix>,
    }

    let acc = par_trajectories(
        n_traj,
        |i, acc: &mut Acc| {
            let mut rng = trajectory_rng(seed, i);
            let psi = run_trajectory(&p, &mut rng);
            if keep_rho {
                let v = CVector::from_column_slice(&psi);
                let r = &v * v.adjoint();
                match acc.rho.as_mut() {
                    Some(s) => *s += r,
                    None => acc.rho = Some(r),
                }
            }
            let mut cdf = Vec::with_capacity(psi.len());
            let mut s = 0.0;
            for z in &psi {
                s += z.norm_sqr();
                cdf.push(s);
            }
            for _ in 0..shots_per_traj {
                let u = rng.random::<f64>() * s;
                let mut x = cdf.partition_point(|&c| c <= u).min(psi.len() - 1);
                for (q, cm) in p.confusions.iter().enumerate() {
                    let b = bit(n, q);
                    let flip = if x & b == 0 { 1.0 - cm.f0 } else { 1.0 - cm.f1 };
                    if flip > 0.0 && rng.random::<f64>() < flip {
                        x ^= b;
                    }
                }
                *acc.counts.entry(x).or_insert(0) += 1;
            }
        },
        |total, block| {
            for (k, c) in block.counts {
                *total.counts.entry(k).or_insert(0) += c;
            }
            if let Some(r) = block.rho {
                match total.rho.as_mut() {
                    Some(s) => *s += r,
                    None => total.rho = Some(r),
                }
            }
        },
    );
    let record = ShotRecord {
        labels: circuit.labels(),
        counts: acc.counts.into_iter().map(|(k, c)| (bitstring(k, n), c)).collect(),
        shots: n_traj as u64 * shots_per_traj,
        seed,
    };
    let density = match acc.rho {
        Some(r) => Some(DensityMatrix::with_tolerance(
            HilbertSpace::qubits(n)?,
            r / C64::new(n_traj as f64, 0.0),
            1e-8,
        )?),
        None => None,
    };
    Ok(TrajectoryResult { record, density })
}

// ---------------------------------------------------------------------------
// Parity and GHZ fidelity

pub fn ghz_state(n: usize) -> Result<StateVector> {
    let space = HilbertSpace::qubits(n)?;
    let mut v = CVector::zeros(space.dim());
    v[0] = ONE;
    v[space.dim() - 1] = ONE;
    StateVector::new(space, v)
}

/// Coefficients a_k with ⟨P(γ)⟩ = Σ_k a_k e^{iγ(N − 2k)}.
pub fn parity_spectrum(rho: &DensityMatrix) -> Result<Vec<C64>> {
    let n = qubit_count(rho.space())?;
    let full = (1usize << n) - 1;
    let m = rho.matrix();
    let mut a = vec![ZERO; n + 1];
    for x in 0..=full {
        a[x.count_ones() as usize] += m[(x, x ^ full)];
    }
    Ok(a)
}

fn parity_spectrum_amps(psi: &[C64], n: usize) -> Vec<C64> {
    let full = (1usize << n) - 1;
    let mut a = vec![ZERO; n + 1];
    for (x, z) in psi.iter().enumerate() {
        a[x.count_ones() as usize] += z * psi[x ^ full].conj();
    }
    a
}

fn qubit_count(space: &HilbertSpace) -> Result<usize> {
    if space.dims().iter().any(|&d| d != 2) {
        return Err(Error::Dimension("parity needs a register of qubits".into()));
    }
    let n = space.num_subsystems();
    if n < 2 {
        return Err(Error::Precondition("parity needs N ≥ 2".into()));
    }
    Ok(n)
}

pub fn parity_from_spectrum(a: &[C64], gamma: f64) -> f64 {
    let n = a.len() as f64 - 1.0;
    a.iter().enumerate().map(|(k, c)| (c * C64::from_polar(1.0, gamma * (n - 2.0 * k as f64))).re).sum()
}

/// ⟨⊗(cos γ X + sin γ Y)⟩.
pub fn parity_expectation(rho: &DensityMatrix, gamma: f64) -> Result<f64> {
    Ok(parity_from_spectrum(&parity_spectrum(rho)?, gamma))
}

pub fn parity_expectation_pure(psi: &StateVector, gamma: f64) -> Result<f64> {
    let n = qubit_count(psi.space())?;
    Ok(parity_from_spectrum(&parity_spectrum_amps(psi.amplitudes().as_slice(), n), gamma))
}

/// Parity estimated from shots taken after [`Circuit::with_parity_rotation`].
pub fn parity_from_shots(record: &ShotRecord) -> Result<f64> {
    record.validate()?;
    if record.labels.len() < 2 {
        return Err(Error::Precondition("parity needs N ≥ 2".into()));
    }
    if record.shots == 0 {
        return Err(Error::Precondition("no shots".into()));
    }
    Ok(record.parity())
}

pub fn gamma_grid(points: usize) -> Vec<f64> {
    (0..points).map(|k| 2.0 * PI * k as f64 / points as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhzFidelity {
    pub fidelity: f64,
    /// |ρ_{0…0,1…1}|.
    pub coherence: f64,
    /// arg ρ_{0…0,1…1}; the parity then goes as cos(Nγ + phase).
    pub phase: f64,
}

/// Fidelity from the all-zero/all-one populations and a parity sweep, with
/// the coherence read off the frequency-N Fourier component.
pub fn estimate_ghz_fidelity(
    n_qubits: usize,
    p_all0: f64,
    p_all1: f64,
    gammas: &[f64],
    parities: &[f64],
) -> Result<GhzFidelity> {
    if n_qubits < 2 {
        return Err(Error::Precondition("GHZ estimator needs N ≥ 2".into()));
    }
    if gammas.len() != parities.len() {
        return Err(Error::Dimension(format!("{} angles for {} parities", gammas.len(), parities.len())));
    }
    let m = gammas.len();
    if m < 2 * n_qubits + 1 {
        return Err(Error::Precondition(format!(
            "{m} grid points alias frequency {n_qubits}; need at least {}",
            2 * n_qubits + 1
        )));
    }
    let step = 2.0 * PI / m as f64;
    if gammas.iter().enumerate().any(|(k, g)| (g - gammas[0] - step * k as f64).abs() > 1e-9) {
        return Err(Error::Precondition("γ grid must be uniform over one period".into()));
    }
    let n = n_qubits as f64;
    let c: C64 = gammas
        .iter()
        .zip(parities)
        .map(|(g, p)| C64::from_polar(*p, -n * g))
        .sum::<C64>()
        / m as f64;
    Ok(GhzFidelity { fidelity: 0.5 * (p_all0 + p_all1) + c.norm(), coherence: c.norm(), phase: c.arg() })
}

/// Estimator applied to exact expectations of `rho`.
pub fn ghz_fidelity_exact(rho: &DensityMatrix, points: usize) -> Result<GhzFidelity> {
    let n = qubit_count(rho.space())?;
    let a = parity_spectrum(rho)?;
    let gammas = gamma_grid(points);
    let parities: Vec<f64> = gammas.iter().map(|&g| parity_from_spectrum(&a, g)).collect();
    let m = rho.matrix();
    let d = m.nrows();
    estimate_ghz_fidelity(n, m[(0, 0)].re, m[(d - 1, d - 1)].re, &gammas, &parities)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GhzStep {
    I,
    II,
    III,
    IV,
}

impl GhzStep {
    pub const ALL: [GhzStep; 4] = [GhzStep::I, GhzStep::II, GhzStep::III, GhzStep::IV];

    pub fn n_qubits(self) -> usize {
        match self {
            GhzStep::I => 4,
            GhzStep::II => 6,
            GhzStep::III => 10,
            GhzStep::IV => 12,
        }
    }
}

impl fmt::Display for GhzStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GhzStep::I => "I",
            GhzStep::II => "II",
            GhzStep::III => "III",
            GhzStep::IV => "IV",
        };
        f.write_str(s)
    }
}

impl FromStr for GhzStep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" | "1" => Ok(GhzStep::I),
            "II" | "2" => Ok(GhzStep::II),
            "III" | "3" => Ok(GhzStep::III),
            "IV" | "4" => Ok(GhzStep::IV),
            other => Err(Error::param("step", format!("unknown GHZ step `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub name: String,
    pub qubits: Vec<String>,
}

/// Modules and cables available to the GHZ protocol. Module `A` is the hub;
/// `B` and `E` hang off it. Fan-out inside a module follows the listed
/// qubit order, skipping cable endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GhzLayout {
    pub modules: Vec<ModuleSpec>,
    pub interconnects: Vec<Interconnect>,
}

impl Default for GhzLayout {
    fn default() -> Self {
        let module = |m: &str| ModuleSpec { name: m.into(), qubits: (1..=4).map(|i| format!("Q{i}{m}")).collect() };
        Self {
            modules: vec![module("A"), module("B"), module("E")],
            interconnects: vec![Interconnect::new("Q1A", "Q3B", 11), Interconnect::new("Q4A", "Q1E", 10)],
        }
    }
}

impl GhzLayout {
    pub fn module_of(&self, label: &str) -> Result<&str> {
        self.modules
            .iter()
            .find(|m| m.qubits.iter().any(|q| q == label))
            .map(|m| m.name.as_str())
            .ok_or_else(|| Error::Layout(format!("qubit `{label}` belongs to no module")))
    }

    fn module(&self, name: &str) -> Result<&ModuleSpec> {
        self.modules
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Layout(format!("layout has no module {name}")))
    }

    // Endpoints (in `x`, in `y`) of the first cable between modules x and y.
    fn cable(&self, x: &str, y: &str) -> Result<(String, String, u32)> {
        for ic in &self.interconnects {
            let (ma, mb) = (self.module_of(&ic.a)?, self.module_of(&ic.b)?);
            if ma == x && mb == y {
                return Ok((ic.a.clone(), ic.b.clone(), ic.mode_m));
            }
            if ma == y && mb == x {
                return Ok((ic.b.clone(), ic.a.clone(), ic.mode_m));
            }
        }
        Err(Error::Layout(format!("no interconnect between modules {x} and {y}")))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for m in &self.modules {
            for q in &m.qubits {
                if !seen.insert(q.as_str()) {
                    return Err(Error::Layout(format!("qubit `{q}` listed twice")));
                }
            }
        }
        for ic in &self.interconnects {
            if self.module_of(&ic.a)? == self.module_of(&ic.b)? {
                return Err(Error::Layout(format!("interconnect {}–{} stays inside one module", ic.a, ic.b)));
            }
        }
        Ok(())
    }
}

/// GHZ preparation circuit for one protocol step.
pub fn build_ghz_circuit(step: GhzStep, layout: &GhzLayout) -> Result<Circuit> {
    layout.validate()?;
    let (a0, b0, m_ab) = layout.cable("A", "B")?;
    let ae = if step >= GhzStep::III { Some(layout.cable("A", "E")?) } else { None };
    let rest = |module: &str, skip: &[&str], need: usize| -> Result<Vec<String>> {
        let v: Vec<String> =
            layout.module(module)?.qubits.iter().filter(|q| !skip.contains(&q.as_str())).cloned().collect();
        if v.len() < need {
            return Err(Error::Layout(format!("module {module} needs {need} free qubits for step {step}")));
        }
        Ok(v)
    };

    let mut layers: Vec<Vec<(&'static str, String, String)>> = Vec::new();
    let mut used: Vec<String> = Vec::new();
    let mut links = vec![Interconnect::new(a0.clone(), b0.clone(), m_ab)];
    match &ae {
        None => {
            let ar = rest("A", &[&a0], if step == GhzStep::I { 1 } else { 2 })?;
            let br = rest("B", &[&b0], if step == GhzStep::I { 1 } else { 2 })?;
            layers.push(vec![("bell", a0.clone(), b0.clone())]);
            layers.push(vec![("cnot", a0.clone(), ar[0].clone()), ("cnot", b0.clone(), br[0].clone())]);
            if step == GhzStep::II {
                layers.push(vec![("cnot", ar[0].clone(), ar[1].clone()), ("cnot", b0.clone(), br[1].clone())]);
            }
        }
        Some((ax, e0, m_ae)) => {
            links.push(Interconnect::new(ax.clone(), e0.clone(), *m_ae));
            let full = step == GhzStep::IV;
            let ar = rest("A", &[&a0, ax], 2)?;
            let br = rest("B", &[&b0], if full { 3 } else { 2 })?;
            let er = rest("E", &[e0], if full { 3 } else { 2 })?;
            layers.push(vec![("bell", a0.clone(), b0.clone())]);
            layers.push(vec![("cnot", a0.clone(), ax.clone()), ("cnot", b0.clone(), br[0].clone())]);
            // The transfer to E is started early, in parallel with the local fan-out.
            layers.push(vec![
                ("qst", ax.clone(), e0.clone()),
                ("cnot", a0.clone(), ar[0].clone()),
                ("cnot", b0.clone(), br[1].clone()),
            ]);
            layers.push(vec![
                ("cnot", e0.clone(), er[0].clone()),
                ("cnot", ar[0].clone(), ar[1].clone()),
                ("cnot", a0.clone(), ax.clone()),
            ]);
            let mut last = vec![("cnot", er[0].clone(), er[1].clone())];
            if full {
                last.push(("cnot", br[0].clone(), br[2].clone()));
                last.push(("cnot", e0.clone(), er[2].clone()));
            }
            layers.push(last);
        }
    }
    for (_, x, y) in layers.iter().flatten() {
        for q in [x, y] {
            if !used.contains(q) {
                used.push(q.clone());
            }
        }
    }
    // Register in layout order.
    let mut tags = Vec::new();
    for m in &layout.modules {
        for q in &m.qubits {
            if used.contains(q) {
                tags.push(QubitTag::new(q.clone(), m.name.clone()));
            }
        }
    }
    let mut c = Circuit::new(tags)?;
    for l in links {
        c.add_interconnect(l)?;
    }
    for layer in layers {
        let gates = layer
            .into_iter()
            .map(|(kind, x, y)| {
                let (x, y) = (c.index_of(&x)?, c.index_of(&y)?);
                Ok(match kind {
                    "bell" => Gate::BellLink { a: x, b: y },
                    "qst" => Gate::QstLink { from: x, to: y },
                    _ => Gate::Cnot { control: x, target: y },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        c.push_layer(gates)?;
    }
    debug_assert_eq!(c.n_qubits(), step.n_qubits());
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhzRun {
    pub n_qubits: usize,
    pub n_traj: usize,
    pub seed: u64,
    pub fidelity: f64,
    /// Standard error over trajectories.
    pub std_error: f64,
    pub p_all0: f64,
    pub p_all1: f64,
    pub coherence: f64,
    pub phase: f64,
    pub gammas: Vec<f64>,
    pub parities: Vec<f64>,
}

/// GHZ fidelity of the circuit's final state over noisy trajectories, using
/// exact per-trajectory expectations (readout taken as corrected).
pub fn simulate_ghz_fidelity(
    circuit: &Circuit,
    noise: &NoiseModel,
    n_traj: usize,
    gamma_points: usize,
    seed: u64,
) -> Result<GhzRun> {
    if n_traj < 2 {
        return Err(Error::param("n_traj", "must be ≥ 2"));
    }
    let p = compile(circuit, noise)?;
    let n = p.n;
    if n < 2 {
        return Err(Error::Precondition("GHZ needs N ≥ 2".into()));
    }
    let full = (1usize << n) - 1;

    let per_traj: Vec<(f64, f64, C64, Vec<C64>)> = {
        #[derive(Default)]
        struct Acc(Vec<(f64, f64, C64, Vec<C64>)>);
        par_trajectories(
            n_traj,
            |i, acc: &mut Acc| {
                let mut rng = trajectory_rng(seed, i);
                let psi = run_trajectory(&p, &mut rng);
                let a = parity_spectrum_amps(&psi, n);
                acc.0.push((psi[0].norm_sqr(), psi[full].norm_sqr(), a[0], a));
            },
            |total, b| total.0.extend(b.0),
        )
        .0
    };
    let nt = n_traj as f64;
    let mut spec = vec![ZERO; n + 1];
    let (mut p0, mut p1) = (0.0, 0.0);
    for (x0, x1, _, a) in &per_traj {
        p0 += x0;
        p1 += x1;
        for (s, v) in spec.iter_mut().zip(a) {
            *s += v;
        }
    }
    p0 /= nt;
    p1 /= nt;
    spec.iter_mut().for_each(|s| *s /= nt);
    let gammas = gamma_grid(gamma_points);
    let parities: Vec<f64> = gammas.iter().map(|&g| parity_from_spectrum(&spec, g)).collect();
    let est = estimate_ghz_fidelity(n, p0, p1, &gammas, &parities)?;
    // Linear per-trajectory estimator at the ensemble phase.
    let rot = C64::from_polar(1.0, -est.phase);
    let f_t: Vec<f64> = per_traj.iter().map(|(x0, x1, c, _)| 0.5 * (x0 + x1) + (c * rot).re).collect();
    let mean = f_t.iter().sum::<f64>() / nt;
    let var = f_t.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (nt - 1.0);
    Ok(GhzRun {
        n_qubits: n,
        n_traj,
        seed,
        fidelity: est.fidelity,
        std_error: (var / nt).sqrt(),
        p_all0: p0,
        p_all1: p1,
        coherence: est.coherence,
        phase: est.phase,
        gammas,
        parities,
    })
}

/// Bell fidelity of an isolated cable link whose qubits each suffer
/// amplitude damping `epsilon`.
pub fn link_bell_fidelity(epsilon: f64) -> Result<f64> {
    let mut c = Circuit::new(vec![QubitTag::new("a", "X"), QubitTag::new("b", "Y")])?;
    c.add_interconnect(Interconnect::new("a", "b", 0))?;
    c.push_layer(vec![Gate::BellLink { a: 0, b: 1 }])?;
    let noise = NoiseModel { default_link_epsilon: Some(epsilon), ..NoiseModel::ideal() };
    let rho = simulate_density(&c, &noise)?;
    let m = rho.matrix();
    Ok(0.5 * (m[(0, 0)].re + m[(3, 3)].re) + m[(3, 0)].re)
}

/// Link damping reproducing a target Bell fidelity, by bisection.
pub fn calibrate_link_epsilon(target: f64) -> Result<f64> {
    if !(0.5..=1.0).contains(&target) {
        return Err(Error::Range(format!("link Bell fidelity {target} outside [0.5, 1]")));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if link_bell_fidelity(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
