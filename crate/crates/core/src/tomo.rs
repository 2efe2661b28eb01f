//! Readout-error mitigation, constrained state and process tomography, and
//! fidelity metrics.
//!
//! A prerotation G followed by Z readout measures G†ZG: `I` gives Z, `X/2`
//! gives +Y and `Y/2` gives −X. Outcome bit 0 is the +1 eigenvalue. Bitstring
//! index bits follow subsystem order, qubit 0 most significant.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    clip_unit, pauli_x, pauli_y, pauli_z, CMatrix, DensityMatrix, HilbertSpace, C64, I, ONE, ZERO,
};

/// Largest register for full state reconstruction.
pub const MAX_TOMO_QUBITS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Prerotation {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "X/2")]
    X2,
    #[serde(rename = "Y/2")]
    Y2,
}

impl Prerotation {
    pub const ALL: [Prerotation; 3] = [Prerotation::I, Prerotation::X2, Prerotation::Y2];

    pub fn unitary(self) -> CMatrix {
        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        match self {
            Prerotation::I => CMatrix::identity(2, 2),
            Prerotation::X2 => CMatrix::from_row_slice(2, 2, &[s, -I * s, -I * s, s]),
            Prerotation::Y2 => CMatrix::from_row_slice(2, 2, &[s, -s, s, s]),
        }
    }

    /// Pauli axis (1 = X, 2 = Y, 3 = Z) and sign of the measured observable.
    pub fn observable(self) -> (usize, f64) {
        match self {
            Prerotation::I => (3, 1.0),
            Prerotation::X2 => (2, 1.0),
            Prerotation::Y2 => (1, -1.0),
        }
    }
}

impl fmt::Display for Prerotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Prerotation::I => "I",
            Prerotation::X2 => "X/2",
            Prerotation::Y2 => "Y/2",
        })
    }
}

impl FromStr for Prerotation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" => Ok(Prerotation::I),
            "X/2" => Ok(Prerotation::X2),
            "Y/2" => Ok(Prerotation::Y2),
            other => Err(Error::Parse(format!("unknown prerotation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TomographySettings {
    pub n_qubits: usize,
    pub shots: u64,
    pub estimator: Estimator,
}

impl TomographySettings {
    pub fn exact(n_qubits: usize) -> Self {
        Self { n_qubits, shots: 3000, estimator: Estimator::Exact }
    }

    pub fn sampled(n_qubits: usize, shots: u64) -> Self {
        Self { n_qubits, shots, estimator: Estimator::Sampled }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots < 1 {
            return Err(Error::param("shots", "must be ≥ 1"));
        }
        if self.n_qubits == 0 || self.n_qubits > MAX_TOMO_QUBITS {
            return Err(Error::param("n_qubits", format!("must lie in 1..={MAX_TOMO_QUBITS}")));
        }
        Ok(())
    }
}

/// Every prerotation assignment, first qubit slowest.
pub fn all_settings(n: usize) -> Vec<Vec<Prerotation>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|s| {
                Prerotation::ALL.iter().map(move |&g| {
                    let mut t = s.clone();
                    t.push(g);
                    t
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingData {
    pub prerotations: Vec<Prerotation>,
    /// Observed outcome probabilities indexed by bitstring.
    pub probabilities: Vec<f64>,
    /// Zero for exact expectations.
    pub shots: u64,
}

/// Readout assignment for one qubit: P(observed | true).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub f0: f64,
    pub f1: f64,
}

impl ConfusionMatrix {
    pub fn new(f0: f64, f1: f64) -> Result<Self> {
        for (name, v) in [("f0", f0), ("f1", f1)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, "must lie in [0, 1]"));
            }
        }
        Ok(Self { f0, f1 })
    }

    pub fn ideal() -> Self {
        Self { f0: 1.0, f1: 1.0 }
    }

    /// Columns are true states, rows observed outcomes.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.f0, 1.0 - self.f1], [1.0 - self.f0, self.f1]]
    }

    pub fn inverse(&self) -> Result<[[f64; 2]; 2]> {
        let det = self.f0 + self.f1 - 1.0;
        if det <= 1e-12 {
            return Err(Error::Conditioning(format!(
                "confusion matrix with F0 + F1 = {:.6} is singular",
                self.f0 + self.f1
            )));
        }
        let m = self.matrix();
        Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
    }
}

fn apply_per_qubit(probs: &[f64], mats: &[[[f64; 2]; 2]]) -> Vec<f64> {
    let n = mats.len();
    let mut v = probs.to_vec();
    for (q, m) in mats.iter().enumerate() {
        let stride = 1usize << (n - 1 - q);
        for base in 0..v.len() {
            if base & stride != 0 {
                continue;
            }
            let (a, b) = (v[base], v[base | stride]);
            v[base] = m[0][0] * a + m[0][1] * b;
            v[base | stride] = m[1][0] * a + m[1][1] * b;
        }
    }
    v
}

fn check_register(len: usize, n: usize) -> Result<()> {
    if len != 1usize << n {
        return Err(Error::Dimension(format!("{len} probabilities for {n} qubits")));
    }
    Ok(())
}

/// Push true-state probabilities through the readout channel.
pub fn apply_confusion(probs: &[f64], confusions: &[ConfusionMatrix]) -> Result<Vec<f64>> {
    check_register(probs.len(), confusions.len())?;
    let mats: Vec<_> = confusions.iter().map(|c| c.matrix()).collect();
    Ok(apply_per_qubit(probs, &mats))
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Invert the tensor-product readout map, then project onto the simplex.
pub fn readout_correct(observed: &[f64], confusions: &[ConfusionMatrix]) -> Result<Vec<f64>> {
    check_register(observed.len(), confusions.len())?;
    let total: f64 = observed.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Precondition(format!("probabilities sum to {total}, not 1")));
    }
    let inv = confusions.iter().map(|c| c.inverse()).collect::<Result<Vec<_>>>()?;
    let raw = apply_per_qubit(observed, &inv);
    if raw.iter().all(|&p| p >= 0.0) {
        let s: f64 = raw.iter().sum();
        return Ok(raw.iter().map(|p| p / s).collect());
    }
    Ok(project_simplex(&raw))
}

fn setting_unitary(setting: &[Prerotation]) -> CMatrix {
    setting
        .iter()
        .fold(CMatrix::identity(1, 1), |acc, g| acc.kronecker(&g.unitary()))
}

/// Draw a multinomial count vector by sequential binomials.
pub fn sample_counts<R: Rng + ?Sized>(probs: &[f64], shots: u64, rng: &mut R) -> Vec<u64> {
    let mut left = shots;
    let mut mass = 1.0;
    let mut out = vec![0; probs.len()];
    for (slot, &p) in out.iter_mut().zip(probs) {
        if left == 0 {
            break;
        }
        let q = if mass > 0.0 { (p.max(0.0) / mass).clamp(0.0, 1.0) } else { 1.0 };
        let k = Binomial::new(left, q).map(|b| b.sample(rng)).unwrap_or(left);
        *slot = k;
        left -= k;
        mass -= p.max(0.0);
    }
    if left > 0 {
        *out.last_mut().expect("non-empty") += left;
    }
    out
}

/// Simulated tomography record for a state, with optional readout error.
pub fn measure_state<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    settings: &TomographySettings,
    confusions: Option<&[ConfusionMatrix]>,
    rng: &mut R,
) -> Result<Vec<SettingData>> {
    settings.validate()?;
    let n = settings.n_qubits;
    if rho.space().dims() != vec![2; n].as_slice() {
        return Err(Error::Dimension(format!("state is not a {n}-qubit register")));
    }
    if let Some(c) = confusions {
        if c.len() != n {
            return Err(Error::Dimension(format!("{} confusion matrices for {n} qubits", c.len())));
        }
    }
    let mut out = Vec::new();
    for setting in all_settings(n) {
        let u = setting_unitary(&setting);
        let rotated = &u * rho.matrix() * u.adjoint();
        let mut p: Vec<f64> = (0..rotated.nrows()).map(|i| rotated[(i, i)].re.max(0.0)).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        if let Some(c) = confusions {
            p = apply_confusion(&p, c)?;
        }
        let (probabilities, shots) = match settings.estimator {
            Estimator::Exact => (p, 0),
            Estimator::Sampled => {
                let counts = sample_counts(&p, settings.shots, rng);
                (counts.iter().map(|&k| k as f64 / settings.shots as f64).collect(), settings.shots)
            }
        };
        out.push(SettingData { prerotations: setting, probabilities, shots });
    }
    Ok(out)
}

fn pauli(axis: usize) -> CMatrix {
    match axis {
        0 => CMatrix::identity(2, 2),
        1 => pauli_x(),
        2 => pauli_y(),
        _ => pauli_z(),
    }
}

/// Hermitian part with eigenvalues projected onto the simplex.
pub fn project_psd(m: &CMatrix) -> CMatrix {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let proj = project_simplex(&vals);
    let d = m.nrows();
    let mut out = CMatrix::zeros(d, d);
    for (k, &l) in proj.iter().enumerate() {
        if l > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += (&v * v.adjoint()) * C64::new(l, 0.0);
        }
    }
    out
}

/// Linear inversion over corrected outcome probabilities followed by PSD
/// projection. Each Pauli expectation averages every compatible setting.
pub fn state_tomography(data: &[SettingData], confusions: Option<&[ConfusionMatrix]>) -> Result<DensityMatrix> {
    let n = data.first().map(|d| d.prerotations.len()).ok_or_else(|| {
        Error::Precondition("no tomography settings supplied".into())
    })?;
    if n == 0 || n > MAX_TOMO_QUBITS {
        return Err(Error::Precondition(format!("{n} qubits outside 1..={MAX_TOMO_QUBITS}")));
    }
    let mut by_setting: BTreeMap<Vec<Prerotation>, &SettingData> = BTreeMap::new();
    for d in data {
        if d.prerotations.len() != n {
            return Err(Error::Precondition("settings disagree on the number of qubits".into()));
        }
        check_register(d.probabilities.len(), n)?;
        by_setting.insert(d.prerotations.clone(), d);
    }
    let missing = all_settings(n).into_iter().filter(|s| !by_setting.contains_key(s)).count();
    if missing > 0 {
        return Err(Error::Precondition(format!("{missing} of {} settings missing", 3usize.pow(n as u32))));
    }
    let shots = data[0].shots;
    if data.iter().any(|d| d.shots != shots) {
        return Err(Error::Precondition("inconsistent shot counts across settings".into()));
    }
    let confusions: Vec<ConfusionMatrix> = match confusions {
        Some(c) if c.len() == n => c.to_vec(),
        Some(c) => return Err(Error::Dimension(format!("{} confusion matrices for {n} qubits", c.len()))),
        None => vec![ConfusionMatrix::ideal(); n],
    };
    let corrected: BTreeMap<&Vec<Prerotation>, Vec<f64>> = by_setting
        .iter()
        .map(|(k, d)| Ok((k, readout_correct(&d.probabilities, &confusions)?)))
        .collect::<Result<_>>()?;

    let dim = 1usize << n;
    let mut rho = CMatrix::zeros(dim, dim);
    let n_paulis = 4usize.pow(n as u32);
    for code in 0..n_paulis {
        let axes: Vec<usize> = (0..n).map(|q| (code / 4usize.pow((n - 1 - q) as u32)) % 4).collect();
        let mut acc = 0.0;
        let mut count = 0usize;
        for (setting, probs) in &corrected {
            let mut sign = 1.0;
            let compatible = axes.iter().zip(setting.iter()).all(|(&a, g)| {
                if a == 0 {
                    return true;
                }
                let (axis, s) = g.observable();
                sign *= s;
                axis == a
            });
            if !compatible {
                continue;
            }
            let e: f64 = probs
                .iter()
                .enumerate()
                .map(|(x, p)| {
                    let parity = axes
                        .iter()
                        .enumerate()
                        .filter(|(q, &a)| a != 0 && (x >> (n - 1 - q)) & 1 == 1)
                        .count();
                    if parity % 2 == 0 { *p } else { -*p }
                })
                .sum();
            acc += sign * e;
            count += 1;
        }
        let expectation = acc / count as f64;
        let p = axes.iter().fold(CMatrix::identity(1, 1), |m, &a| m.kronecker(&pauli(a)));
        rho += p * C64::new(expectation / dim as f64, 0.0);
    }
    let projected = project_psd(&rho);
    DensityMatrix::new(HilbertSpace::qubits(n)?, projected)
}

/// Process-tomography inputs: |0⟩, (|0⟩−i|1⟩)/√2, (|0⟩+|1⟩)/√2, |1⟩.
pub fn process_inputs() -> [CMatrix; 4] {
    let h = C64::new(0.5, 0.0);
    let hi = C64::new(0.0, 0.5);
    [
        CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]),
        CMatrix::from_row_slice(2, 2, &[h, hi, -hi, h]),
        CMatrix::from_row_slice(2, 2, &[h, h, h, h]),
        CMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, ONE]),
    ]
}

/// χ in the unnormalized Pauli basis {I, X, Y, Z}: E(ρ) = Σ χ_mn P_m ρ P_n.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessMatrix {
    chi: CMatrix,
}

impl ProcessMatrix {
    pub fn new(chi: CMatrix) -> Result<Self> {
        if chi.nrows() != 4 || chi.ncols() != 4 {
            return Err(Error::Dimension("χ must be 4×4".into()));
        }
        let herm = (&chi - chi.adjoint()).iter().fold(0.0f64, |a, z| a.max(z.norm()));
        if herm > 1e-8 {
            return Err(Error::InvalidState(format!("χ not Hermitian ({herm:.2e})")));
        }
        if (chi.trace() - ONE).norm() > 1e-6 {
            return Err(Error::InvalidState(format!("Tr χ = {:.8}", chi.trace().re)));
        }
        let min = chi.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-8 {
            return Err(Error::InvalidState(format!("χ has eigenvalue {min:.2e}")));
        }
        Ok(Self { chi })
    }

    pub fn chi(&self) -> &CMatrix {
        &self.chi
    }

    pub fn identity() -> Self {
        Self::from_unitary(&CMatrix::identity(2, 2))
    }

    pub fn from_unitary(u: &CMatrix) -> Self {
        let c: Vec<C64> = (0..4).map(|m| (pauli(m) * u).trace() * 0.5).collect();
        let chi = CMatrix::from_fn(4, 4, |m, n| c[m] * c[n].conj());
        Self { chi }
    }

    /// χ of a channel given by Kraus operators.
    pub fn from_kraus(kraus: &[CMatrix]) -> Result<Self> {
        let mut chi = CMatrix::zeros(4, 4);
        for k in kraus {
            let c: Vec<C64> = (0..4).map(|m| (pauli(m) * k).trace() * 0.5).collect();
            chi += CMatrix::from_fn(4, 4, |m, n| c[m] * c[n].conj());
        }
        Self::new(chi)
    }

    /// Apply the channel to a single-qubit operator.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(2, 2);
        for m in 0..4 {
            for n in 0..4 {
                let c = self.chi[(m, n)];
                if c != ZERO {
                    out += pauli(m) * rho * pauli(n) * c;
                }
            }
        }
        out
    }
}

/// Solve for χ from the outputs of [`process_inputs`] and project it onto
/// the Hermitian, PSD, unit-trace set.
pub fn process_tomography(outputs: &[CMatrix]) -> Result<ProcessMatrix> {
    if outputs.len() != 4 || outputs.iter().any(|o| o.nrows() != 2 || o.ncols() != 2) {
        return Err(Error::Precondition("need four 2×2 output states".into()));
    }
    let inputs = process_inputs();
    // Rows: (input k, entry i, j) as real and imaginary parts; columns: Re/Im χ_mn.
    let mut a = DMatrix::<f64>::zeros(4 * 4 * 2, 32);
    let mut b = nalgebra::DVector::<f64>::zeros(32);
    for (k, rho) in inputs.iter().enumerate() {
        for m in 0..4 {
            for n in 0..4 {
                let term = pauli(m) * rho * pauli(n);
                let col = 2 * (4 * m + n);
                for i in 0..2 {
                    for j in 0..2 {
                        let row = 2 * (4 * k + 2 * i + j);
                        let t = term[(i, j)];
                        a[(row, col)] = t.re;
                        a[(row, col + 1)] = -t.im;
                        a[(row + 1, col)] = t.im;
                        a[(row + 1, col + 1)] = t.re;
                    }
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let row = 2 * (4 * k + 2 * i + j);
                b[row] = outputs[k][(i, j)].re;
                b[row + 1] = outputs[k][(i, j)].im;
            }
        }
    }
    let svd = a.svd(true, true);
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10).count();
    assert_eq!(rank, 32, "fixed input set is informationally complete");
    let x = svd.solve(&b, 1e-12).map_err(|e| Error::Fit(e.to_string()))?;
    let chi = CMatrix::from_fn(4, 4, |m, n| C64::new(x[2 * (4 * m + n)], x[2 * (4 * m + n) + 1]));
    ProcessMatrix::new(project_psd(&chi))
}

/// Re Tr(χ·χ_ideal), clipped into [0, 1] within 1e-9.
pub fn process_fidelity(chi: &ProcessMatrix, ideal: &ProcessMatrix) -> f64 {
    clip_unit((chi.chi() * ideal.chi()).trace().re)
}

/// Mean and sample standard deviation of `n` seeded repeats run in parallel.
pub fn bootstrap_repeats<F>(experiment: F, n: usize, base_seed: u64) -> Result<(f64, f64)>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    if n == 0 {
        return Err(Error::param("n_repeats", "must be ≥ 1"));
    }
    let vals = (0..n as u64)
        .into_par_iter()
        .map(|k| experiment(base_seed.wrapping_add(k)))
        .collect::<Result<Vec<f64>>>()?;
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    Ok((mean, var.sqrt()))
}

/// Row-major matrix as `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&CMatrix> for MatrixJson {
    fn from(m: &CMatrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push([m[(i, j)].re, m[(i, j)].im]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<CMatrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {}×{} matrix",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(CMatrix::from_row_iterator(self.rows, self.cols, self.data.iter().map(|[r, i]| C64::new(*r, *i))))
    }
}

/// `row,col,re,im` lines.
pub fn write_matrix_csv<W: Write>(m: &CMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", "re", "im"])?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.serialize((i, j, m[(i, j)].re, m[(i, j)].im))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Counts per bitstring for one setting, as exchanged in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingCounts {
    pub prerotations: Vec<Prerotation>,
    pub counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyRecord {
    pub n_qubits: usize,
    pub settings: Vec<SettingCounts>,
}

impl TomographyRecord {
    pub fn from_data(data: &[SettingData]) -> Result<Self> {
        let n = data.first().map(|d| d.prerotations.len()).unwrap_or(0);
        let settings = data
            .iter()
            .map(|d| {
                if d.shots == 0 {
                    return Err(Error::Precondition("exact expectations carry no counts".into()));
                }
                let counts = d
                    .probabilities
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(x, p)| (format!("{x:0n$b}"), (p * d.shots as f64).round() as u64))
                    .collect();
                Ok(SettingCounts { prerotations: d.prerotations.clone(), counts })
            })
            .collect::<Result<_>>()?;
        Ok(Self { n_qubits: n, settings })
    }

    pub fn to_data(&self) -> Result<Vec<SettingData>> {
        let n = self.n_qubits;
        self.settings
            .iter()
            .map(|s| {
                let mut counts = vec![0u64; 1 << n];
                for (bits, &c) in &s.counts {
                    let x = usize::from_str_radix(bits, 2)
                        .ok()
                        .filter(|x| bits.len() == n && *x < counts.len())
                        .ok_or_else(|| Error::Parse(format!("bad bitstring `{bits}`")))?;
                    counts[x] += c;
                }
                let shots: u64 = counts.iter().sum();
                if shots == 0 {
                    return Err(Error::Precondition("setting with zero shots".into()));
                }
                Ok(SettingData {
                    prerotations: s.prerotations.clone(),
                    probabilities: counts.iter().map(|&c| c as f64 / shots as f64).collect(),
                    shots,
                })
            })
            .collect()
    }
}
