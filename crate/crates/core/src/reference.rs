//! Reference datasets shipped under `data/`.

use serde::Deserialize;

use crate::devicelab::{read_qubit_table, CableParams, QubitParams};
use crate::lossfit::{read_q_data, LossGeometry, QDataPoint};
use crate::error::{Error, Result};

pub const CABLE_Q_CSV: &str = include_str!("../../../data/cable_q.csv");
pub const QUBITS_CSV: &str = include_str!("../../../data/qubits.csv");
pub const LINKS_CSV: &str = include_str!("../../../data/links.csv");
pub const FIVE_MODE_CSV: &str = include_str!("../../../data/five_mode_t1r.csv");

/// Intrinsic cable quality factors by cable type.
#[derive(Debug, Clone, Deserialize)]
pub struct CableRecord {
    pub source: String,
    pub material: String,
    pub diameter_mm: f64,
    pub q_cb: f64,
}

/// Measured per-link transfer and Bell fidelities.
#[derive(Debug, Clone, Deserialize)]
pub struct LinkRecord {
    pub link: String,
    pub f_qst: f64,
    pub f_qst_std: f64,
    pub f_bell: f64,
    pub f_bell_std: f64,
}

pub fn qubit_table() -> Vec<QubitParams> {
    read_qubit_table(QUBITS_CSV.as_bytes()).expect("shipped qubit table is valid")
}

pub fn qubit(label: &str) -> Result<QubitParams> {
    qubit_table()
        .into_iter()
        .find(|q| q.label == label)
        .ok_or_else(|| Error::param("label", format!("no qubit `{label}` in the reference table")))
}

fn read_records<T: serde::de::DeserializeOwned>(text: &str) -> Vec<T> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .expect("shipped table is valid")
}

pub fn cable_table() -> Vec<CableRecord> {
    read_records(CABLE_Q_CSV)
}

pub fn link_table() -> Vec<LinkRecord> {
    read_records(LINKS_CSV)
}

pub fn link(name: &str) -> Result<LinkRecord> {
    link_table()
        .into_iter()
        .find(|l| l.link == name)
        .ok_or_else(|| Error::param("link", format!("no link `{name}` in the reference table")))
}

/// Quarter-wave point of the five-mode test link, GHz.
pub const FIVE_MODE_MATCH_GHZ: f64 = 4.815;

pub fn five_mode_data() -> Vec<QDataPoint> {
    read_q_data(FIVE_MODE_CSV.as_bytes()).expect("shipped dataset is valid")
}

/// Chip-cable-chip link whose CPW transformers are matched at the m = 11 mode.
pub fn five_mode_geometry() -> LossGeometry {
    let base = CableParams::chip_cable_chip();
    let cable = CableParams { cpw_length_m: base.quarter_wave_length(FIVE_MODE_MATCH_GHZ), ..base };
    LossGeometry { cable, n_bonds: 2 }
}
