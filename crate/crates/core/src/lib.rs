//! Simulation and analysis toolkit for modular superconducting processors
//! linked by coaxial cables.

pub mod circuits;
pub mod devicelab;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod lossfit;
pub mod ode;
pub mod optim;
pub mod reference;
pub mod tomo;
pub mod units;

pub use error::{Error, Result};
pub use hilbert::{C64, CMatrix, CVector, DensityMatrix, HilbertSpace, Operator, StateVector};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
