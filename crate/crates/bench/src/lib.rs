//! Shared inputs for the benchmarks.

use qlink_core::devicelab::parity_sign;
use qlink_core::dynamics::RotatingFrameModel;
use qlink_core::hilbert::{CMatrix, DensityMatrix, HilbertSpace, C64};
use qlink_core::reference::qubit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Q1A sending to Q3B over the m = 11 mode with a 26.4 µs lifetime.
pub fn device_model() -> RotatingFrameModel {
    let a = qubit("Q1A").expect("reference qubit");
    let b = qubit("Q3B").expect("reference qubit");
    RotatingFrameModel::from_device(&a, &b, 26.4e-6, parity_sign(11), 3)
}

pub fn random_density(n: usize, seed: u64) -> DensityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 1 << n;
    let g = CMatrix::from_fn(d, d, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let m = &g * g.adjoint();
    let tr = m.trace();
    DensityMatrix::new(HilbertSpace::qubits(n).expect("small register"), m / tr).expect("valid state")
}
