use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use nalgebra::Matrix3;
use qlink_core::dynamics::*;
use qlink_core::hilbert::{partial_trace, CMatrix, C64};
use qlink_core::reference::qubit;
use qlink_core::tomo::process_inputs;
use qlink_core::units::{ghz_to_rad_s, mhz_to_rad_s};

const NS: f64 = 1e-9;

fn g5() -> f64 {
    mhz_to_rad_s(5.0)
}

fn excited() -> CMatrix {
    process_inputs()[3].clone()
}

fn ground() -> CMatrix {
    process_inputs()[0].clone()
}

/// Receiver amplitude of the single-excitation problem by diagonalizing the
/// 3×3 hopping Hamiltonian (sender, mode, receiver).
fn transfer_amplitude_oracle(g: f64, t: f64) -> f64 {
    let h = Matrix3::new(0.0, g, 0.0, g, 0.0, g, 0.0, g, 0.0);
    let eig = h.symmetric_eigen();
    // ⟨2|e^{-iHt}|0⟩ = Σ_k v_2k v_0k e^{-iλ_k t}; real-symmetric H with this
    // spectrum {−√2g, 0, √2g} makes the amplitude real.
    let mut amp = C64::new(0.0, 0.0);
    for k in 0..3 {
        let w = eig.eigenvectors[(2, k)] * eig.eigenvectors[(0, k)];
        amp += C64::from_polar(w, -eig.eigenvalues[k] * t);
    }
    amp.re
}

#[test]
fn oracle_matches_closed_form() {
    let g = g5();
    for k in 0..50 {
        let t = k as f64 * 2.0 * NS;
        let closed = -0.5 + 0.5 * (SQRT_2 * g * t).cos();
        assert!((transfer_amplitude_oracle(g, t) - closed).abs() < 1e-12);
    }
}

#[test]
fn noiseless_qst_follows_oracle_and_peaks_at_ideal_time() {
    let model = RotatingFrameModel::noiseless(1);
    let g = g5();
    let t_star = qst_ideal_time(g);
    assert!((t_star - 70.71 * NS).abs() < 0.01 * NS);
    let times: Vec<f64> = (0..=150).map(|k| k as f64 * 0.5 * NS).collect();
    let rho0 = model.product_state(&excited(), &ground()).unwrap();
    let sched = ControlSchedule::new(EdgeProfile::Rectangular).then(75.0 * NS, Setpoints::couple(g, g));
    let res = evolve_lindblad(&model, &rho0, &sched, &times).unwrap();
    let rx = model.receiver_index();
    let mut best = (0.0, 0.0);
    for (t, e) in res.times.iter().zip(&res.excitations) {
        let oracle = transfer_amplitude_oracle(g, *t).powi(2);
        assert!((e[rx] - oracle).abs() < 1e-6, "t={t}");
        if e[rx] > best.1 {
            best = (*t, e[rx]);
        }
    }
    assert!((best.0 - t_star).abs() < 1.0 * NS);
    let at_star = qst_protocol(&model, g, t_star, EdgeProfile::Rectangular, &excited()).unwrap();
    let p1_rx = partial_trace(&at_star, &[1]).unwrap().matrix()[(1, 1)].re;
    assert!(p1_rx >= 0.9999, "{p1_rx}");
}

#[test]
fn noiseless_protocols_preserve_trace_purity_and_excitation() {
    let model = RotatingFrameModel::noiseless(-1);
    let g = g5();
    let rho0 = model.product_state(&excited(), &ground()).unwrap();
    let sched = ControlSchedule::new(EdgeProfile::Rectangular)
        .then(60.0 * NS, Setpoints::couple(g, 0.0))
        .then(80.0 * NS, Setpoints::couple(g, g))
        .then(60.0 * NS, Setpoints::couple(0.0, g));
    let times: Vec<f64> = (0..=40).map(|k| k as f64 * 5.0 * NS).collect();
    let res = evolve_lindblad(&model, &rho0, &sched, &times).unwrap();
    assert!(res.max_trace_drift <= 1e-7);
    for (s, e) in res.states.iter().zip(&res.excitations) {
        assert!((s.purity() - 1.0).abs() < 1e-6, "purity {} at sample", s.purity());
        assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn chevron_resonant_and_dispersive() {
    let model = RotatingFrameModel::noiseless(1);
    let g = g5();
    let times: Vec<f64> = (0..=200).map(|k| k as f64 * NS).collect();
    let map = vacuum_rabi_chevron(&model, g, &[0.0, mhz_to_rad_s(100.0)], &times).unwrap();
    let res = &map.p1[0];
    let first_min = (1..times.len() - 1).find(|&k| res[k] <= res[k - 1] && res[k] <= res[k + 1]).unwrap();
    assert!((times[first_min] - 50.0 * NS).abs() <= 1.0 * NS);
    for (t, p) in times.iter().zip(res) {
        assert!((p - (g * t).cos().powi(2)).abs() < 1e-6);
    }
    let floor = map.p1[1].iter().copied().fold(1.0, f64::min);
    assert!(floor >= 0.99, "{floor}");
    // Detuned Rabi oracle: minimum population 1 − 4g²/(4g² + Δ²).
    let delta = mhz_to_rad_s(100.0);
    assert!(floor >= 1.0 - 4.0 * g * g / (4.0 * g * g + delta * delta) - 1e-6);
    assert!(vacuum_rabi_chevron(&model, g, &[], &times).is_err());
}

#[test]
fn two_mode_model_agrees_with_single_mode() {
    let g = g5();
    let fsr = ghz_to_rad_s(0.44);
    let times: Vec<f64> = (0..=100).map(|k| k as f64 * 2.0 * NS).collect();
    let single = vacuum_rabi_chevron(&RotatingFrameModel::noiseless(1), g, &[0.0], &times).unwrap();
    let none = QubitRates::default();
    let two = RotatingFrameModel::two_mode(none, none, 10, fsr, [0.0, 0.0], 3);
    let double = vacuum_rabi_chevron(&two, g, &[0.0], &times).unwrap();
    for (a, b) in single.p1[0].iter().zip(&double.p1[0]) {
        assert!((a - b).abs() < 0.01, "{a} vs {b}");
    }
}

#[test]
fn ringdown_recovers_configured_lifetime() {
    let g = g5();
    let none = QubitRates::default();
    let check = |t1r_us: f64, tol: f64| {
        let model = RotatingFrameModel::single_mode(none, none, 1.0 / (t1r_us * 1e-6), -1, 3);
        let waits: Vec<f64> = (0..12).map(|k| k as f64 * t1r_us * 0.25e-6).collect();
        let res = t1r_ringdown(&model, g, &waits, EdgeProfile::Rectangular).unwrap();
        assert!((res.t1r / (t1r_us * 1e-6) - 1.0).abs() < tol, "{t1r_us}: {}", res.t1r);
    };
    check(26.4, 0.02);
    for t in [5.9, 8.1, 13.6, 20.0, 8.3] {
        check(t, 0.05);
    }
}

#[test]
fn ringdown_without_loss_reports_infinite_lifetime() {
    let model = RotatingFrameModel::noiseless(1);
    let waits: Vec<f64> = (0..6).map(|k| k as f64 * 2e-6).collect();
    let res = t1r_ringdown(&model, g5(), &waits, EdgeProfile::Rectangular).unwrap();
    assert!(res.t1r.is_infinite());
    for p in &res.p1 {
        assert!((p - 1.0).abs() < 1e-6);
    }
}

#[test]
fn noiseless_bell_pair() {
    let model = RotatingFrameModel::noiseless(-1);
    let g = g5();
    let res = bell_protocol(&model, g, bell_half_time(g), EdgeProfile::Rectangular).unwrap();
    assert!((bell_half_time(g) - 25.0 * NS).abs() < 1e-15);
    assert!(res.fidelity >= 0.9999, "{}", res.fidelity);
    let full = bell_protocol(&model, g, FRAC_PI_2 / g, EdgeProfile::Rectangular).unwrap();
    assert!((full.fidelity - 0.5).abs() < 1e-6, "{}", full.fidelity);
}

#[test]
fn noisy_bell_and_transfer_near_device_values() {
    let a = qubit("Q1A").unwrap();
    let b = qubit("Q3B").unwrap();
    let model = RotatingFrameModel::from_device(&a, &b, 26.4e-6, -1, 3);
    let g = g5();
    let bell = bell_protocol(&model, g, bell_half_time(g), EdgeProfile::Rectangular).unwrap();
    println!("bell fidelity {} phase {}", bell.fidelity, bell.phase);
    assert!((bell.fidelity - 0.991).abs() <= 0.003, "{}", bell.fidelity);
    let ch = qst_channel(&model, g, 66.0 * NS, EdgeProfile::default()).unwrap();
    println!("qst phase {} outputs {:?}", ch.phase, ch.outputs.iter().map(|o| o[(1, 1)].re).collect::<Vec<_>>());
    assert!((ch.phase.abs() - PI).abs() < 1e-6 || ch.phase.abs() < 1e-6);
}

#[test]
fn half_swap_puts_half_the_excitation_in_the_mode() {
    let model = RotatingFrameModel::noiseless(1);
    let g = g5();
    let rho0 = model.product_state(&excited(), &ground()).unwrap();
    let sched = ControlSchedule::new(EdgeProfile::Rectangular).then(25.0 * NS, Setpoints::couple(g, 0.0));
    let res = evolve_lindblad(&model, &rho0, &sched, &[25.0 * NS]).unwrap();
    let mode = res.excitations[0][1];
    assert!((mode - (g * 25.0 * NS).sin().powi(2)).abs() < 1e-7, "{mode}");
    assert!((mode - 0.5).abs() < 1e-4, "{mode}");
}
