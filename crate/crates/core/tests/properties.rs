use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;
use qlink_core::circuits::*;
use qlink_core::devicelab::*;
use qlink_core::dynamics::*;
use qlink_core::hilbert::*;
use qlink_core::lossfit::*;
use qlink_core::reference;
use qlink_core::tomo::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn density_from(n: usize, entries: &[(f64, f64)]) -> DensityMatrix {
    let d = 1 << n;
    let g = CMatrix::from_fn(d, d, |i, j| {
        let (re, im) = entries[(i * d + j) % entries.len()];
        C64::new(re + if i == j { 0.3 } else { 0.0 }, im)
    });
    let m = &g * g.adjoint();
    let tr = m.trace();
    DensityMatrix::new(HilbertSpace::qubits(n).unwrap(), m / tr).unwrap()
}

fn entries() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 64)
}

fn local_op(e: &[(f64, f64)]) -> Operator {
    Operator::local(CMatrix::from_fn(2, 2, |i, j| C64::new(e[2 * i + j].0, e[2 * i + j].1))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Small integers keep every product exact, so any mismatch is an indexing error.
    #[test]
    fn tensor_is_associative(k in prop::collection::vec(-8i8..8, 24)) {
        let e: Vec<(f64, f64)> = k.chunks(2).map(|p| (f64::from(p[0]), f64::from(p[1]))).collect();
        let (a, b, c) = (local_op(&e[0..4]), local_op(&e[4..8]), local_op(&e[8..12]));
        let left = a.tensor(&b).unwrap().tensor(&c).unwrap();
        let right = a.tensor(&b.tensor(&c).unwrap()).unwrap();
        prop_assert_eq!(left.matrix(), right.matrix());
    }

    #[test]
    fn partial_trace_undoes_tensor(e in entries(), f in entries()) {
        let r1 = density_from(1, &e);
        let r2 = density_from(2, &f);
        let joint = r1.tensor(&r2).unwrap();
        let back = partial_trace(&joint, &[0]).unwrap();
        prop_assert!((back.matrix() - r1.matrix()).camax() < 1e-12);
    }

    #[test]
    fn embed_commutes_with_tensor(e in entries()) {
        let (a, b) = (local_op(&e[0..4]), local_op(&e[4..8]));
        let space = HilbertSpace::qubits(2).unwrap();
        let ea = embed(&a, 0, &space).unwrap();
        let eb = embed(&b, 1, &space).unwrap();
        let prod = ea.compose(&eb).unwrap();
        prop_assert!((prod.matrix() - a.tensor(&b).unwrap().matrix()).camax() < 1e-12);
    }

    #[test]
    fn mode_lc_relations(m in 1u32..40, len in 0.05..2.0f64) {
        let cable = CableParams { length_m: len, ..CableParams::chip_cable_chip() };
        let a = mode_params(&cable, m).unwrap();
        let b = mode_params(&cable, m + 1).unwrap();
        prop_assert_eq!(a.l_nh, b.l_nh);
        let lcw2 = a.capacitance() * a.inductance() * a.omega_rad_s.powi(2);
        prop_assert!((lcw2 - 1.0).abs() < 1e-12);
        prop_assert_eq!(parity_sign(m + 1), -parity_sign(m));
    }

    #[test]
    fn coupling_is_continuous_in_bias(delta in 0.0..FRAC_PI_2) {
        let q = reference::qubit("Q1A").unwrap();
        let mode = mode_params(&CableParams::chip_cable_chip(), 11).unwrap();
        let h = 1e-7;
        let g = |d: f64| coupling_strength(&q, &mode, &CouplerParams::default().with_delta(d.min(FRAC_PI_2)), CouplingEnd::Near);
        let (g0, g1) = (g(delta), g(delta + h));
        prop_assert!(g0.is_finite());
        prop_assert!((g1 - g0).abs() <= 1e-4 * g(0.0).abs());
    }

    #[test]
    fn q_int_is_bounded_by_both_channels(q_cb in 1e4..1e7f64, r_s in 1e-4..1.0f64, m in 1u32..20, cpw in 1e-3..2e-2f64) {
        let cable = CableParams { cpw_length_m: cpw, ..CableParams::chip_cable_chip() };
        let model = LossModel { q_cb, r_s_ohm: r_s, n_bonds: 2, cable };
        let mode = mode_params(&cable, m).unwrap();
        let qi = q_int(&model, &mode);
        prop_assert!(qi <= q_cb * (1.0 + 1e-12));
        prop_assert!(qi <= q_loss(&model, &mode) * (1.0 + 1e-12));
    }

    #[test]
    fn q_loss_is_periodic_in_transformer_phase(r_s in 1e-4..1.0f64, m in 1u32..20, k in 1u32..4) {
        let base = CableParams::chip_cable_chip();
        let mode = mode_params(&base, m).unwrap();
        let shift = f64::from(k) * PI / (mode.omega_rad_s * base.cpw_phase_slowness());
        let a = LossModel { q_cb: 1e6, r_s_ohm: r_s, n_bonds: 2, cable: base };
        let b = LossModel { cable: CableParams { cpw_length_m: base.cpw_length_m + shift, ..base }, ..a.clone() };
        let (qa, qb) = (q_loss(&a, &mode), q_loss(&b, &mode));
        prop_assert!((qa / qb - 1.0).abs() < 1e-9, "{} vs {}", qa, qb);
    }

    #[test]
    fn readout_correction_inverts_confusion(f in prop::collection::vec(0.8..1.0f64, 4), p in prop::collection::vec(0.05..1.0f64, 4)) {
        let conf = [ConfusionMatrix::new(f[0], f[1]).unwrap(), ConfusionMatrix::new(f[2], f[3]).unwrap()];
        let total: f64 = p.iter().sum();
        let probs: Vec<f64> = p.iter().map(|x| x / total).collect();
        let observed = apply_confusion(&probs, &conf).unwrap();
        let back = readout_correct(&observed, &conf).unwrap();
        for (a, b) in back.iter().zip(&probs) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ghz_estimator_matches_brute_force(e in entries(), n in 2usize..=3) {
        let rho = density_from(n, &e);
        let est = ghz_fidelity_exact(&rho, DEFAULT_GAMMA_POINTS).unwrap();
        let d = 1 << n;
        let mut v = CVector::zeros(d);
        v[0] = C64::new(1.0, 0.0);
        v[d - 1] = C64::from_polar(1.0, -est.phase);
        let target = StateVector::new(rho.space().clone(), v).unwrap();
        prop_assert!((est.fidelity - fidelity_pure(&rho, &target).unwrap()).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn loss_fit_fixed_point(q_cb in 2e5..3e6f64, r_s in 5e-3..0.1f64) {
        let geometry = reference::five_mode_geometry();
        let truth = LossModel { q_cb, r_s_ohm: r_s, n_bonds: geometry.n_bonds, cable: geometry.cable };
        let pts: Vec<QDataPoint> = (8..=12)
            .map(|m| {
                let mode = mode_params(&geometry.cable, m).unwrap();
                QDataPoint { m, omega_rad_s: mode.omega_rad_s, q_int: q_int(&truth, &mode), sigma: None }
            })
            .collect();
        let fit = fit_loss_model(&pts, &geometry, &LossFitOptions::default()).unwrap();
        prop_assert!((fit.q_cb / q_cb - 1.0).abs() < 1e-6, "{} vs {}", fit.q_cb, q_cb);
        prop_assert!((fit.r_s_ohm / r_s - 1.0).abs() < 1e-6);
        prop_assert!(fit.rms_residual < 1e-8);
        let q_max = pts.iter().map(|p| p.q_int).fold(0.0, f64::max);
        prop_assert!(fit.q_cb >= 0.99 * q_max);
    }

    #[test]
    fn tomography_output_is_physical(e in entries(), shots in 50u64..400, seed in any::<u64>()) {
        let rho = density_from(2, &e);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conf = [ConfusionMatrix::new(0.95, 0.9).unwrap(); 2];
        let data = measure_state(&rho, &TomographySettings::sampled(2, shots), Some(&conf), &mut rng).unwrap();
        let est = state_tomography(&data, Some(&conf)).unwrap();
        prop_assert!((est.trace().re - 1.0).abs() < 1e-8);
        prop_assert!(est.eigenvalues().iter().all(|&l| l >= -1e-8));
        prop_assert!((est.matrix() - est.matrix().adjoint()).camax() < 1e-10);
    }

    #[test]
    fn lindblad_keeps_states_physical(
        g1 in 0.5..8.0f64, g2 in 0.5..8.0f64, d1 in -20.0..20.0f64,
        t1 in 2.0..40.0f64, tphi in 2.0..40.0f64, kappa in 0.0..0.2f64,
    ) {
        let rates = QubitRates { gamma1: 1.0 / (t1 * 1e-6), gamma_phi: 1.0 / (tphi * 1e-6) };
        let model = RotatingFrameModel::single_mode(rates, rates, kappa * 1e6, 1, 3);
        let mhz = |x: f64| 2.0 * PI * x * 1e6;
        let rho0 = model.product_state(&process_inputs()[3], &process_inputs()[2]).unwrap();
        let sched = ControlSchedule::new(EdgeProfile::default())
            .then(60e-9, Setpoints { delta_q1: mhz(d1), delta_q2: 0.0, g1: mhz(g1), g2: 0.0 })
            .then(60e-9, Setpoints::couple(mhz(g1), mhz(g2)));
        let times: Vec<f64> = (1..=12).map(|k| k as f64 * 10e-9).collect();
        let res = evolve_lindblad(&model, &rho0, &sched, &times).unwrap();
        prop_assert!(res.max_trace_drift <= 1e-7);
        for s in &res.states {
            prop_assert!(s.eigenvalues().iter().all(|&l| l >= -1e-6));
        }
    }

    #[test]
    fn noisy_trajectories_reproducible(seed in any::<u64>()) {
        let layout = GhzLayout::default();
        let c = build_ghz_circuit(GhzStep::I, &layout).unwrap();
        let noise = NoiseModel::calibrated(&layout).unwrap();
        let a = simulate_trajectories(&c, &noise, 70, 3, seed).unwrap();
        let b = simulate_trajectories(&c, &noise, 70, 3, seed).unwrap();
        prop_assert_eq!(a.record, b.record);
    }
}
