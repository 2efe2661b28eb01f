//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its own PASS/FAIL line.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::path::Path;
use std::time::Instant;

use qlink_cli::{Config, Params};
use qlink_core::circuits::*;
use qlink_core::devicelab::{fsr, mode_at, parity_sign, CableParams};
use qlink_core::dynamics::*;
use qlink_core::hilbert::{fidelity_pure, pauli_x, pauli_y, pauli_z, trace_distance, CMatrix, DensityMatrix, HilbertSpace, C64};
use qlink_core::lossfit::{fit_loss_model, q_int, t1r_from_q, LossFitOptions, LossModel, QDataPoint};
use qlink_core::reference::{five_mode_data, five_mode_geometry, qubit};
use qlink_core::tomo::*;
use qlink_core::units::{ghz_to_rad_s, mhz_to_rad_s};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const NS: f64 = 1e-9;

struct Check {
    ok: bool,
    detail: String,
}

fn check(ok: bool, detail: impl Into<String>) -> Check {
    Check { ok, detail: detail.into() }
}

fn all(parts: Vec<Check>) -> Check {
    let ok = parts.iter().all(|c| c.ok);
    let detail = parts
        .iter()
        .map(|c| if c.ok { c.detail.clone() } else { format!("[x] {}", c.detail) })
        .collect::<Vec<_>>()
        .join("; ");
    check(ok, detail)
}

fn g5() -> f64 {
    mhz_to_rad_s(5.0)
}

fn c1_lumped_model() -> Check {
    let cable = CableParams::chip_cable_chip();
    // Half the series inductance of 0.25 m of 216 nH/m cable and two 6.5 mm
    // stretches of 402 nH/m CPW.
    let oracle = 0.5 * (216e-9 * 0.25 + 2.0 * 402e-9 * 6.5e-3);
    let l = cable.mode_inductance();
    let f = fsr(&cable) / (2.0 * PI * 1e9);
    all(vec![
        check((l - oracle).abs() <= 1e-15 * oracle, format!("L_m = {:.4} nH (oracle {:.4})", l * 1e9, oracle * 1e9)),
        check(((l * 1e9) - 29.6).abs() < 0.05, "rounds to 29.6 nH"),
        check((f - 0.44).abs() <= 0.044, format!("FSR = {f:.4} GHz")),
    ])
}

fn c2_loss_model() -> Check {
    let geometry = five_mode_geometry();
    let fit = fit_loss_model(&five_mode_data(), &geometry, &LossFitOptions::default());
    let Ok(fit) = fit else { return check(false, "five-mode fit failed") };
    let data_ok = check((fit.q_cb / 6.0e5 - 1.0).abs() < 0.15, format!("five-mode Q_cb = {:.4e}", fit.q_cb));

    let truth = LossModel { q_cb: 6.0e5, r_s_ohm: 0.02, n_bonds: geometry.n_bonds, cable: geometry.cable };
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let pts: Vec<QDataPoint> = (8..=12)
            .map(|m| {
                let omega = ghz_to_rad_s(f64::from(m) * 4.815 / 11.0);
                let q = q_int(&truth, &mode_at(&geometry.cable, m, omega));
                QDataPoint { m, omega_rad_s: omega, q_int: q * (1.0 + noise.sample(&mut rng)), sigma: None }
            })
            .collect();
        match fit_loss_model(&pts, &geometry, &LossFitOptions::default()) {
            Ok(f) => worst = worst.max((f.q_cb / truth.q_cb - 1.0).abs()),
            Err(_) => worst = f64::INFINITY,
        }
    }
    all(vec![data_ok, check(worst < 0.05, format!("1% noise roundtrip worst Q_cb error {:.2}% over 20 seeds", 100.0 * worst))])
}

fn c3_dynamics_oracles() -> Check {
    let g = g5();
    let times: Vec<f64> = (0..=400).map(|k| f64::from(k) * 0.25 * NS).collect();
    let model = RotatingFrameModel::noiseless(1);
    let Ok(map) = vacuum_rabi_chevron(&model, g, &[0.0], &times) else { return check(false, "chevron failed") };
    let p = &map.p1[0];
    let swap = (1..p.len() - 1).find(|&k| p[k] <= p[k - 1] && p[k] <= p[k + 1]).map(|k| times[k]);
    // Analytic swap minimum: cos²(g t) = 0 at t = π/(2g).
    let swap_oracle = FRAC_PI_2 / g;

    let rho0 = model.product_state(&process_inputs()[3], &process_inputs()[0]).unwrap();
    let sched = ControlSchedule::new(EdgeProfile::Rectangular).then(100.0 * NS, Setpoints::couple(g, g));
    let fine: Vec<f64> = (0..=400).map(|k| f64::from(k) * 0.25 * NS).collect();
    let res = evolve_lindblad(&model, &rho0, &sched, &fine).unwrap();
    let rx = model.receiver_index();
    let (t_peak, p_peak) = res
        .times
        .iter()
        .zip(&res.excitations)
        .map(|(t, e)| (*t, e[rx]))
        .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let transfer_oracle = PI / (SQRT_2 * g);

    let half = ControlSchedule::new(EdgeProfile::Rectangular).then(25.0 * NS, Setpoints::couple(g, 0.0));
    let h = evolve_lindblad(&model, &rho0, &half, &[25.0 * NS]).unwrap();
    let mode = h.excitations[0][1];

    all(vec![
        check(
            swap.is_some_and(|t| (t - 50.0 * NS).abs() <= NS && (t - swap_oracle).abs() <= NS),
            format!("swap minimum {:.2} ns", swap.unwrap_or(f64::NAN) / NS),
        ),
        check(
            (t_peak - 70.7 * NS).abs() <= NS && (t_peak - transfer_oracle).abs() <= NS,
            format!("transfer peak {:.2} ns (oracle {:.3} ns)", t_peak / NS, transfer_oracle / NS),
        ),
        check(p_peak >= 0.9999, format!("transfer population {p_peak:.6}")),
        check((mode - 0.5).abs() <= 1e-4, format!("half-swap mode population {mode:.6}")),
    ])
}

fn device_model() -> RotatingFrameModel {
    RotatingFrameModel::from_device(&qubit("Q1A").unwrap(), &qubit("Q3B").unwrap(), 26.4e-6, parity_sign(11), 3)
}

fn c4_protocol_fidelities() -> Check {
    let model = device_model();
    let g = g5();
    let qst = qst_channel(&model, g, 66.0 * NS, EdgeProfile::default())
        .and_then(|ch| process_tomography(&ch.outputs))
        .map(|chi| process_fidelity(&chi, &ProcessMatrix::identity()));
    let bell = bell_protocol(&model, g, bell_half_time(g), EdgeProfile::Rectangular).map(|b| b.fidelity);
    match (qst, bell) {
        (Ok(fq), Ok(fb)) => all(vec![
            check((fq - 0.993).abs() <= 0.003, format!("F_QST = {fq:.4}")),
            check((fb - 0.991).abs() <= 0.003, format!("F_B = {fb:.4}")),
        ]),
        _ => check(false, "protocol simulation failed"),
    }
}

fn c5_ringdown() -> Check {
    let omega = ghz_to_rad_s(4.885);
    let t1r = t1r_from_q(8.1e5, omega);
    let none = QubitRates::default();
    let model = RotatingFrameModel::single_mode(none, none, 1.0 / t1r, parity_sign(11), 3);
    let waits: Vec<f64> = (0..12).map(|k| f64::from(k) * 6.6e-6).collect();
    match t1r_ringdown(&model, g5(), &waits, EdgeProfile::Rectangular) {
        Ok(r) => check(
            (r.t1r / 26.4e-6 - 1.0).abs() <= 0.02,
            format!("fitted T1r = {:.3} us (Q/ω = {:.3} us)", r.t1r * 1e6, t1r * 1e6),
        ),
        Err(e) => check(false, format!("ringdown failed: {e}")),
    }
}

fn random_density(n: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
    let d = 1 << n;
    let g = CMatrix::from_fn(d, d, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let m = &g * g.adjoint();
    let tr = m.trace();
    DensityMatrix::new(HilbertSpace::qubits(n).unwrap(), m / tr).unwrap()
}

/// χ_mn = ⟨⟨P_m|J|P_n⟩⟩/4 with J = Σ_ij |i⟩⟨j| ⊗ E(|i⟩⟨j|).
fn chi_from_choi(channel: &dyn Fn(&CMatrix) -> CMatrix) -> CMatrix {
    let mut j = CMatrix::zeros(4, 4);
    for a in 0..2 {
        for b in 0..2 {
            let mut e = CMatrix::zeros(2, 2);
            e[(a, b)] = C64::new(1.0, 0.0);
            j += e.kronecker(&channel(&e));
        }
    }
    let paulis = [CMatrix::identity(2, 2), pauli_x(), pauli_y(), pauli_z()];
    let vecs: Vec<Vec<C64>> = paulis.iter().map(|p| (0..4).map(|r| p[(r % 2, r / 2)]).collect()).collect();
    CMatrix::from_fn(4, 4, |m, n| {
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..4 {
            for s in 0..4 {
                acc += vecs[m][r].conj() * j[(r, s)] * vecs[n][s];
            }
        }
        acc / 4.0
    })
}

fn c6_tomography() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_state: f64 = 0.0;
    for k in 0..100 {
        let n = 2 + k % 2;
        let rho = random_density(n, &mut rng);
        let err = measure_state(&rho, &TomographySettings::exact(n), None, &mut rng)
            .and_then(|d| state_tomography(&d, None))
            .map(|est| trace_distance(est.matrix(), rho.matrix()))
            .unwrap_or(f64::INFINITY);
        worst_state = worst_state.max(err);
    }

    let one = |x: f64| C64::new(x, 0.0);
    let ground = process_inputs()[0].clone();
    let mut channels: Vec<Box<dyn Fn(&CMatrix) -> CMatrix>> = vec![
        Box::new(|r: &CMatrix| r.clone()),
        Box::new(move |r: &CMatrix| &ground * r.trace()),
        Box::new(|r: &CMatrix| {
            let x = pauli_x();
            r * one(0.7) + &x * r * &x * one(0.3)
        }),
    ];
    for gamma in [0.1f64, 0.45, 0.9] {
        channels.push(Box::new(move |r: &CMatrix| {
            let k0 = CMatrix::from_row_slice(2, 2, &[one(1.0), one(0.0), one(0.0), one((1.0 - gamma).sqrt())]);
            let k1 = CMatrix::from_row_slice(2, 2, &[one(0.0), one(gamma.sqrt()), one(0.0), one(0.0)]);
            &k0 * r * k0.adjoint() + &k1 * r * k1.adjoint()
        }));
    }
    for _ in 0..10 {
        let p: f64 = rng.random::<f64>() * 0.5;
        let (a, b, t) = (rng.random::<f64>() * 6.0, rng.random::<f64>() * 6.0, rng.random::<f64>() * 3.0);
        let u = CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::from_polar((t / 2.0).cos(), a),
                -C64::from_polar((t / 2.0).sin(), b),
                C64::from_polar((t / 2.0).sin(), -b),
                C64::from_polar((t / 2.0).cos(), -a),
            ],
        );
        channels.push(Box::new(move |r: &CMatrix| {
            let dep = r * one(1.0 - p) + CMatrix::identity(2, 2) * (r.trace() * 0.5 * p);
            &u * dep * u.adjoint()
        }));
    }
    let mut worst_chi: f64 = 0.0;
    for ch in &channels {
        let outs: Vec<CMatrix> = process_inputs().iter().map(|r| ch(r)).collect();
        let err = process_tomography(&outs)
            .map(|chi| (chi.chi() - chi_from_choi(ch.as_ref())).iter().fold(0.0f64, |a, z| a.max(z.norm())))
            .unwrap_or(f64::INFINITY);
        worst_chi = worst_chi.max(err);
    }
    all(vec![
        check(worst_state <= 1e-9, format!("100 random 2-3 qubit states, worst trace distance {worst_state:.1e}")),
        check(worst_chi <= 1e-8, format!("{} channels, worst |χ − χ_Choi| {worst_chi:.1e}", channels.len())),
    ])
}

fn c7_ghz_estimator() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for k in 0..60 {
        let n = 2 + k % 3;
        let rho = random_density(n, &mut rng);
        let Ok(est) = ghz_fidelity_exact(&rho, DEFAULT_GAMMA_POINTS) else { return check(false, "estimator failed") };
        // Full-state fidelity maximized over the relative phase of the target.
        let d = 1 << n;
        let mut best: f64 = 0.0;
        for j in 0..3600 {
            let theta = 2.0 * PI * f64::from(j) / 3600.0;
            best = best.max(fidelity_against(&rho, d, theta));
        }
        let at_phase = fidelity_against(&rho, d, -est.phase);
        worst = worst.max((est.fidelity - at_phase).abs());
        if best > est.fidelity + 1e-9 {
            return check(false, format!("a GHZ phase beats the estimator on a {n}-qubit state"));
        }
    }

    let mut worst_line: f64 = 0.0;
    for n in 2..=12usize {
        let psi = ghz_state(n).unwrap();
        let gammas = gamma_grid(DEFAULT_GAMMA_POINTS);
        let m = gammas.len();
        let vals: Vec<f64> = gammas.iter().map(|&g| parity_expectation_pure(&psi, g).unwrap()).collect();
        for k in 0..=m / 2 {
            let x: C64 = vals
                .iter()
                .enumerate()
                .map(|(j, v)| C64::from_polar(*v, -2.0 * PI * (k * j) as f64 / m as f64))
                .sum::<C64>()
                / m as f64;
            let expected = if k == n { 0.5 } else { 0.0 };
            worst_line = worst_line.max((x.norm() - expected).abs());
        }
    }
    all(vec![
        check(worst <= 1e-9, format!("60 random 2-4 qubit states, worst |F_est − F_full| {worst:.1e}")),
        check(worst_line <= 1e-9, format!("single DFT line at N for N = 2..12, worst deviation {worst_line:.1e}")),
    ])
}

fn fidelity_against(rho: &DensityMatrix, d: usize, theta: f64) -> f64 {
    let mut amps = vec![C64::new(0.0, 0.0); d];
    amps[0] = C64::new(1.0 / SQRT_2, 0.0);
    amps[d - 1] = C64::from_polar(1.0 / SQRT_2, theta);
    let psi = qlink_core::StateVector::from_slice(rho.space().clone(), &amps).unwrap();
    fidelity_pure(rho, &psi).unwrap()
}

fn c8_ghz_ballpark() -> Check {
    let layout = GhzLayout::default();
    let Ok(noise) = NoiseModel::calibrated(&layout) else { return check(false, "calibration failed") };
    let mut runs = Vec::new();
    for step in GhzStep::ALL {
        let run = build_ghz_circuit(step, &layout).and_then(|c| simulate_ghz_fidelity(&c, &noise, 2000, DEFAULT_GAMMA_POINTS, 1));
        match run {
            Ok(r) => runs.push(r),
            Err(e) => return check(false, format!("step {step}: {e}")),
        }
    }
    let f: Vec<f64> = runs.iter().map(|r| r.fidelity).collect();
    let s: Vec<f64> = runs.iter().map(|r| r.std_error).collect();
    let mut parts = vec![
        check((noise.p1 - 0.003).abs() < 1e-9 && (noise.p2 - 0.052).abs() < 1e-9, format!("p1 = {:.4}, p2 = {:.4}", noise.p1, noise.p2)),
        check((0.86..=0.96).contains(&f[0]), format!("F4 = {:.4} ± {:.4}", f[0], s[0])),
        check((0.75..=0.90).contains(&f[1]), format!("F6 = {:.4} ± {:.4}", f[1], s[1])),
        check(f[3] > 0.45, format!("F10 = {:.4} ± {:.4}, F12 = {:.4} ± {:.4}", f[2], s[2], f[3], s[3])),
    ];
    for k in 0..3 {
        let margin = 3.0 * (s[k] * s[k] + s[k + 1] * s[k + 1]).sqrt();
        parts.push(check(
            f[k] - f[k + 1] > margin,
            format!("drop {}→{} = {:.4} > 3σ = {:.4}", GhzStep::ALL[k], GhzStep::ALL[k + 1], f[k] - f[k + 1], margin),
        ));
    }
    all(parts)
}

fn shipped(name: &str) -> Config {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    Config::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn data_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().is_some_and(|n| n != "manifest.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn c9_determinism() -> Check {
    let mut parts = Vec::new();
    for name in ["chevron.toml", "ringdown.toml", "qst.toml", "bell.toml", "ghz.toml", "lossfit.toml", "hanger.toml"] {
        let mut cfg = shipped(name);
        // Coarser grids keep the check fast; the code path is unchanged.
        match &mut cfg.params {
            Params::Chevron(p) => {
                p.detuning_points = 9;
                p.time_points = 41;
            }
            Params::Ghz(p) => {
                p.n_traj = 300;
                p.shots_per_traj = 2;
            }
            _ => {}
        }
        let tmp = tempfile::tempdir().unwrap();
        let mut outputs = Vec::new();
        for (i, threads) in [1usize, 3].into_iter().enumerate() {
            cfg.threads = Some(threads);
            let dir = tmp.path().join(i.to_string());
            if let Err(e) = qlink_cli::run(&cfg, &dir) {
                parts.push(check(false, format!("{name}: {e}")));
                continue;
            }
            outputs.push(data_files(&dir));
        }
        let same = outputs.len() == 2 && outputs[0] == outputs[1] && !outputs[0].is_empty();
        let files = outputs.first().map_or(0, BTreeMap::len);
        parts.push(check(same, format!("{} {files} files identical", cfg.scenario)));
    }
    all(parts)
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("C1 lumped mode model", c1_lumped_model),
        ("C2 loss model fit", c2_loss_model),
        ("C3 dynamics oracles", c3_dynamics_oracles),
        ("C4 transfer and Bell fidelity", c4_protocol_fidelities),
        ("C5 ringdown lifetime", c5_ringdown),
        ("C6 tomography correctness", c6_tomography),
        ("C7 GHZ estimator identity", c7_ghz_estimator),
        ("C8 GHZ noise ballpark", c8_ghz_ballpark),
        ("C9 determinism", c9_determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let c = f();
        let tag = if c.ok { "PASS" } else { "FAIL" };
        println!("{tag} {name} ({:.1} s): {}", start.elapsed().as_secs_f64(), c.detail);
        failed += usize::from(!c.ok);
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
