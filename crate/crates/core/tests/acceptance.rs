//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line straight to
//! stderr (bypassing the test harness capture) and fails if its criterion does.
//!
//! The MET scans are expensive; they are computed once and shared.

use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use qudit_ctrl::adjoint::PONTRYAGIN_SIGN;
use qudit_ctrl::analysis::{
    bang_bang_certificate, certify_trace, duration_grid, dyson_amplitudes, met_scan, second_order_state,
    target_populations, CertificateConfig, Interference, MetScanConfig, MetScanResult, ScanMode,
    DEFAULT_QUADRATURE_INTERVALS,
};
use qudit_ctrl::model::{BasisLabel, Device, DeviceSpec, FrameChoice, PauliHamiltonian};
use qudit_ctrl::objective::ObjectiveConfig;
use qudit_ctrl::optimizer::{multistart, optimize, OptimizerConfig, RunResult};
use qudit_ctrl::problem::{Problem, ProblemConfig};
use qudit_ctrl::propagator::evolve;
use qudit_ctrl::pulse::PulseSchedule;

const MET_STARTS: usize = 200;
const CLIFF_STARTS: usize = 100;
const GRID_STEP: f64 = 0.25;
const TARGET_QUBIT_MET: f64 = 15.0;
const TARGET_QUTRIT_MET: f64 = 8.94;

fn report(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    writeln!(err, "[{tag}] {name}: {detail}").unwrap();
}

fn data(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(file)
}

fn hamiltonian() -> PauliHamiltonian {
    PauliHamiltonian::load(data("h2_1.5A_sto3g_parity_z2.ham")).unwrap()
}

fn problem(levels: usize, duration: f64, objective: ObjectiveConfig) -> Problem {
    let spec = DeviceSpec::load(data("table1_device.toml")).unwrap().with_levels(levels).unwrap();
    let cfg = ProblemConfig {
        duration,
        objective,
        ..Default::default()
    };
    Problem::new(Arc::new(Device::new(spec).unwrap()), &hamiltonian(), cfg).unwrap()
}

fn descending(levels: usize, objective: ObjectiveConfig, hi: f64, lo: f64) -> MetScanResult {
    let scan = MetScanConfig {
        durations: duration_grid(lo, hi, GRID_STEP),
        n_starts: MET_STARTS,
        seed: 0,
        mode: ScanMode::Descending,
        chunk: 4,
        stop_at_target: true,
    };
    met_scan(&problem(levels, hi, objective), &scan, &OptimizerConfig::default()).unwrap()
}

/// Converges a scan's MET solution fully (no early target stop).
fn polished(levels: usize, objective: ObjectiveConfig, scan: &MetScanResult) -> Option<(Problem, RunResult)> {
    let run = scan.met_run.as_ref()?;
    let p = problem(levels, run.schedule.duration, objective);
    let x0 = p.parameters(&run.schedule);
    let r = optimize(&p, &x0, &OptimizerConfig::default(), run.seed, None).unwrap();
    Some((p, r))
}

fn scan_summary(s: &MetScanResult) -> String {
    s.durations
        .iter()
        .zip(&s.successes)
        .zip(&s.runs)
        .map(|((t, k), n)| format!("{t}:{k}/{n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn qubit_scan() -> &'static MetScanResult {
    static S: OnceLock<MetScanResult> = OnceLock::new();
    S.get_or_init(|| descending(2, ObjectiveConfig::default(), 20.0, 10.0))
}

fn qutrit_scan() -> &'static MetScanResult {
    static S: OnceLock<MetScanResult> = OnceLock::new();
    S.get_or_init(|| descending(3, ObjectiveConfig::default(), 12.0, 5.0))
}

fn qubit_met_solution() -> &'static Option<(Problem, RunResult)> {
    static S: OnceLock<Option<(Problem, RunResult)>> = OnceLock::new();
    S.get_or_init(|| polished(2, ObjectiveConfig::default(), qubit_scan()))
}

fn qutrit_met_solution() -> &'static Option<(Problem, RunResult)> {
    static S: OnceLock<Option<(Problem, RunResult)>> = OnceLock::new();
    S.get_or_init(|| polished(3, ObjectiveConfig::default(), qutrit_scan()))
}

fn label(s: &str) -> BasisLabel {
    s.parse().unwrap()
}

#[test]
fn met_reproduction() {
    let qb = qubit_scan();
    let qt = qutrit_scan();
    let (mqb, mqt) = (qb.met_estimate, qt.met_estimate);
    let pass_qb = mqb.is_some_and(|m| (m - TARGET_QUBIT_MET).abs() <= 1.0);
    let pass_qt = mqt.is_some_and(|m| (m - TARGET_QUTRIT_MET).abs() <= 1.0);
    let ratio = mqb.zip(mqt).map(|(b, t)| t / b);
    let pass_ratio = ratio.is_some_and(|r| r <= 0.65);
    report(
        "MET reproduction",
        pass_qb && pass_qt && pass_ratio,
        &format!(
            "qubit MET {mqb:?} ns (target 15.0 +/- 1), qutrit MET {mqt:?} ns (target 8.94 +/- 1), ratio {ratio:?} (<= 0.65); \
             qubit scan [{}]; qutrit scan [{}]",
            scan_summary(qb),
            scan_summary(qt)
        ),
    );
    assert!(pass_qb && pass_qt && pass_ratio);
}

#[test]
fn bang_bang_emergence() {
    let cert_cfg = CertificateConfig::default();
    let met = qubit_met_solution().as_ref().map(|(p, r)| {
        let (c, _) = bang_bang_certificate(p, &r.schedule, &ObjectiveConfig::unnormalized(), &cert_cfg).unwrap();
        (r.schedule.duration, r.success, c.saturated_fraction)
    });
    let pass_met = met.is_some_and(|(_, ok, sat)| ok && sat >= 0.9);

    // At 20 ns look for a fully converged solution with unstructured pulses.
    let p20 = problem(2, 20.0, ObjectiveConfig::default());
    let runs = multistart(&p20, 10, 0, &OptimizerConfig::default()).unwrap();
    let sats: Vec<f64> = runs
        .runs
        .iter()
        .filter(|r| r.success)
        .map(|r| certify_trace(&p20.switching_trace(&r.schedule, &ObjectiveConfig::unnormalized()).unwrap(), &r.schedule, &cert_cfg)
            .unwrap()
            .saturated_fraction)
        .collect();
    let pass_20 = sats.iter().any(|s| *s < 0.5);
    report(
        "Bang-bang emergence",
        pass_met && pass_20,
        &format!("MET solution (T, success, saturated) {met:?} (>= 0.9); 20 ns converged saturation fractions {sats:?} (need one < 0.5)"),
    );
    assert!(pass_met && pass_20);
}

#[test]
fn pontryagin_certificate() {
    let cert = qubit_met_solution().as_ref().map(|(p, r)| {
        // Literal terminal condition lambda(T) = H_mol psi(T).
        bang_bang_certificate(p, &r.schedule, &ObjectiveConfig::unnormalized(), &CertificateConfig::default())
            .unwrap()
            .0
    });
    let normalized = qubit_met_solution().as_ref().map(|(p, r)| {
        bang_bang_certificate(p, &r.schedule, &ObjectiveConfig::default(), &CertificateConfig::default())
            .unwrap()
            .0
            .sign_agreement
    });
    let pass = cert.as_ref().is_some_and(|c| c.sign_agreement >= 0.99 && c.flips_aligned());
    report(
        "Pontryagin certificate",
        pass,
        &format!(
            "sign agreement {:?} (>= 0.99, normalized costate {:?}, phi reported with sign {PONTRYAGIN_SIGN}), \
             max flip offset {:?} ns vs segment width {:?} ns, {} flips, {} violating intervals",
            cert.as_ref().map(|c| c.sign_agreement),
            normalized,
            cert.as_ref().and_then(|c| c.max_flip_offset),
            cert.as_ref().map(|c| c.segment_width),
            cert.as_ref().map_or(0, |c| c.flips.len()),
            cert.as_ref().map_or(0, |c| c.violations.len()),
        ),
    );
    assert!(pass);
}

fn probability(levels: usize, duration: f64) -> f64 {
    let scan = MetScanConfig {
        durations: vec![duration],
        n_starts: CLIFF_STARTS,
        seed: 0,
        mode: ScanMode::Full,
        chunk: 4,
        stop_at_target: true,
    };
    met_scan(&problem(levels, duration, ObjectiveConfig::default()), &scan, &OptimizerConfig::default())
        .unwrap()
        .success_probabilities[0]
}

#[test]
fn success_probability_cliffs() {
    let qt12 = probability(3, 12.0);
    let qt7 = probability(3, 7.0);
    let qb20 = probability(2, 20.0);
    let qb12 = probability(2, 12.0);
    let met3 = qutrit_scan().met_estimate;
    let met4 = descending(4, ObjectiveConfig::default(), 12.0, 5.0).met_estimate;
    let met5 = descending(5, ObjectiveConfig::default(), 12.0, 5.0).met_estimate;
    let same = |m: Option<f64>| m.zip(met3).is_some_and(|(a, b)| (a - b).abs() <= GRID_STEP + 1e-9);
    let pass = qt12 >= 0.9 && qt7 == 0.0 && qb20 >= 0.9 && qb12 == 0.0 && same(met4) && same(met5);
    report(
        "Success-probability cliffs",
        pass,
        &format!(
            "qutrit P(12 ns) {qt12} (>= 0.9), P(7 ns) {qt7} (= 0); qubit P(20 ns) {qb20} (>= 0.9), P(12 ns) {qb12} (= 0); \
             MET levels 3/4/5 = {met3:?}/{met4:?}/{met5:?} (equal within {GRID_STEP} ns)"
        ),
    );
    assert!(pass);
}

#[test]
fn leakage_at_qutrit_met() {
    let out = qutrit_met_solution().as_ref().map(|(p, r)| {
        let psi = p.final_state(&r.schedule).unwrap();
        let pops = p.device().populations(&psi, FrameChoice::Dressed);
        let levels = p.device().levels();
        let leak = r.report.leakage_fraction;
        let pair = pops[label("02").index(levels)] + pops[label("20").index(levels)];
        (r.schedule.duration, leak, pair / leak)
    });
    let pass = out.is_some_and(|(_, leak, share)| (leak - 0.5).abs() <= 0.1 && share > 0.8);
    report(
        "Leakage at qutrit MET",
        pass,
        &format!("(T, leakage, share in |02>+|20>) = {out:?} (leakage 0.5 +/- 0.1, share > 0.8)"),
    );
    assert!(pass);
}

#[test]
fn penalty_experiment() {
    let penalized = descending(3, ObjectiveConfig::with_penalty(0.01, 0.10), 20.0, 5.0);
    let forcing = descending(3, ObjectiveConfig::with_penalty(0.01, 0.0), 20.0, 5.0);
    let qb = qubit_scan().met_estimate;
    let pass_pen = penalized.met_estimate.is_some_and(|m| (m - 12.5).abs() <= 1.0);
    let pass_force = forcing.met_estimate.zip(qb).is_some_and(|(f, b)| (f - b).abs() <= 1.0);
    report(
        "Penalty experiment",
        pass_pen && pass_force,
        &format!(
            "10% threshold MET {:?} ns (12.5 +/- 1); zero-threshold MET {:?} ns vs qubit MET {qb:?} ns (within 1); \
             scans [{}] / [{}]",
            penalized.met_estimate,
            forcing.met_estimate,
            scan_summary(&penalized),
            scan_summary(&forcing)
        ),
    );
    assert!(pass_pen && pass_force);
}

#[test]
fn dyson_suite() {
    let n_quad = DEFAULT_QUADRATURE_INTERVALS;
    let (i, f) = (label("01"), label("10"));
    // First order and channel-sum identity on random schedules.
    let mut max_a1: f64 = 0.0;
    let mut max_sum: f64 = 0.0;
    for (levels, duration) in [(2, 15.0), (3, 9.0)] {
        let p = problem(levels, duration, ObjectiveConfig::default());
        for seed in 0..5 {
            let s = p.schedule(&p.random_start(seed).values);
            let r = dyson_amplitudes(&p, &s, &i, &f, n_quad).unwrap();
            max_a1 = max_a1.max(r.first_order.norm());
            max_sum = max_sum.max(r.channel_sum_error);
        }
    }
    let pass_a1 = max_a1 <= 1e-10;
    let pass_sum = max_sum <= 1e-8;

    let at_met = |sol: &Option<(Problem, RunResult)>, m1: &str, m2: &str| {
        sol.as_ref().map(|(p, r)| {
            let so = second_order_state(p, &r.schedule, p.initial_state(), n_quad).unwrap();
            let rep = dyson_amplitudes(p, &r.schedule, &i, &f, n_quad).unwrap();
            let kind = qudit_ctrl::analysis::interference_test(&rep, &label(m1), &label(m2)).unwrap().kind;
            let top: Vec<String> = rep.channels.iter().take(3).map(|c| c.intermediate.to_string()).collect();
            (so.infidelity(), kind, top)
        })
    };
    let qb = at_met(qubit_met_solution(), "00", "11");
    let qt = at_met(qutrit_met_solution(), "02", "20");
    let in_band = |x: f64| (0.003..=0.03).contains(&x);
    let pass_inf = qb.as_ref().is_some_and(|v| in_band(v.0)) && qt.as_ref().is_some_and(|v| in_band(v.0));
    let pass_qb = qb.as_ref().is_some_and(|v| v.1 == Interference::Constructive);
    let pass_qt = qt.as_ref().is_some_and(|v| v.1 != Interference::Constructive);
    let pass = pass_a1 && pass_sum && pass_inf && pass_qb && pass_qt;
    report(
        "Dyson suite",
        pass,
        &format!(
            "max |A1(01->10)| {max_a1:.2e} (<= 1e-10), max channel-sum error {max_sum:.2e} (<= 1e-8); \
             qubit MET (infidelity, 00/11 interference, top channels) {qb:?}; \
             qutrit MET (infidelity, 02/20 interference, top channels) {qt:?}; infidelity band [0.003, 0.03]"
        ),
    );
    assert!(pass);
}

#[test]
fn numerical_hygiene() {
    // Adjoint gradient vs central differences on 20 random points. The gate is
    // the relative error of the gradient vector; the componentwise figure is
    // reported for reference (it resolves the cost's roundoff floor on tiny components).
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    let mut worst_component: f64 = 0.0;
    for point in 0..20u64 {
        let levels = if point % 2 == 0 { 2 } else { 3 };
        let duration = 6.0 + point as f64 * 0.5;
        let p = problem(levels, duration, ObjectiveConfig::default());
        let x = p.random_start(1000 + point).values;
        let (_, g) = p.value_and_gradient(&x).unwrap();
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut diff: f64 = 0.0;
        for k in 0..x.len() {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[k] += step;
            dn[k] -= step;
            let fd = (p.evaluate(&up).unwrap().total_cost - p.evaluate(&dn).unwrap().total_cost) / (2.0 * step);
            diff = diff.max((fd - g[k]).abs());
            worst_component = worst_component.max((fd - g[k]).abs() / g[k].abs().max(1e-3 * scale));
        }
        worst = worst.max(diff / scale);
    }
    let pass_fd = worst <= 1e-5;

    // Norm per step and Trotter refinement.
    let mut worst_norm: f64 = 0.0;
    let mut worst_fid: f64 = 1.0;
    for (levels, duration) in [(2, 15.0), (3, 9.0), (4, 9.0)] {
        let p = problem(levels, duration, ObjectiveConfig::default());
        let labels = p.device().labels();
        for seed in 0..3 {
            let s: PulseSchedule = p.schedule(&p.random_start(seed).values);
            let (a, tr) = evolve(p.device(), &s, p.initial_state(), 1000, &labels, FrameChoice::Bare).unwrap();
            worst_norm = tr.total.iter().fold(worst_norm, |m, t| m.max((t.sqrt() - 1.0).abs()));
            let (b, _) = evolve(p.device(), &s, p.initial_state(), 2000, &[], FrameChoice::Bare).unwrap();
            worst_fid = worst_fid.min(a.fidelity(&b));
        }
    }
    let pass_norm = worst_norm <= 1e-10;
    let pass_trotter = worst_fid >= 1.0 - 1e-8;

    // Bitwise determinism of multistart.
    let p = problem(3, 9.0, ObjectiveConfig::default());
    let a = serde_json::to_string(&multistart(&p, 4, 7, &OptimizerConfig::default()).unwrap()).unwrap();
    let b = serde_json::to_string(&multistart(&p, 4, 7, &OptimizerConfig::default()).unwrap()).unwrap();
    let pass_det = a == b;
    let pass = pass_fd && pass_norm && pass_trotter && pass_det;
    report(
        "Numerical hygiene",
        pass,
        &format!(
            "gradient vs FD worst relative error {worst:.2e} (<= 1e-5, componentwise {worst_component:.2e}); worst per-step norm drift {worst_norm:.2e} (<= 1e-10); \
             Trotter 1000 vs 2000 worst fidelity 1 - {:.2e} (>= 1 - 1e-8); determinism {pass_det}",
            1.0 - worst_fid
        ),
    );
    assert!(pass);
}

#[test]
fn target_state_structure() {
    let pops = target_populations(&hamiltonian());
    let get = |s: &str| pops.iter().find(|(l, _)| *l == label(s)).unwrap().1;
    let ratio = get("01") / get("10");
    let pass_ratio = (ratio - 6.92).abs() <= 0.05;
    let p = problem(2, 20.0, ObjectiveConfig::default());
    let cfg = OptimizerConfig::default();
    let runs = multistart(&p, 100, 0, &cfg).unwrap();
    let converged: Vec<&RunResult> = runs.runs.iter().filter(|r| r.converged).collect();
    let reached = converged.iter().filter(|r| r.energy_error.abs() < 1e-8).count();
    let pass_runs = reached >= 95;
    report(
        "Target-state structure",
        pass_ratio && pass_runs,
        &format!(
            "p(01)/p(10) = {ratio:.4} (6.92 +/- 0.05); qubits at 20 ns: {reached} of 100 seeds ({} converged) reach |E - E_FCI| < 1e-8 (>= 95)",
            converged.len()
        ),
    );
    assert!(pass_ratio && pass_runs);
}
