//! MET scans, bang-bang certificates, Dyson channel analysis and population
//! comparisons.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adjoint::SwitchingTrace;
use crate::error::{Error, Result};
use crate::model::{BasisLabel, CMatrix, CVector, FrameChoice, PauliHamiltonian, StateVector, C64};
use crate::objective::ObjectiveConfig;
use crate::optimizer::{multistart, multistart_until_success, OptimizerConfig, RunResult};
use crate::problem::Problem;
use crate::propagator::EvolutionTrace;
use crate::pulse::PulseSchedule;

// ---------------------------------------------------------------------------
// MET scan

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Every start at every duration (success-probability curves).
    Full,
    /// Longest duration first; each duration stops at its first successful
    /// chunk and the scan stops at the first duration without any success.
    Descending,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetScanConfig {
    /// ns, strictly increasing.
    pub durations: Vec<f64>,
    pub n_starts: usize,
    pub seed: u64,
    pub mode: ScanMode,
    /// Seeds run together before checking for a success (descending mode).
    pub chunk: usize,
    /// Stop each run once the energy is within a tenth of the success threshold.
    pub stop_at_target: bool,
}

impl Default for MetScanConfig {
    fn default() -> Self {
        MetScanConfig {
            durations: duration_grid(6.0, 20.0, 0.5),
            n_starts: 100,
            seed: 0,
            mode: ScanMode::Full,
            chunk: 8,
            stop_at_target: true,
        }
    }
}

/// `lo, lo + step, ...` up to `hi` (inclusive within rounding).
pub fn duration_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetScanResult {
    /// Scanned durations, ascending.
    pub durations: Vec<f64>,
    pub runs: Vec<usize>,
    pub successes: Vec<usize>,
    /// Successes over runs performed at each duration.
    pub success_probabilities: Vec<f64>,
    /// Smallest scanned duration with at least one success.
    pub met_estimate: Option<f64>,
    /// Lowest-cost successful run at `met_estimate`.
    pub met_run: Option<RunResult>,
}

impl MetScanResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("duration_ns,runs,successes,success_probability\n");
        for i in 0..self.durations.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.durations[i], self.runs[i], self.successes[i], self.success_probabilities[i]
            )
            .unwrap();
        }
        out
    }
}

pub fn met_scan(problem: &Problem, scan: &MetScanConfig, opt: &OptimizerConfig) -> Result<MetScanResult> {
    if scan.durations.is_empty() || scan.durations.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("duration grid must be non-empty and strictly increasing".into()));
    }
    if scan.n_starts == 0 {
        return Err(Error::Input("n_starts must be at least 1".into()));
    }
    let mut opt = *opt;
    if scan.stop_at_target && opt.target_cost.is_none() {
        opt.target_cost = Some(problem.reference_energy() + 0.1 * opt.energy_success_threshold);
    }
    let mut rows: Vec<(f64, usize, usize, Option<RunResult>)> = Vec::new();
    match scan.mode {
        ScanMode::Full => {
            for &t in &scan.durations {
                let p = problem.with_duration(t)?;
                let r = multistart(&p, scan.n_starts, scan.seed, &opt)?;
                rows.push((t, r.runs.len(), r.successes, best_success(&r.runs)));
            }
        }
        ScanMode::Descending => {
            for &t in scan.durations.iter().rev() {
                let p = problem.with_duration(t)?;
                let r = multistart_until_success(&p, scan.n_starts, scan.seed, &opt, scan.chunk)?;
                let hit = r.successes > 0;
                rows.push((t, r.runs.len(), r.successes, best_success(&r.runs)));
                if !hit {
                    break;
                }
            }
            rows.reverse();
        }
    }
    let met = rows.iter().find(|r| r.2 > 0);
    Ok(MetScanResult {
        met_estimate: met.map(|r| r.0),
        met_run: met.and_then(|r| r.3.clone()),
        durations: rows.iter().map(|r| r.0).collect(),
        runs: rows.iter().map(|r| r.1).collect(),
        successes: rows.iter().map(|r| r.2).collect(),
        success_probabilities: rows.iter().map(|r| r.2 as f64 / r.1 as f64).collect(),
    })
}

fn best_success(runs: &[RunResult]) -> Option<RunResult> {
    runs.iter()
        .filter(|r| r.success)
        .min_by(|a, b| a.report.total_cost.total_cmp(&b.report.total_cost))
        .cloned()
}

// ---------------------------------------------------------------------------
// Bang-bang certificate

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertificateConfig {
    /// Samples with `|phi| <= epsilon * max|phi|` are excluded from the sign test.
    pub epsilon: f64,
    /// A segment is saturated when `|c| >= (1 - saturation_tol) * bound`.
    pub saturation_tol: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        CertificateConfig {
            epsilon: 1e-4,
            saturation_tol: 1e-3,
        }
    }
}

/// Interval where the pulse sign disagrees with a significant switching function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub transmon: usize,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignFlip {
    pub transmon: usize,
    /// Segment boundary where the pulse changes sign, ns.
    pub time: f64,
    /// Distance to the nearest switching-function zero crossing, ns.
    pub offset: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Fraction of significant samples with `sign(Omega) == sign(phi)`.
    pub sign_agreement: f64,
    pub samples_considered: usize,
    pub per_transmon_agreement: Vec<f64>,
    /// Fraction of all segments sitting at a bound.
    pub saturated_fraction: f64,
    pub flips: Vec<SignFlip>,
    /// Largest flip offset, ns; `None` without flips, infinite if a flip has no crossing.
    pub max_flip_offset: Option<f64>,
    pub segment_width: f64,
    pub violations: Vec<Violation>,
}

impl Certificate {
    /// Every flip lies within one segment width of a zero crossing.
    pub fn flips_aligned(&self) -> bool {
        self.max_flip_offset.is_none_or(|m| m <= self.segment_width * (1.0 + 1e-9))
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Evaluates the certificate on an existing switching trace.
pub fn certify_trace(trace: &SwitchingTrace, schedule: &PulseSchedule, cfg: &CertificateConfig) -> Result<Certificate> {
    let nq = schedule.n_transmons();
    if trace.phi.len() != nq || trace.pulse_values.len() != nq {
        return Err(Error::Dimension(format!(
            "switching trace covers {} transmons, schedule {}",
            trace.phi.len(),
            nq
        )));
    }
    if trace.phi.iter().chain(&trace.pulse_values).any(|s| s.len() != trace.times.len()) {
        return Err(Error::Input("switching trace arrays differ in length".into()));
    }
    let width = schedule.segment_width();
    let mut considered = 0;
    let mut agree = 0;
    let mut per_transmon = Vec::with_capacity(nq);
    let mut violations = Vec::new();
    let mut flips = Vec::new();
    for q in 0..nq {
        let phi = &trace.phi[q];
        let scale = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (mut c_q, mut a_q) = (0, 0);
        let mut open: Option<(f64, f64)> = None;
        for (j, &t) in trace.times.iter().enumerate() {
            let significant = scale > 0.0 && phi[j].abs() > cfg.epsilon * scale;
            let bad = significant && sign(phi[j]) != sign(trace.pulse_values[q][j]);
            if significant {
                c_q += 1;
                if !bad {
                    a_q += 1;
                }
            }
            match (&mut open, bad) {
                (Some(iv), true) => iv.1 = t,
                (None, true) => open = Some((t, t)),
                (Some(_), false) => {
                    let (s, e) = open.take().unwrap();
                    violations.push(Violation {
                        transmon: q,
                        t_start: s,
                        t_end: e,
                    });
                }
                (None, false) => {}
            }
        }
        if let Some((s, e)) = open {
            violations.push(Violation {
                transmon: q,
                t_start: s,
                t_end: e,
            });
        }
        considered += c_q;
        agree += a_q;
        per_transmon.push(if c_q == 0 { 1.0 } else { a_q as f64 / c_q as f64 });

        // Zero crossings of phi by linear interpolation.
        let crossings: Vec<f64> = (0..phi.len().saturating_sub(1))
            .filter_map(|j| {
                let (a, b) = (phi[j], phi[j + 1]);
                if a == 0.0 {
                    Some(trace.times[j])
                } else if a * b < 0.0 {
                    Some(trace.times[j] + (trace.times[j + 1] - trace.times[j]) * a / (a - b))
                } else {
                    None
                }
            })
            .collect();
        let amps = &schedule.amplitudes[q];
        for k in 1..amps.len() {
            let (a, b) = (sign(amps[k - 1]), sign(amps[k]));
            if a != 0 && b != 0 && a != b {
                let time = schedule.segment_start(k);
                let offset = crossings.iter().map(|c| (c - time).abs()).min_by(f64::total_cmp);
                flips.push(SignFlip {
                    transmon: q,
                    time,
                    offset,
                });
            }
        }
    }
    let segments = nq * schedule.n_segments;
    let saturated = schedule
        .amplitudes
        .iter()
        .flatten()
        .filter(|c| c.abs() >= (1.0 - cfg.saturation_tol) * schedule.amp_bound && schedule.amp_bound > 0.0)
        .count();
    let max_flip_offset = flips
        .iter()
        .map(|f| f.offset.unwrap_or(f64::INFINITY))
        .max_by(f64::total_cmp);
    Ok(Certificate {
        sign_agreement: if considered == 0 { 1.0 } else { agree as f64 / considered as f64 },
        samples_considered: considered,
        per_transmon_agreement: per_transmon,
        saturated_fraction: saturated as f64 / segments as f64,
        flips,
        max_flip_offset,
        segment_width: width,
        violations,
    })
}

/// Switching function of `schedule` (terminal costate per `objective`) and its certificate.
pub fn bang_bang_certificate(
    problem: &Problem,
    schedule: &PulseSchedule,
    objective: &ObjectiveConfig,
    cfg: &CertificateConfig,
) -> Result<(Certificate, SwitchingTrace)> {
    let trace = problem.switching_trace(schedule, objective)?;
    Ok((certify_trace(&trace, schedule, cfg)?, trace))
}

// ---------------------------------------------------------------------------
// Dyson expansion

pub const DEFAULT_QUADRATURE_INTERVALS: usize = 4000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub intermediate: BasisLabel,
    pub amplitude: C64,
    pub probability: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interference {
    Constructive,
    Destructive,
    Neutral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterferenceResult {
    pub m1: BasisLabel,
    pub m2: BasisLabel,
    /// `|A_m1 + A_m2|^2`.
    pub combined: f64,
    /// `|A_m1|^2 + |A_m2|^2`.
    pub separate: f64,
    pub margin: f64,
    pub kind: Interference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DysonReport {
    pub initial: BasisLabel,
    pub target: BasisLabel,
    pub frame: FrameChoice,
    pub first_order: C64,
    /// Second-order amplitude from the full operator product.
    pub second_order: C64,
    /// One entry per intermediate basis state, sorted by decreasing probability.
    pub channels: Vec<Channel>,
    pub channel_sum: C64,
    pub channel_sum_error: f64,
    pub first_order_probability: f64,
    pub second_order_probability: f64,
    /// Interference between the dominant channel pairs.
    pub interference: Vec<InterferenceResult>,
}

impl DysonReport {
    pub fn channel(&self, m: &BasisLabel) -> Option<&Channel> {
        self.channels.iter().find(|c| &c.intermediate == m)
    }

    pub fn channels_csv(&self) -> String {
        let mut out = String::from("intermediate,amplitude_re,amplitude_im,probability\n");
        for c in &self.channels {
            writeln!(out, "{},{},{},{}", c.intermediate, c.amplitude.re, c.amplitude.im, c.probability).unwrap();
        }
        out
    }
}

/// `H_{I,C}` sampled on a segment-aligned composite Simpson grid, in the
/// problem's frame, with one-sided values at segment boundaries.
struct DysonGrid {
    /// Per segment: node spacing and `2 * half + 1` matrices.
    segments: Vec<(f64, Vec<CMatrix>)>,
}

fn dyson_grid(problem: &Problem, schedule: &PulseSchedule, n_quad: usize) -> Result<DysonGrid> {
    problem.check_schedule(schedule)?;
    let nseg = schedule.n_segments;
    let per = (n_quad.div_ceil(nseg)).max(2).next_multiple_of(2);
    let ev = problem.evolver();
    let dev = problem.device();
    let v = dev.vectors.map(|x| C64::new(x, 0.0));
    let bare = problem.config().frame == FrameChoice::Bare;
    let width = schedule.segment_width();
    let h = width / per as f64;
    let mut segments = Vec::with_capacity(nseg);
    for k in 0..nseg {
        let t0 = schedule.segment_start(k);
        let nodes = (0..=per)
            .map(|i| {
                let t = t0 + i as f64 * h;
                let mut m = CMatrix::zeros(dev.dim(), dev.dim());
                for (q, op) in dev.drive_ops.iter().enumerate() {
                    let c = schedule.amplitudes[q][k];
                    if c != 0.0 {
                        m += ev.conjugated(op, schedule, t) * C64::new(TAU * c, 0.0);
                    }
                }
                if bare { &v * m * v.transpose() } else { m }
            })
            .collect();
        segments.push((h, nodes));
    }
    Ok(DysonGrid { segments })
}

/// Integrates `f` (values at the nodes of every segment) and also returns the
/// running integral at each node.
fn cumulative_simpson(grid: &DysonGrid, f: &[Vec<CMatrix>]) -> (CMatrix, Vec<Vec<CMatrix>>) {
    let d = f[0][0].nrows();
    let mut acc = CMatrix::zeros(d, d);
    let mut running = Vec::with_capacity(f.len());
    for ((h, _), vals) in grid.segments.iter().zip(f) {
        let h = *h;
        let mut seg = Vec::with_capacity(vals.len());
        seg.push(acc.clone());
        for j in (0..vals.len() - 1).step_by(2) {
            let (a, b, c) = (&vals[j], &vals[j + 1], &vals[j + 2]);
            let half = (a * C64::new(5.0, 0.0) + b * C64::new(8.0, 0.0) - c) * C64::new(h / 12.0, 0.0);
            seg.push(&acc + half);
            acc += (a + b * C64::new(4.0, 0.0) + c) * C64::new(h / 3.0, 0.0);
            seg.push(acc.clone());
        }
        running.push(seg);
    }
    (acc, running)
}

/// First- and second-order Dyson operators over the whole schedule.
pub struct DysonOperators {
    pub u1: CMatrix,
    pub u2: CMatrix,
}

fn operators(grid: &DysonGrid) -> (DysonOperators, Vec<Vec<CMatrix>>) {
    let minus_i = C64::new(0.0, -1.0);
    let gen: Vec<Vec<CMatrix>> = grid
        .segments
        .iter()
        .map(|(_, ms)| ms.iter().map(|m| m * minus_i).collect())
        .collect();
    let (u1, running) = cumulative_simpson(grid, &gen);
    let products: Vec<Vec<CMatrix>> = gen
        .iter()
        .zip(&running)
        .map(|(gs, rs)| gs.iter().zip(rs).map(|(g, r)| g * r).collect())
        .collect();
    let (u2, _) = cumulative_simpson(grid, &products);
    (DysonOperators { u1, u2 }, running)
}

/// Simpson weights of node `j` in a segment with `n + 1` nodes.
fn simpson_weight(j: usize, n: usize, h: f64) -> f64 {
    let w = if j == 0 || j == n {
        1.0
    } else if j % 2 == 1 {
        4.0
    } else {
        2.0
    };
    w * h / 3.0
}

pub fn dyson_operators(problem: &Problem, schedule: &PulseSchedule, n_quad: usize) -> Result<DysonOperators> {
    Ok(operators(&dyson_grid(problem, schedule, n_quad)?).0)
}

/// First-order amplitude, second-order amplitude and its channel decomposition
/// for `initial -> target`, labels in the problem's frame.
pub fn dyson_amplitudes(
    problem: &Problem,
    schedule: &PulseSchedule,
    initial: &BasisLabel,
    target: &BasisLabel,
    n_quad: usize,
) -> Result<DysonReport> {
    let dev = problem.device();
    let (levels, nt) = (dev.levels(), dev.n_transmons());
    let i = initial.checked_index(levels, nt)?;
    let f = target.checked_index(levels, nt)?;
    let grid = dyson_grid(problem, schedule, n_quad)?;
    let (ops, running) = operators(&grid);
    let minus_i = C64::new(0.0, -1.0);
    let d = dev.dim();
    let mut channel_amps = vec![C64::new(0.0, 0.0); d];
    for ((h, ms), rs) in grid.segments.iter().zip(&running) {
        let n = ms.len() - 1;
        for (j, (m, r)) in ms.iter().zip(rs).enumerate() {
            let w = simpson_weight(j, n, *h);
            for (mid, a) in channel_amps.iter_mut().enumerate() {
                *a += minus_i * m[(f, mid)] * r[(mid, i)] * w;
            }
        }
    }
    let labels = dev.labels();
    let mut channels: Vec<Channel> = labels
        .into_iter()
        .zip(channel_amps.iter())
        .map(|(l, a)| Channel {
            intermediate: l,
            amplitude: *a,
            probability: a.norm_sqr(),
        })
        .collect();
    let channel_sum: C64 = channel_amps.iter().sum();
    let second_order = ops.u2[(f, i)];
    channels.sort_by(|a, b| b.probability.total_cmp(&a.probability));
    let mut report = DysonReport {
        initial: initial.clone(),
        target: target.clone(),
        frame: problem.config().frame,
        first_order: ops.u1[(f, i)],
        second_order,
        channel_sum,
        channel_sum_error: (channel_sum - second_order).norm(),
        first_order_probability: ops.u1[(f, i)].norm_sqr(),
        second_order_probability: second_order.norm_sqr(),
        channels,
        interference: Vec::new(),
    };
    let top: Vec<BasisLabel> = report.channels.iter().take(4).map(|c| c.intermediate.clone()).collect();
    for a in 0..top.len() {
        for b in a + 1..top.len() {
            report.interference.push(interference_test(&report, &top[a], &top[b])?);
        }
    }
    Ok(report)
}

/// Constructive iff `|A1 + A2|^2 > |A1|^2 + |A2|^2` beyond rounding.
pub fn interference_test(report: &DysonReport, m1: &BasisLabel, m2: &BasisLabel) -> Result<InterferenceResult> {
    let get = |m: &BasisLabel| {
        report
            .channel(m)
            .map(|c| c.amplitude)
            .ok_or_else(|| Error::Input(format!("channel {m} not present in report")))
    };
    let (a1, a2) = (get(m1)?, get(m2)?);
    let combined = (a1 + a2).norm_sqr();
    let separate = a1.norm_sqr() + a2.norm_sqr();
    let margin = combined - separate;
    let kind = if margin.abs() <= 1e-12 * separate.max(f64::MIN_POSITIVE) {
        Interference::Neutral
    } else if margin > 0.0 {
        Interference::Constructive
    } else {
        Interference::Destructive
    };
    Ok(InterferenceResult {
        m1: m1.clone(),
        m2: m2.clone(),
        combined,
        separate,
        margin,
        kind,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecondOrderResult {
    /// `(I + U1 + U2) psi0`, unnormalized, bare coordinates.
    pub state: StateVector,
    /// Exact final state of the same schedule.
    pub exact: StateVector,
    /// `|<exact|state>|^2 / <state|state>`.
    pub fidelity: f64,
}

impl SecondOrderResult {
    pub fn infidelity(&self) -> f64 {
        1.0 - self.fidelity
    }
}

/// Applies the second-order truncated Dyson operator to `psi0` (bare coordinates).
pub fn second_order_state(
    problem: &Problem,
    schedule: &PulseSchedule,
    psi0: &StateVector,
    n_quad: usize,
) -> Result<SecondOrderResult> {
    let dev = problem.device();
    if psi0.dim() != dev.dim() {
        return Err(Error::Dimension("initial state dimension differs from device".into()));
    }
    let ops = dyson_operators(problem, schedule, n_quad)?;
    let v = dev.vectors.map(|x| C64::new(x, 0.0));
    // Operators act on frame coordinates; move psi0 there and back.
    let to_frame = |x: &CVector| match problem.config().frame {
        FrameChoice::Bare => x.clone(),
        FrameChoice::Dressed => v.transpose() * x,
    };
    let from_frame = |x: CVector| match problem.config().frame {
        FrameChoice::Bare => x,
        FrameChoice::Dressed => &v * x,
    };
    let x0 = to_frame(&psi0.amplitudes);
    let x = &x0 + &ops.u1 * &x0 + &ops.u2 * &x0;
    let state = StateVector::new(psi0.levels, psi0.n_transmons, from_frame(x))?;
    let exact = crate::propagator::evolve(dev, schedule, psi0, problem.config().n_trotter, &[], problem.config().frame)?.0;
    let overlap = exact.inner(&state).norm_sqr();
    let fidelity = overlap / (exact.norm().powi(2) * state.norm().powi(2));
    Ok(SecondOrderResult { state, exact, fidelity })
}

// ---------------------------------------------------------------------------
// Target structure and population traces

/// Computational populations of the exact ground state, labels transmon-0 first.
pub fn target_populations(h: &PauliHamiltonian) -> Vec<(BasisLabel, f64)> {
    let n = h.n_qubits();
    h.ground_state()
        .iter()
        .enumerate()
        .map(|(c, a)| (BasisLabel::from_index(c, 2, n), a.norm_sqr()))
        .collect()
}

/// Population of `label` raw and renormalized by the computational weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSeries {
    pub name: String,
    pub times: Vec<f64>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl PopulationSeries {
    pub fn from_trace(name: &str, trace: &EvolutionTrace, label: &BasisLabel) -> Result<Self> {
        let raw = trace
            .series(label)
            .ok_or_else(|| Error::Input(format!("label {label} not recorded in trace")))?
            .to_vec();
        let normalized = raw
            .iter()
            .zip(&trace.computational)
            .map(|(p, w)| if *w > 0.0 { p / w } else { 0.0 })
            .collect();
        Ok(PopulationSeries {
            name: name.to_string(),
            times: trace.times.clone(),
            raw,
            normalized,
        })
    }

    /// First time the normalized population comes within `tol` of `target`.
    pub fn first_reach(&self, target: f64, tol: f64) -> Option<f64> {
        self.times
            .iter()
            .zip(&self.normalized)
            .find(|(_, p)| (*p - target).abs() <= tol)
            .map(|(t, _)| *t)
    }
}

/// Long-format CSV of several population series for one label.
pub fn population_comparison(
    runs: &[(&str, &EvolutionTrace)],
    label: &BasisLabel,
) -> Result<(Vec<PopulationSeries>, String)> {
    let series = runs
        .iter()
        .map(|(name, tr)| PopulationSeries::from_trace(name, tr, label))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("run,time_ns,population_raw,population_normalized\n");
    for s in &series {
        for j in 0..s.times.len() {
            writeln!(csv, "{},{},{},{}", s.name, s.times[j], s.raw[j], s.normalized[j]).unwrap();
        }
    }
    Ok((series, csv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Coupling, Device, DeviceSpec};
    use crate::problem::ProblemConfig;
    use crate::pulse::PulseBounds;
    use std::sync::Arc;

    fn h2() -> PauliHamiltonian {
        PauliHamiltonian::from_terms([
            ("II", -0.656859887080193),
            ("IZ", 0.129101312887111),
            ("ZI", -0.129101312887111),
            ("ZZ", -0.004188958260028),
            ("XX", 0.229535936059702),
        ])
        .unwrap()
    }

    fn problem(levels: usize, duration: f64, n_segments: usize, n_trotter: usize) -> Problem {
        let dev = Device::new(
            DeviceSpec::new(
                vec![4.8080, 4.8333],
                vec![0.3102, 0.2916],
                vec![Coupling { p: 0, q: 1, g: 0.01831 }],
                levels,
            )
            .unwrap(),
        )
        .unwrap();
        Problem::new(
            Arc::new(dev),
            &h2(),
            ProblemConfig {
                duration,
                n_segments,
                n_trotter,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn label(s: &str) -> BasisLabel {
        s.parse().unwrap()
    }

    #[test]
    fn grid_helper_is_inclusive() {
        assert_eq!(duration_grid(6.0, 7.0, 0.25), vec![6.0, 6.25, 6.5, 6.75, 7.0]);
    }

    #[test]
    fn target_population_ratio() {
        let pops = target_populations(&h2());
        let get = |s: &str| pops.iter().find(|(l, _)| *l == label(s)).unwrap().1;
        assert!((get("01") / get("10") - 6.92).abs() < 0.05);
    }

    #[test]
    fn certificate_on_hand_built_traces() {
        let s = PulseSchedule {
            duration: 4.0,
            n_segments: 4,
            amplitudes: vec![vec![0.02, 0.02, -0.02, -0.02]],
            drive_freq: vec![4.8],
            amp_bound: 0.02,
            detuning_bound: 1.0,
        };
        let times: Vec<f64> = (0..=40).map(|j| j as f64 * 0.1).collect();
        let pulse: Vec<f64> = times.iter().map(|&t| s.amplitudes[0][s.segment_index(t)]).collect();
        // Consistent: phi crosses zero at t = 2.05.
        let good = SwitchingTrace {
            times: times.clone(),
            phi: vec![times.iter().map(|t| 2.05 - t).collect()],
            pulse_values: vec![pulse.clone()],
        };
        let c = certify_trace(&good, &s, &CertificateConfig::default()).unwrap();
        assert!(c.sign_agreement > 0.97);
        assert_eq!(c.saturated_fraction, 1.0);
        assert_eq!(c.flips.len(), 1);
        assert!((c.max_flip_offset.unwrap() - 0.05).abs() < 1e-12);
        assert!(c.flips_aligned());
        // Violating: phi keeps one sign, so the second half disagrees.
        let bad = SwitchingTrace {
            times: times.clone(),
            phi: vec![vec![1.0; times.len()]],
            pulse_values: vec![pulse],
        };
        let c = certify_trace(&bad, &s, &CertificateConfig::default()).unwrap();
        assert!((c.sign_agreement - 20.0 / 41.0).abs() < 1e-12);
        assert_eq!(c.violations.len(), 1);
        assert_eq!((c.violations[0].t_start, c.violations[0].t_end), (2.0, 4.0));
        assert_eq!(c.max_flip_offset, Some(f64::INFINITY));
        assert!(!c.flips_aligned());
    }

    #[test]
    fn random_schedule_agreement_is_near_half() {
        let p = problem(2, 10.0, 100, 1000);
        let mut total = 0.0;
        let n = 8;
        for seed in 0..n {
            let s = p.schedule(&p.random_start(seed).values);
            let (c, _) = bang_bang_certificate(&p, &s, &ObjectiveConfig::unnormalized(), &Default::default()).unwrap();
            total += c.sign_agreement;
        }
        let mean = total / n as f64;
        assert!((mean - 0.5).abs() < 0.15, "{mean}");
    }

    #[test]
    fn first_order_parity_forbidden() {
        for levels in [2, 3] {
            let p = problem(levels, 6.0, 12, 120);
            for seed in 0..3 {
                let s = p.schedule(&p.random_start(seed).values);
                let r = dyson_amplitudes(&p, &s, &label("01"), &label("10"), 600).unwrap();
                assert!(r.first_order.norm() < 1e-14);
                assert!(r.channel_sum_error < 1e-12);
            }
        }
    }

    #[test]
    fn dyson_quadrature_self_converges() {
        let p = problem(3, 6.0, 12, 120);
        let s = p.schedule(&p.random_start(4).values);
        let a = dyson_amplitudes(&p, &s, &label("01"), &label("10"), 1200).unwrap();
        let b = dyson_amplitudes(&p, &s, &label("01"), &label("10"), 2400).unwrap();
        assert!((a.second_order - b.second_order).norm() < 1e-6 * b.second_order.norm());
    }

    #[test]
    fn zero_drive_second_order_is_identity() {
        let p = problem(3, 6.0, 12, 120);
        let s = p.template().clone();
        let r = second_order_state(&p, &s, p.initial_state(), 600).unwrap();
        assert!((&r.state.amplitudes - &p.initial_state().amplitudes).norm() < 1e-14);
    }

    #[test]
    fn weak_drive_second_order_is_accurate() {
        let p = problem(3, 8.0, 20, 2000);
        let mut s = p.schedule(&p.random_start(6).values);
        s.amplitudes.iter_mut().flatten().for_each(|c| *c *= 0.01);
        let r = second_order_state(&p, &s, p.initial_state(), 4000).unwrap();
        assert!(r.infidelity() <= 1e-6, "{}", r.infidelity());
    }

    #[test]
    fn second_order_operators_match_short_exact_evolution() {
        // Weak constant drive on a short window: U ~ I + U1 + U2 to third order.
        let p = problem(2, 2.0, 4, 4000);
        let bounds = PulseBounds::default();
        let s = PulseSchedule::constant(2.0, 4, &p.device().spec.omega, bounds, 0.002);
        let r = second_order_state(&p, &s, p.initial_state(), 4000).unwrap();
        let diff = (&r.state.amplitudes - &r.exact.amplitudes).norm();
        // Two drives of strength 2pi c over T bound the third-order remainder.
        let drive: f64 = 2.0 * TAU * 0.002 * 2.0;
        assert!(diff < drive.powi(3) / 6.0, "{diff}");
        let first_only = &p.initial_state().amplitudes + &dyson_operators(&p, &s, 4000).unwrap().u1 * &p.initial_state().amplitudes;
        assert!((&first_only - &r.exact.amplitudes).norm() > 20.0 * diff);
    }

    #[test]
    fn interference_cases() {
        let mk = |a1: C64, a2: C64| DysonReport {
            initial: label("01"),
            target: label("10"),
            frame: FrameChoice::Dressed,
            first_order: C64::new(0.0, 0.0),
            second_order: a1 + a2,
            channels: vec![
                Channel {
                    intermediate: label("00"),
                    amplitude: a1,
                    probability: a1.norm_sqr(),
                },
                Channel {
                    intermediate: label("11"),
                    amplitude: a2,
                    probability: a2.norm_sqr(),
                },
            ],
            channel_sum: a1 + a2,
            channel_sum_error: 0.0,
            first_order_probability: 0.0,
            second_order_probability: (a1 + a2).norm_sqr(),
            interference: vec![],
        };
        let t = |r: &DysonReport| interference_test(r, &label("00"), &label("11")).unwrap().kind;
        assert_eq!(t(&mk(C64::new(0.3, 0.1), C64::new(0.2, 0.0))), Interference::Constructive);
        assert_eq!(t(&mk(C64::new(0.3, 0.1), C64::new(-0.2, 0.0))), Interference::Destructive);
        assert_eq!(t(&mk(C64::new(0.3, 0.1), C64::new(0.0, 0.0))), Interference::Neutral);
        assert!(interference_test(&mk(C64::new(1.0, 0.0), C64::new(1.0, 0.0)), &label("00"), &label("22")).is_err());
    }

    #[test]
    fn qubit_traces_raw_equals_normalized() {
        let p = problem(2, 6.0, 12, 120);
        let s = p.schedule(&p.random_start(2).values);
        let (_, tr) = p.trace(&s, &[label("10")]).unwrap();
        let (series, csv) = population_comparison(&[("qubit", &tr)], &label("10")).unwrap();
        for (a, b) in series[0].raw.iter().zip(&series[0].normalized) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(csv.starts_with("run,time_ns,"));
        assert_eq!(csv.lines().count(), 122);
    }

    #[test]
    fn met_scan_modes() {
        let p = problem(2, 20.0, 20, 200);
        let scan = MetScanConfig {
            durations: vec![3.0, 20.0],
            n_starts: 2,
            seed: 0,
            mode: ScanMode::Full,
            chunk: 2,
            stop_at_target: true,
        };
        let r = met_scan(&p, &scan, &OptimizerConfig::default()).unwrap();
        assert_eq!(r.durations, vec![3.0, 20.0]);
        assert_eq!(r.successes[0], 0);
        assert!(r.successes[1] > 0);
        assert_eq!(r.met_estimate, Some(20.0));
        let run = r.met_run.as_ref().unwrap();
        assert!(run.success && run.converged);
        assert!(r.to_csv().starts_with("duration_ns,runs,successes,success_probability\n"));

        let d = met_scan(&p, &MetScanConfig { mode: ScanMode::Descending, ..scan.clone() }, &OptimizerConfig::default()).unwrap();
        assert_eq!(d.met_estimate, Some(20.0));
        assert!(d.runs[1] <= 2);

        assert!(met_scan(&p, &MetScanConfig { durations: vec![5.0, 4.0], ..scan }, &OptimizerConfig::default()).is_err());
    }
}
