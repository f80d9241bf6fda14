//! Box-constrained limited-memory quasi-Newton minimization and multistart.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::EnergyReport;
use crate::problem::Problem;
use crate::pulse::{ParameterVector, PulseSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearchConfig {
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub memory_pairs: usize,
    pub max_iters: usize,
    /// Infinity norm of the projected gradient, Hartree/GHz.
    pub grad_tol: f64,
    /// Absolute change of the accepted cost, Hartree.
    pub cost_tol: f64,
    /// Success means `|E - E_ground|` below this, Hartree.
    pub energy_success_threshold: f64,
    pub line_search: LineSearchConfig,
    /// Stop as soon as the cost drops to this value.
    pub target_cost: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            memory_pairs: 10,
            max_iters: 5000,
            grad_tol: 1e-9,
            cost_tol: 1e-10,
            energy_success_threshold: 1e-8,
            line_search: LineSearchConfig::default(),
            target_cost: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        if self.memory_pairs == 0 {
            return Err(Error::Input("memory_pairs must be at least 1".into()));
        }
        for (name, v) in [
            ("grad_tol", self.grad_tol),
            ("cost_tol", self.cost_tol),
            ("energy_success_threshold", self.energy_success_threshold),
        ] {
            if !(v > 0.0) {
                return Err(Error::Input(format!("{name} must be positive, got {v}")));
            }
        }
        if !(ls.armijo > 0.0 && ls.armijo < 1.0 && ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err(Error::Input("line search constants must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ProjectedGradient,
    CostChange,
    /// No feasible step decreases the cost along steepest descent.
    LineSearch,
    TargetCost,
    MaxIters,
}

impl StopReason {
    pub fn converged(self) -> bool {
        self != StopReason::MaxIters
    }
}

/// Passed to the observer after every accepted iterate (iteration 0 is the start).
#[derive(Clone, Debug)]
pub struct Iterate<'a, A> {
    pub iteration: usize,
    pub x: &'a [f64],
    pub cost: f64,
    pub projected_grad_norm: f64,
    pub aux: &'a A,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum<A> {
    pub x: Vec<f64>,
    pub cost: f64,
    pub aux: A,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.max(*l).min(*h);
    }
}

/// Gradient with components that point out of an active bound zeroed.
fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&x, &g), (&l, &h))| if (x <= l && g > 0.0) || (x >= h && g < 0.0) { 0.0 } else { g })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// L-BFGS two-loop recursion restricted to the free variables.
fn lbfgs_direction(g: &[f64], free: &[bool], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, &f)| if f { *x } else { 0.0 }).collect() };
    let mut q = mask(g);
    let masked: Vec<(Vec<f64>, Vec<f64>)> = pairs.iter().map(|(s, y, _)| (mask(s), mask(y))).collect();
    let mut alphas = Vec::with_capacity(masked.len());
    for (s, y) in masked.iter().rev() {
        let sy = dot(s, y);
        if sy <= 0.0 {
            alphas.push(0.0);
            continue;
        }
        let a = dot(s, &q) / sy;
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    let gamma = masked
        .last()
        .map(|(s, y)| {
            let yy = dot(y, y);
            if yy > 0.0 && dot(s, y) > 0.0 { dot(s, y) / yy } else { 1.0 }
        })
        .unwrap_or(1.0);
    q.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y), a) in masked.iter().zip(alphas.iter().rev()) {
        let sy = dot(s, y);
        if sy <= 0.0 {
            continue;
        }
        let b = dot(y, &q) / sy;
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter().map(|v| -v).collect()
}

/// Minimizes `f` over the box `[x0.lower, x0.upper]`.
///
/// `f` returns `(cost, gradient, aux)`. Every evaluated point is feasible and
/// the accepted costs never increase.
pub fn minimize<A, F, O>(mut f: F, x0: &ParameterVector, cfg: &OptimizerConfig, mut observe: O) -> Result<Minimum<A>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, A)>,
    O: FnMut(&Iterate<A>),
{
    cfg.validate()?;
    let (lo, hi) = (&x0.lower, &x0.upper);
    if lo.len() != x0.len() || hi.len() != x0.len() || lo.iter().zip(hi).any(|(l, h)| l > h) {
        return Err(Error::Input("inconsistent parameter bounds".into()));
    }
    let mut eval = |x: &[f64], count: &mut usize| -> Result<(f64, Vec<f64>, A)> {
        *count += 1;
        let out = f(x)?;
        if !out.0.is_finite() || out.1.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { point: x.to_vec() });
        }
        Ok(out)
    };
    let mut evaluations = 0;
    let mut x = x0.values.clone();
    project(&mut x, lo, hi);
    let (mut fx, mut g, mut aux) = eval(&x, &mut evaluations)?;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut pg = projected_gradient(&x, &g, lo, hi);
    observe(&Iterate {
        iteration: 0,
        x: &x,
        cost: fx,
        projected_grad_norm: inf_norm(&pg),
        aux: &aux,
    });
    let ls = cfg.line_search;
    let mut iteration = 0;
    let stop = loop {
        if cfg.target_cost.is_some_and(|t| fx <= t) {
            break StopReason::TargetCost;
        }
        if inf_norm(&pg) < cfg.grad_tol {
            break StopReason::ProjectedGradient;
        }
        if iteration >= cfg.max_iters {
            break StopReason::MaxIters;
        }
        let free: Vec<bool> = pg.iter().map(|v| *v != 0.0).collect();
        let mut accepted = None;
        // Quasi-Newton direction first, steepest descent after a failure.
        for attempt in 0..2 {
            let steepest = attempt == 1 || pairs.is_empty();
            let mut d = if steepest { pg.iter().map(|v| -v).collect() } else { lbfgs_direction(&g, &free, &pairs) };
            if !steepest && dot(&d, &g) >= 0.0 {
                pairs.clear();
                d = pg.iter().map(|v| -v).collect();
            }
            let mut alpha = if pairs.is_empty() { 1.0 / inf_norm(&d).max(1e-300) * step_scale(lo, hi) } else { 1.0 };
            for _ in 0..=ls.max_backtracks {
                let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
                project(&mut xn, lo, hi);
                let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                let decrease = dot(&g, &step);
                if decrease >= 0.0 || step.iter().all(|s| *s == 0.0) {
                    alpha *= ls.shrink;
                    continue;
                }
                let (fn_, gn, auxn) = eval(&xn, &mut evaluations)?;
                if fn_ <= fx + ls.armijo * decrease {
                    accepted = Some((xn, fn_, gn, auxn, step));
                    break;
                }
                alpha *= ls.shrink;
            }
            if accepted.is_some() || steepest {
                break;
            }
            pairs.clear();
        }
        let Some((xn, fn_, gn, auxn, s)) = accepted else {
            break StopReason::LineSearch;
        };
        iteration += 1;
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) && sy > 0.0 {
            if pairs.len() == cfg.memory_pairs {
                pairs.pop_front();
            }
            pairs.push_back((s, y, sy));
        }
        let change = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        aux = auxn;
        pg = projected_gradient(&x, &g, lo, hi);
        observe(&Iterate {
            iteration,
            x: &x,
            cost: fx,
            projected_grad_norm: inf_norm(&pg),
            aux: &aux,
        });
        if change.abs() < cfg.cost_tol {
            break StopReason::CostChange;
        }
    };
    Ok(Minimum {
        x,
        cost: fx,
        aux,
        iterations: iteration,
        evaluations,
        stop,
    })
}

/// First steepest-descent trial moves the largest component by a tenth of
/// the smallest finite box width.
fn step_scale(lo: &[f64], hi: &[f64]) -> f64 {
    let w = lo
        .iter()
        .zip(hi)
        .map(|(l, h)| h - l)
        .filter(|w| *w > 0.0 && w.is_finite())
        .fold(f64::INFINITY, f64::min);
    if w.is_finite() { 0.1 * w } else { 1.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schedule: PulseSchedule,
    pub report: EnergyReport,
    /// `report.energy - reference ground energy`, Hartree.
    pub energy_error: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub success: bool,
    pub stop_reason: StopReason,
    pub seed: Option<u64>,
}

/// One line of the JSON-lines iteration log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub energy: f64,
    pub leakage: f64,
    pub projected_grad_norm: f64,
}

/// Optimizes a problem from `x0`. Writes one JSON line per accepted iterate to `log`.
pub fn optimize(
    problem: &Problem,
    x0: &ParameterVector,
    cfg: &OptimizerConfig,
    seed: Option<u64>,
    mut log: Option<&mut dyn Write>,
) -> Result<RunResult> {
    let mut io_error = None;
    let min = minimize(
        |x| {
            let (r, g) = problem.value_and_gradient(x)?;
            Ok((r.total_cost, g, r))
        },
        x0,
        cfg,
        |it| {
            if let Some(w) = log.as_mut() {
                let rec = IterationRecord {
                    iteration: it.iteration,
                    cost: it.cost,
                    energy: it.aux.energy,
                    leakage: it.aux.leakage_fraction,
                    projected_grad_norm: it.projected_grad_norm,
                };
                let line = serde_json::to_string(&rec).expect("plain record");
                if let Err(e) = writeln!(w, "{line}") {
                    io_error.get_or_insert(e);
                }
            }
        },
    )?;
    if let Some(e) = io_error {
        return Err(Error::io("iteration log", e));
    }
    let energy_error = min.aux.energy - problem.reference_energy();
    let converged = min.stop.converged();
    Ok(RunResult {
        schedule: problem.schedule(&min.x),
        report: min.aux,
        energy_error,
        iterations: min.iterations,
        evaluations: min.evaluations,
        converged,
        success: converged && energy_error.abs() < cfg.energy_success_threshold,
        stop_reason: min.stop,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultistartResult {
    pub runs: Vec<RunResult>,
    pub successes: usize,
    /// Successes over runs performed.
    pub success_probability: f64,
}

impl MultistartResult {
    fn from_runs(runs: Vec<RunResult>) -> Self {
        let successes = runs.iter().filter(|r| r.success).count();
        let success_probability = if runs.is_empty() { 0.0 } else { successes as f64 / runs.len() as f64 };
        MultistartResult {
            runs,
            successes,
            success_probability,
        }
    }

    /// Lowest-energy successful run, else the lowest-energy run.
    pub fn best(&self) -> Option<&RunResult> {
        let by_energy = |a: &&RunResult, b: &&RunResult| a.report.total_cost.total_cmp(&b.report.total_cost);
        self.runs
            .iter()
            .filter(|r| r.success)
            .min_by(by_energy)
            .or_else(|| self.runs.iter().min_by(by_energy))
    }
}

/// Independent runs from `random_schedule(seed0 + i)`, `i < n_starts`, in parallel.
pub fn multistart(problem: &Problem, n_starts: usize, seed0: u64, cfg: &OptimizerConfig) -> Result<MultistartResult> {
    if n_starts == 0 {
        return Err(Error::Input("n_starts must be at least 1".into()));
    }
    let runs = run_seeds(problem, seed0, 0..n_starts, cfg)?;
    Ok(MultistartResult::from_runs(runs))
}

/// Like [`multistart`] but stops after the first chunk of `chunk` seeds that
/// contains a success. Seeds are consumed in index order, so the set of runs
/// is independent of scheduling.
pub fn multistart_until_success(
    problem: &Problem,
    n_starts: usize,
    seed0: u64,
    cfg: &OptimizerConfig,
    chunk: usize,
) -> Result<MultistartResult> {
    if n_starts == 0 {
        return Err(Error::Input("n_starts must be at least 1".into()));
    }
    let chunk = chunk.max(1);
    let mut runs = Vec::new();
    let mut start = 0;
    while start < n_starts {
        let end = (start + chunk).min(n_starts);
        let batch = run_seeds(problem, seed0, start..end, cfg)?;
        let hit = batch.iter().any(|r| r.success);
        runs.extend(batch);
        if hit {
            break;
        }
        start = end;
    }
    Ok(MultistartResult::from_runs(runs))
}

fn run_seeds(
    problem: &Problem,
    seed0: u64,
    range: std::ops::Range<usize>,
    cfg: &OptimizerConfig,
) -> Result<Vec<RunResult>> {
    range
        .into_par_iter()
        .map(|i| {
            let seed = seed0.wrapping_add(i as u64);
            optimize(problem, &problem.random_start(seed), cfg, Some(seed), None)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(target: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>, ())> {
        move |x| {
            let g: Vec<f64> = x.iter().zip(&target).map(|(a, b)| a - b).collect();
            Ok((0.5 * dot(&g, &g), g, ()))
        }
    }

    fn boxed(values: Vec<f64>, lo: f64, hi: f64) -> ParameterVector {
        let n = values.len();
        ParameterVector {
            values,
            lower: vec![lo; n],
            upper: vec![hi; n],
        }
    }

    #[test]
    fn interior_quadratic_converges() {
        let target = vec![0.3, -0.2, 0.05, 0.7, -0.9];
        let cfg = OptimizerConfig::default();
        let m = minimize(quadratic(target.clone()), &boxed(vec![0.0; 5], -1.0, 1.0), &cfg, |_| {}).unwrap();
        assert!(m.iterations <= 50);
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn exterior_quadratic_converges_to_projection() {
        let target = vec![2.0, -3.0, 0.5];
        let cfg = OptimizerConfig::default();
        let m = minimize(quadratic(target), &boxed(vec![0.0; 3], -1.0, 1.0), &cfg, |_| {}).unwrap();
        assert_eq!(m.stop, StopReason::ProjectedGradient);
        assert!((m.x[0] - 1.0).abs() < 1e-12);
        assert!((m.x[1] + 1.0).abs() < 1e-12);
        assert!((m.x[2] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn ill_conditioned_rosenbrock_stays_feasible_and_monotone() {
        let rosen = |x: &[f64]| -> Result<(f64, Vec<f64>, ())> {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((f, g, ()))
        };
        let x0 = ParameterVector {
            values: vec![-1.2, 1.0],
            lower: vec![-1.5, -0.5],
            upper: vec![0.8, 2.0],
        };
        let mut costs = Vec::new();
        let mut feasible = true;
        let m = minimize(rosen, &x0, &OptimizerConfig::default(), |it| {
            costs.push(it.cost);
            feasible &= it.x.iter().zip(&x0.lower).zip(&x0.upper).all(|((v, l), h)| v >= l && v <= h);
        })
        .unwrap();
        assert!(feasible);
        assert!(costs.windows(2).all(|w| w[1] <= w[0]));
        // Constrained optimum on the a = 0.8 face.
        assert!((m.x[0] - 0.8).abs() < 1e-9);
        assert!((m.x[1] - 0.64).abs() < 1e-6);
    }

    #[test]
    fn pinned_component_stays_put() {
        let x0 = ParameterVector {
            values: vec![0.0, 0.0],
            lower: vec![0.25, -1.0],
            upper: vec![0.25, 1.0],
        };
        let m = minimize(quadratic(vec![1.0, 0.5]), &x0, &OptimizerConfig::default(), |_| {}).unwrap();
        assert_eq!(m.x[0], 0.25);
        assert!((m.x[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn nan_aborts_with_point() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>, ())> {
            if x[0] > 0.5 { Ok((f64::NAN, vec![0.0], ())) } else { Ok(((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)], ())) }
        };
        let err = minimize(f, &boxed(vec![0.0], -1.0, 1.0), &OptimizerConfig::default(), |_| {}).unwrap_err();
        match err {
            Error::NonFinite { point } => assert!(point[0] > 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn target_cost_stops_early() {
        let cfg = OptimizerConfig {
            target_cost: Some(0.1),
            ..Default::default()
        };
        let m = minimize(quadratic(vec![0.9]), &boxed(vec![-1.0], -1.0, 1.0), &cfg, |_| {}).unwrap();
        assert_eq!(m.stop, StopReason::TargetCost);
        assert!(m.cost <= 0.1);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = OptimizerConfig {
            grad_tol: 0.0,
            ..Default::default()
        };
        assert!(minimize(quadratic(vec![0.0]), &boxed(vec![0.0], -1.0, 1.0), &cfg, |_| {}).is_err());
    }
}
