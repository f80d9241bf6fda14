//! Costate back-propagation, exact gradients and the switching function.
//!
//! Sign map. The costate used for gradients is `lambda = d cost / d psi^*`,
//! propagated backwards by the same Schroedinger equation as the state. With
//! it, `2 Re <lambda| -i dH/dOmega |psi>` is the cost gradient density. The
//! maximum principle is stated for the control function that the optimal
//! control *maximizes*, whose costate is `-lambda` when the cost is minimized.
//! [`SwitchingTrace`] reports the switching function in that convention
//! (scaled by [`PONTRYAGIN_SIGN`]), so the bang-bang rule reads
//! `Omega = +bound` where `phi > 0` and `-bound` where `phi < 0`; the packed
//! gradient is the negative of its segment integrals times `2pi`.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CVector, Device, StateVector, C64};
use crate::objective::{evaluate_bare, EmbeddedHamiltonian, ObjectiveConfig};
use crate::propagator::{check_normalized, dotc, mat_t_vec, Evolver, Forward, SegmentProp};
use crate::pulse::PulseSchedule;

/// Converts the gradient-density costate into the maximizing (Pontryagin) costate.
pub const PONTRYAGIN_SIGN: f64 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchingTrace {
    pub times: Vec<f64>,
    /// `phi[q][j]`, Pontryagin convention (see module docs).
    pub phi: Vec<Vec<f64>>,
    /// Pulse amplitude (GHz) of transmon `q` at `times[j]`.
    pub pulse_values: Vec<Vec<f64>>,
}

impl SwitchingTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ns");
        for q in 0..self.phi.len() {
            write!(out, ",phi_{q},omega_{q}_ghz").unwrap();
        }
        out.push('\n');
        for (j, t) in self.times.iter().enumerate() {
            write!(out, "{t}").unwrap();
            for (phi, pulse) in self.phi.iter().zip(&self.pulse_values) {
                write!(out, ",{},{}", phi[j], pulse[j]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// `d total_cost / d parameter`, packed like [`crate::pulse::ParameterVector`]
/// (Hartree per GHz).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn amplitude(&self, q: usize, k: usize, n_segments: usize) -> f64 {
        self.values[q * n_segments + k]
    }

    pub fn drive_freq(&self, q: usize, n_segments: usize, n_transmons: usize) -> f64 {
        self.values[n_transmons * n_segments + q]
    }
}

/// `lambda(T) = d cost / d psi^*(T)`.
///
/// Unnormalized cost: `H psi`. Normalized cost: `(H - E P) psi / <psi|P|psi>`.
/// An active leakage penalty adds `-(d penalty / d leakage) P psi`.
pub fn terminal_costate(psi_t: &StateVector, h: &EmbeddedHamiltonian, cfg: &ObjectiveConfig) -> Result<StateVector> {
    cfg.validate()?;
    let (_, lam) = evaluate_bare(psi_t, h, cfg)?;
    StateVector::new(psi_t.levels, psi_t.n_transmons, CVector::from_vec(lam))
}

/// Costate on the Trotter grid, bare coordinates.
#[derive(Clone, Debug)]
pub struct CostateTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
}

/// Propagates `lambda(T)` backwards with the exact inverses of the forward steps.
pub fn backpropagate_costate(
    device: &Device,
    schedule: &PulseSchedule,
    lambda_t: &StateVector,
    n_trotter: usize,
) -> Result<CostateTrajectory> {
    let ev = Evolver::new(Arc::new(device.clone()), schedule.duration, n_trotter)?;
    ev.check_schedule(schedule)?;
    if lambda_t.dim() != device.dim() {
        return Err(Error::Dimension("costate dimension differs from device".into()));
    }
    let props = ev.segment_props(schedule);
    let segs = ev.step_segments(schedule);
    let mut lam = ev.to_dressed(lambda_t);
    let mut states = vec![ev.to_bare(&lam)];
    for s in (0..n_trotter).rev() {
        ev.step_inverse(schedule, &props, segs[s], s, &mut lam);
        states.push(ev.to_bare(&lam));
    }
    states.reverse();
    Ok(CostateTrajectory {
        times: ev.grid(),
        states,
    })
}

/// Per-segment derivative data: `(Q^T A_q Q) o Gamma` for each transmon.
fn derivative_kernels(ev: &Evolver, p: &SegmentProp) -> Vec<Vec<C64>> {
    let d = ev.dim();
    let dt = ev.dt;
    let mut gamma = vec![C64::new(0.0, 0.0); d * d];
    for a in 0..d {
        for b in 0..d {
            let half = 0.5 * (p.x[a] - p.x[b]) * dt;
            let sinc = if half.abs() < 1e-8 { 1.0 - half * half / 6.0 } else { half.sin() / half };
            let phase = C64::from_polar(1.0, -0.5 * (p.x[a] + p.x[b]) * dt);
            gamma[a * d + b] = C64::new(0.0, -TAU * dt) * phase * sinc;
        }
    }
    ev.device
        .drive_ops
        .iter()
        .map(|op| {
            let tilde: DMatrix<f64> = p.qt.clone() * op * &p.q;
            let mut k = vec![C64::new(0.0, 0.0); d * d];
            for a in 0..d {
                for b in 0..d {
                    k[a * d + b] = gamma[a * d + b] * tilde[(a, b)];
                }
            }
            k
        })
        .collect()
}

/// Backward sweep. Returns the packed gradient and, if asked, the costate
/// (dressed coordinates) at every grid time.
pub(crate) fn adjoint_sweep(
    ev: &Evolver,
    schedule: &PulseSchedule,
    fwd: &Forward,
    lambda_t: &[C64],
    keep_costates: bool,
) -> (Vec<f64>, Option<Vec<C64>>) {
    let d = ev.dim();
    let nq = ev.device.n_transmons();
    let nseg = schedule.n_segments;
    let n = ev.n_trotter;
    let zero = C64::new(0.0, 0.0);
    let mut grad = vec![0.0; nq * nseg + nq];
    let mut kernels: Vec<Option<Vec<Vec<C64>>>> = (0..nseg).map(|_| None).collect();
    let mut costates = keep_costates.then(|| {
        let mut v = vec![zero; (n + 1) * d];
        v[n * d..].copy_from_slice(lambda_t);
        v
    });
    let mut lam = lambda_t.to_vec();
    let (mut z, mut tmp, mut y, mut v, mut r) = (vec![zero; d], vec![zero; d], vec![zero; d], vec![zero; d], vec![zero; d]);
    for s in (0..n).rev() {
        let k = fwd.segs[s];
        let p = &fwd.props[k];
        let t = ev.step_mid(s);
        ev.carrier_phases(schedule, t, &mut z);
        let eph = ev.mid_energy_phases(s);
        ev.apply_b_dag(eph, &z, &lam, &mut tmp, &mut y);
        mat_t_vec(&p.q, &y, &mut v);

        let u = &fwd.u[s * d..(s + 1) * d];
        let w = &fwd.w[s * d..(s + 1) * d];
        let m = &fwd.m[s * d..(s + 1) * d];
        let kern = kernels[k].get_or_insert_with(|| derivative_kernels(ev, p));
        for (q, kq) in kern.iter().enumerate() {
            let mut acc = zero;
            for a in 0..d {
                let row = &kq[a * d..(a + 1) * d];
                let inner: C64 = row.iter().zip(u).map(|(c, x)| c * x).sum();
                acc += v[a].conj() * inner;
            }
            grad[q * nseg + k] += 2.0 * acc.re;
        }

        // r = M^dag y
        for ((o, vv), e) in tmp.iter_mut().zip(&v).zip(&p.expo) {
            *o = vv * e.conj();
        }
        mat_t_vec(&p.qt, &tmp, &mut r);

        for (q, occ) in ev.device.occupations.iter().enumerate() {
            let mut c = zero;
            for i in 0..d {
                c += (y[i].conj() * m[i] - r[i].conj() * w[i]) * occ[i];
            }
            grad[nq * nseg + q] += 2.0 * (C64::new(0.0, -TAU * t) * c).re;
        }

        ev.apply_b(eph, &z, &r, &mut tmp, &mut lam);
        if let Some(cs) = costates.as_mut() {
            cs[s * d..(s + 1) * d].copy_from_slice(&lam);
        }
    }
    (grad, costates)
}

/// Switching function on the grid from dressed trajectories.
pub(crate) fn switching_from_dressed(
    ev: &Evolver,
    schedule: &PulseSchedule,
    states: &[C64],
    costates: &[C64],
) -> SwitchingTrace {
    let d = ev.dim();
    let nq = ev.device.n_transmons();
    let times = ev.grid();
    let zero = C64::new(0.0, 0.0);
    let (mut z, mut eph, mut tmp, mut bl, mut bp, mut ab) =
        (vec![zero; d], vec![zero; d], vec![zero; d], vec![zero; d], vec![zero; d], vec![zero; d]);
    let mut phi = vec![Vec::with_capacity(times.len()); nq];
    let mut pulse_values = vec![Vec::with_capacity(times.len()); nq];
    for (j, &t) in times.iter().enumerate() {
        ev.carrier_phases(schedule, t, &mut z);
        ev.energy_phases(t, &mut eph);
        ev.apply_b_dag(&eph, &z, &costates[j * d..(j + 1) * d], &mut tmp, &mut bl);
        ev.apply_b_dag(&eph, &z, &states[j * d..(j + 1) * d], &mut tmp, &mut bp);
        let k = schedule.segment_index(t);
        for q in 0..nq {
            // drive_ops are symmetric, so m^T x == m x.
            mat_t_vec(&ev.device.drive_ops[q], &bp, &mut ab);
            let c = dotc(&bl, &ab);
            phi[q].push(PONTRYAGIN_SIGN * 2.0 * c.im);
            pulse_values[q].push(schedule.amplitudes[q][k]);
        }
    }
    SwitchingTrace {
        times,
        phi,
        pulse_values,
    }
}

/// Switching function from bare-coordinate trajectories on a common uniform grid.
pub fn switching_function(
    device: &Device,
    schedule: &PulseSchedule,
    psi_traj: &[StateVector],
    lambda_traj: &[StateVector],
) -> Result<SwitchingTrace> {
    if psi_traj.len() != lambda_traj.len() || psi_traj.len() < 2 {
        return Err(Error::Input(format!(
            "state and costate trajectories must share a grid ({} vs {} points)",
            psi_traj.len(),
            lambda_traj.len()
        )));
    }
    let ev = Evolver::new(Arc::new(device.clone()), schedule.duration, psi_traj.len() - 1)?;
    ev.check_schedule(schedule)?;
    let flatten = |traj: &[StateVector]| -> Result<Vec<C64>> {
        let mut out = Vec::with_capacity(traj.len() * ev.dim());
        for st in traj {
            if st.dim() != ev.dim() {
                return Err(Error::Dimension("trajectory state dimension differs from device".into()));
            }
            out.extend(ev.to_dressed(st));
        }
        Ok(out)
    };
    Ok(switching_from_dressed(&ev, schedule, &flatten(psi_traj)?, &flatten(lambda_traj)?))
}

/// Forward evolution, terminal costate from `cfg`, backward sweep and switching function.
pub fn switching_trace(
    device: &Device,
    schedule: &PulseSchedule,
    psi0: &StateVector,
    h: &EmbeddedHamiltonian,
    cfg: &ObjectiveConfig,
    n_trotter: usize,
) -> Result<SwitchingTrace> {
    check_normalized(psi0)?;
    let ev = Evolver::new(Arc::new(device.clone()), schedule.duration, n_trotter)?;
    ev.check_schedule(schedule)?;
    let fwd = ev.forward(schedule, &ev.to_dressed(psi0));
    let lambda_t = terminal_costate(&ev.to_bare(fwd.last()), h, cfg)?;
    let (_, costates) = adjoint_sweep(&ev, schedule, &fwd, &ev.to_dressed(&lambda_t), true);
    Ok(switching_from_dressed(&ev, schedule, &fwd.states, &costates.expect("requested")))
}

/// Exact gradient of the discretized cost with respect to every packed parameter.
pub fn gradient(
    device: &Device,
    schedule: &PulseSchedule,
    psi0: &StateVector,
    h: &EmbeddedHamiltonian,
    cfg: &ObjectiveConfig,
    n_trotter: usize,
) -> Result<GradientVector> {
    check_normalized(psi0)?;
    let ev = Evolver::new(Arc::new(device.clone()), schedule.duration, n_trotter)?;
    ev.check_schedule(schedule)?;
    let fwd = ev.forward(schedule, &ev.to_dressed(psi0));
    let lambda_t = terminal_costate(&ev.to_bare(fwd.last()), h, cfg)?;
    let (values, _) = adjoint_sweep(&ev, schedule, &fwd, &ev.to_dressed(&lambda_t), false);
    if values.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            point: crate::pulse::ParameterVector::pack(schedule, &device.spec.omega).values,
        });
    }
    Ok(GradientVector { values })
}
