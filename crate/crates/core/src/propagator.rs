//! Interaction-picture evolution under the drive Hamiltonian.
//!
//! With `Z(t) = exp(-i 2pi sum_q nu_q n_q t)` the rotating-wave drive is
//! `H_C(t) = Z X Z^dag` where `X = 2pi sum_q Omega_q (a_q + a_q^dag)` is
//! constant on each pulse segment. Writing `e^{i H_D t} = V e^{iEt} V^T`, every
//! Trotter step is
//!
//! ```text
//! S_j = B(t_j) exp(-i X dt) B(t_j)^dag,   B(t) = e^{iEt} V^T Z(t)
//! ```
//!
//! in dressed coordinates (`phi = V^T psi`). Only `exp(-i X dt)` needs a
//! diagonalization, once per segment; each step is three small mat-vecs.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BasisLabel, CMatrix, CVector, Device, FrameChoice, StateVector, C64};
use crate::pulse::PulseSchedule;

pub const DEFAULT_TROTTER_STEPS: usize = 1000;

/// Below this squared weight the computational projection is treated as singular.
pub const SINGULAR_PROJECTION: f64 = 1e-12;

const NORM_TOLERANCE: f64 = 1e-10;

/// `out[b] = sum_i m[(i, b)] x[i]`, i.e. `m^T x` using contiguous columns.
#[inline]
pub(crate) fn mat_t_vec(m: &DMatrix<f64>, x: &[C64], out: &mut [C64]) {
    let n = m.nrows();
    let data = m.as_slice();
    for (b, o) in out.iter_mut().enumerate() {
        let col = &data[b * n..(b + 1) * n];
        let mut re = 0.0;
        let mut im = 0.0;
        for (c, v) in col.iter().zip(x) {
            re += c * v.re;
            im += c * v.im;
        }
        *o = C64::new(re, im);
    }
}

#[inline]
pub(crate) fn dotc(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Exact propagator data for one pulse segment.
pub(crate) struct SegmentProp {
    /// Eigenvalues of `X`, rad/ns.
    pub x: Vec<f64>,
    /// Eigenvectors of `X` (columns).
    pub q: DMatrix<f64>,
    pub qt: DMatrix<f64>,
    /// `exp(-i x dt)`.
    pub expo: Vec<C64>,
}

/// Fixed-grid propagator for one device, duration and Trotter resolution.
#[derive(Clone)]
pub struct Evolver {
    pub(crate) device: Arc<Device>,
    pub(crate) duration: f64,
    pub(crate) n_trotter: usize,
    pub(crate) dt: f64,
    /// `V^T` of the dressed frame (label order).
    pub(crate) vt: DMatrix<f64>,
    /// `e^{i E t}` at every step midpoint, `n_trotter x dim`.
    mid_phases: Vec<C64>,
}

impl Evolver {
    pub fn new(device: Arc<Device>, duration: f64, n_trotter: usize) -> Result<Self> {
        if n_trotter == 0 {
            return Err(Error::Input("n_trotter must be at least 1".into()));
        }
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::Input(format!("duration must be positive, got {duration}")));
        }
        let dt = duration / n_trotter as f64;
        let dim = device.dim();
        let mut mid_phases = Vec::with_capacity(n_trotter * dim);
        for s in 0..n_trotter {
            let t = (s as f64 + 0.5) * dt;
            mid_phases.extend(device.energies.iter().map(|e| C64::from_polar(1.0, e * t)));
        }
        Ok(Evolver {
            vt: device.vectors.transpose(),
            device,
            duration,
            n_trotter,
            dt,
            mid_phases,
        })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn n_trotter(&self) -> usize {
        self.n_trotter
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.device.dim()
    }

    /// Grid times `t_j = j dt`, `j = 0..=n_trotter`.
    pub fn grid(&self) -> Vec<f64> {
        (0..=self.n_trotter).map(|j| j as f64 * self.dt).collect()
    }

    pub(crate) fn step_mid(&self, s: usize) -> f64 {
        (s as f64 + 0.5) * self.dt
    }

    pub(crate) fn check_schedule(&self, schedule: &PulseSchedule) -> Result<()> {
        if schedule.n_transmons() != self.device.n_transmons() {
            return Err(Error::Dimension(format!(
                "schedule drives {} transmons but the device has {}",
                schedule.n_transmons(),
                self.device.n_transmons()
            )));
        }
        if (schedule.duration - self.duration).abs() > 1e-12 * self.duration {
            return Err(Error::Input(format!(
                "schedule duration {} ns differs from propagator duration {} ns",
                schedule.duration, self.duration
            )));
        }
        schedule.validate(&self.device.spec.omega)
    }

    /// `Z(t)` diagonal, bare coordinates.
    pub(crate) fn carrier_phases(&self, schedule: &PulseSchedule, t: f64, out: &mut [C64]) {
        let dev = &*self.device;
        out.fill(C64::new(1.0, 0.0));
        for (q, occ) in dev.occupations.iter().enumerate() {
            let w = -TAU * schedule.drive_freq[q] * t;
            // Powers of e^{-i 2pi nu t} for each occupation.
            let base = C64::from_polar(1.0, w);
            let mut powers = Vec::with_capacity(dev.levels());
            let mut acc = C64::new(1.0, 0.0);
            for _ in 0..dev.levels() {
                powers.push(acc);
                acc *= base;
            }
            for (o, &n) in out.iter_mut().zip(occ) {
                *o *= powers[n as usize];
            }
        }
    }

    pub(crate) fn energy_phases(&self, t: f64, out: &mut [C64]) {
        for (o, e) in out.iter_mut().zip(&self.device.energies) {
            *o = C64::from_polar(1.0, e * t);
        }
    }

    pub(crate) fn mid_energy_phases(&self, s: usize) -> &[C64] {
        let d = self.dim();
        &self.mid_phases[s * d..(s + 1) * d]
    }

    /// `out = B^dag y = conj(z) * V (conj(ephase) * y)`.
    pub(crate) fn apply_b_dag(&self, ephase: &[C64], z: &[C64], y: &[C64], tmp: &mut [C64], out: &mut [C64]) {
        for ((t, e), v) in tmp.iter_mut().zip(ephase).zip(y) {
            *t = e.conj() * v;
        }
        mat_t_vec(&self.vt, tmp, out);
        for (o, zz) in out.iter_mut().zip(z) {
            *o *= zz.conj();
        }
    }

    /// `out = B x = ephase * V^T (z * x)`.
    pub(crate) fn apply_b(&self, ephase: &[C64], z: &[C64], x: &[C64], tmp: &mut [C64], out: &mut [C64]) {
        for ((t, zz), v) in tmp.iter_mut().zip(z).zip(x) {
            *t = zz * v;
        }
        mat_t_vec(&self.device.vectors, tmp, out);
        for (o, e) in out.iter_mut().zip(ephase) {
            *o *= e;
        }
    }

    /// `X = 2pi sum_q Omega_q (a_q + a_q^dag)` for one segment, bare coordinates.
    pub(crate) fn segment_generator(&self, schedule: &PulseSchedule, k: usize) -> DMatrix<f64> {
        let dim = self.dim();
        let mut x = DMatrix::zeros(dim, dim);
        for (q, op) in self.device.drive_ops.iter().enumerate() {
            let amp = schedule.amplitudes[q][k];
            if amp != 0.0 {
                x += op * (TAU * amp);
            }
        }
        x
    }

    pub(crate) fn segment_props(&self, schedule: &PulseSchedule) -> Vec<SegmentProp> {
        (0..schedule.n_segments)
            .map(|k| {
                let eig = SymmetricEigen::new(self.segment_generator(schedule, k));
                let x: Vec<f64> = eig.eigenvalues.iter().copied().collect();
                let expo = x.iter().map(|v| C64::from_polar(1.0, -v * self.dt)).collect();
                SegmentProp {
                    qt: eig.eigenvectors.transpose(),
                    q: eig.eigenvectors,
                    x,
                    expo,
                }
            })
            .collect()
    }

    /// Segment of each Trotter step (by its midpoint).
    pub(crate) fn step_segments(&self, schedule: &PulseSchedule) -> Vec<usize> {
        (0..self.n_trotter)
            .map(|s| schedule.segment_index(self.step_mid(s)))
            .collect()
    }

    pub(crate) fn to_dressed(&self, psi: &StateVector) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        mat_t_vec(&self.device.vectors, psi.amplitudes.as_slice(), &mut out);
        out
    }

    pub(crate) fn to_bare(&self, phi: &[C64]) -> StateVector {
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        mat_t_vec(&self.vt, phi, &mut out);
        StateVector {
            levels: self.device.levels(),
            n_transmons: self.device.n_transmons(),
            amplitudes: CVector::from_vec(out),
        }
    }

    /// Runs the forward pass in dressed coordinates, keeping what the adjoint needs.
    pub(crate) fn forward(&self, schedule: &PulseSchedule, phi0: &[C64]) -> Forward {
        let d = self.dim();
        let props = self.segment_props(schedule);
        let segs = self.step_segments(schedule);
        let n = self.n_trotter;
        let zero = C64::new(0.0, 0.0);
        let mut states = Vec::with_capacity((n + 1) * d);
        states.extend_from_slice(phi0);
        let mut w = vec![zero; n * d];
        let mut u = vec![zero; n * d];
        let mut m = vec![zero; n * d];
        let mut z = vec![zero; d];
        let mut tmp = vec![zero; d];
        let mut next = vec![zero; d];
        for s in 0..n {
            let p = &props[segs[s]];
            self.carrier_phases(schedule, self.step_mid(s), &mut z);
            let eph = self.mid_energy_phases(s);
            let (ws, us, ms) = (
                &mut w[s * d..(s + 1) * d],
                &mut u[s * d..(s + 1) * d],
                &mut m[s * d..(s + 1) * d],
            );
            self.apply_b_dag(eph, &z, &states[s * d..(s + 1) * d], &mut tmp, ws);
            mat_t_vec(&p.q, ws, us);
            for ((t, uu), e) in tmp.iter_mut().zip(us.iter()).zip(&p.expo) {
                *t = uu * e;
            }
            mat_t_vec(&p.qt, &tmp, ms);
            self.apply_b(eph, &z, ms, &mut tmp, &mut next);
            states.extend_from_slice(&next);
        }
        Forward {
            dim: d,
            states,
            w,
            u,
            m,
            segs,
            props,
        }
    }

    /// Final dressed-coordinate state only.
    pub(crate) fn propagate(&self, schedule: &PulseSchedule, phi0: &[C64]) -> Vec<C64> {
        let d = self.dim();
        let props = self.segment_props(schedule);
        let segs = self.step_segments(schedule);
        let zero = C64::new(0.0, 0.0);
        let mut phi = phi0.to_vec();
        let (mut z, mut tmp, mut a, mut b) = (vec![zero; d], vec![zero; d], vec![zero; d], vec![zero; d]);
        for (s, &k) in segs.iter().enumerate() {
            let p = &props[k];
            self.carrier_phases(schedule, self.step_mid(s), &mut z);
            let eph = self.mid_energy_phases(s);
            self.apply_b_dag(eph, &z, &phi, &mut tmp, &mut a);
            mat_t_vec(&p.q, &a, &mut b);
            for (x, e) in b.iter_mut().zip(&p.expo) {
                *x *= e;
            }
            mat_t_vec(&p.qt, &b, &mut a);
            self.apply_b(eph, &z, &a, &mut tmp, &mut phi);
        }
        phi
    }

    /// Applies `S_s^dag` (the exact inverse of step `s`) in place.
    pub(crate) fn step_inverse(&self, schedule: &PulseSchedule, props: &[SegmentProp], seg: usize, s: usize, phi: &mut [C64]) {
        let d = self.dim();
        let zero = C64::new(0.0, 0.0);
        let (mut z, mut tmp, mut a, mut b) = (vec![zero; d], vec![zero; d], vec![zero; d], vec![zero; d]);
        let p = &props[seg];
        self.carrier_phases(schedule, self.step_mid(s), &mut z);
        let eph = self.mid_energy_phases(s);
        self.apply_b_dag(eph, &z, phi, &mut tmp, &mut a);
        mat_t_vec(&p.q, &a, &mut b);
        for (x, e) in b.iter_mut().zip(&p.expo) {
            *x *= e.conj();
        }
        mat_t_vec(&p.qt, &b, &mut a);
        self.apply_b(eph, &z, &a, &mut tmp, phi);
    }

    /// `H_{I,C}(t)` in dressed coordinates.
    pub(crate) fn control_hamiltonian_dressed(&self, schedule: &PulseSchedule, t: f64) -> CMatrix {
        let k = schedule.segment_index(t.clamp(0.0, schedule.duration));
        let x = self.segment_generator(schedule, k);
        self.conjugated(&x, schedule, t)
    }

    /// `B(t) A B(t)^dag` for a bare-coordinate operator `A`.
    pub(crate) fn conjugated(&self, a: &DMatrix<f64>, schedule: &PulseSchedule, t: f64) -> CMatrix {
        let d = self.dim();
        let mut z = vec![C64::new(0.0, 0.0); d];
        let mut eph = vec![C64::new(0.0, 0.0); d];
        self.carrier_phases(schedule, t, &mut z);
        self.energy_phases(t, &mut eph);
        let b = CMatrix::from_fn(d, d, |r, c| eph[r] * self.device.vectors[(c, r)] * z[c]);
        let ac = a.map(|v| C64::new(v, 0.0));
        &b * ac * b.adjoint()
    }
}

/// Forward trajectory plus per-step intermediates (all flattened, `dim` stride).
pub(crate) struct Forward {
    pub dim: usize,
    /// Dressed state at every grid time, `(n_trotter + 1) x dim`.
    pub states: Vec<C64>,
    /// `B_s^dag phi_s` per step.
    pub w: Vec<C64>,
    /// `Q^T w`.
    pub u: Vec<C64>,
    /// `M w`.
    pub m: Vec<C64>,
    pub segs: Vec<usize>,
    pub props: Vec<SegmentProp>,
}

impl Forward {
    pub fn state(&self, j: usize) -> &[C64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn last(&self) -> &[C64] {
        let n = self.states.len() / self.dim;
        self.state(n - 1)
    }
}

/// `H_{I,C}(t) = e^{iH_D t} H_C(t) e^{-iH_D t}` in bare coordinates, rad/ns.
pub fn control_hamiltonian_at(device: &Device, schedule: &PulseSchedule, t: f64) -> Result<CMatrix> {
    if !(0.0..=schedule.duration).contains(&t) {
        return Err(Error::TimeOutOfRange {
            t,
            duration: schedule.duration,
        });
    }
    let ev = Evolver::new(Arc::new(device.clone()), schedule.duration, 1)?;
    ev.check_schedule(schedule)?;
    let h = ev.control_hamiltonian_dressed(schedule, t);
    let v = device.vectors.map(|x| C64::new(x, 0.0));
    Ok(&v * h * v.transpose())
}

/// Population time series sampled on the Trotter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTrace {
    pub times: Vec<f64>,
    pub labels: Vec<BasisLabel>,
    /// `populations[i][j]`: label `i` at time `j`.
    pub populations: Vec<Vec<f64>>,
    /// Total computational-subspace population at each time.
    pub computational: Vec<f64>,
    /// Sum over the full basis at each time.
    pub total: Vec<f64>,
    pub frame: FrameChoice,
}

impl EvolutionTrace {
    pub fn series(&self, label: &BasisLabel) -> Option<&[f64]> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.populations[i].as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ns");
        for l in &self.labels {
            write!(out, ",p{l}").unwrap();
        }
        out.push_str(",p_computational\n");
        for (j, t) in self.times.iter().enumerate() {
            write!(out, "{t}").unwrap();
            for p in &self.populations {
                write!(out, ",{}", p[j]).unwrap();
            }
            writeln!(out, ",{}", self.computational[j]).unwrap();
        }
        out
    }
}

pub(crate) fn check_normalized(psi: &StateVector) -> Result<()> {
    let n = psi.norm();
    if (n - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::Input(format!("initial state has norm {n}, expected 1")));
    }
    Ok(())
}

/// Trotterized evolution from `psi0` (bare coordinates, interaction picture).
///
/// Returns the final state and the populations of `record` (in `frame`) on
/// every grid time.
pub fn evolve(
    device: &Device,
    schedule: &PulseSchedule,
    psi0: &StateVector,
    n_trotter: usize,
    record: &[BasisLabel],
    frame: FrameChoice,
) -> Result<(StateVector, EvolutionTrace)> {
    check_normalized(psi0)?;
    if psi0.dim() != device.dim() {
        return Err(Error::Dimension(format!(
            "state dimension {} differs from device dimension {}",
            psi0.dim(),
            device.dim()
        )));
    }
    let indices = record
        .iter()
        .map(|l| l.checked_index(device.levels(), device.n_transmons()))
        .collect::<Result<Vec<_>>>()?;
    let ev = Evolver::new(Arc::new(device.clone()), schedule.duration, n_trotter)?;
    ev.check_schedule(schedule)?;
    let fwd = ev.forward(schedule, &ev.to_dressed(psi0));
    let times = ev.grid();
    let comp: Vec<usize> = device
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_computational())
        .map(|(i, _)| i)
        .collect();
    let mut populations = vec![Vec::with_capacity(times.len()); record.len()];
    let mut computational = Vec::with_capacity(times.len());
    let mut total = Vec::with_capacity(times.len());
    for j in 0..times.len() {
        let pops = match frame {
            FrameChoice::Dressed => fwd.state(j).iter().map(|a| a.norm_sqr()).collect::<Vec<_>>(),
            FrameChoice::Bare => ev.to_bare(fwd.state(j)).amplitudes.iter().map(|a| a.norm_sqr()).collect(),
        };
        for (series, &i) in populations.iter_mut().zip(&indices) {
            series.push(pops[i]);
        }
        computational.push(comp.iter().map(|&i| pops[i]).sum());
        total.push(pops.iter().sum());
    }
    let final_state = ev.to_bare(fwd.last());
    Ok((
        final_state,
        EvolutionTrace {
            times,
            labels: record.to_vec(),
            populations,
            computational,
            total,
            frame,
        },
    ))
}

/// `P psi / |P psi|` (full-space coordinates) and the leaked weight `1 - |P psi|^2`.
pub fn project_and_normalize(
    device: &Device,
    psi: &StateVector,
    frame: FrameChoice,
) -> Result<(StateVector, f64)> {
    let p = device.projector(frame);
    let projected = &p * &psi.amplitudes;
    let weight = projected.norm_squared();
    if weight < SINGULAR_PROJECTION {
        return Err(Error::SingularProjection { weight });
    }
    let leakage = (1.0 - weight / psi.amplitudes.norm_squared()).clamp(0.0, 1.0);
    Ok((
        StateVector {
            levels: psi.levels,
            n_transmons: psi.n_transmons,
            amplitudes: projected.unscale(weight.sqrt()),
        },
        leakage,
    ))
}

/// Amplitudes of the computational labels (qubit index order) in the chosen frame.
pub fn computational_amplitudes(device: &Device, psi: &StateVector, frame: FrameChoice) -> CVector {
    let comp = crate::model::computational_indices(device.levels(), device.n_transmons());
    CVector::from_iterator(
        comp.len(),
        comp.iter().map(|&i| match frame {
            FrameChoice::Bare => psi.amplitudes[i],
            FrameChoice::Dressed => device
                .vectors
                .column(i)
                .iter()
                .zip(psi.amplitudes.iter())
                .map(|(v, a)| a * *v)
                .sum(),
        }),
    )
}
