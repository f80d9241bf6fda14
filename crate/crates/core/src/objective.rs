//! Projected molecular energy with an optional leakage penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CMatrix, Device, FrameChoice, PauliHamiltonian, StateVector, C64};
use crate::propagator::SINGULAR_PROJECTION;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    /// Hartree per percentage point of leakage above the threshold.
    pub penalty_rate: f64,
    /// Leakage fraction tolerated without penalty.
    pub leakage_threshold: f64,
    /// Divide by the computational weight (`<psi|P|psi>`).
    pub normalize: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            penalty_rate: 0.0,
            leakage_threshold: 1.0,
            normalize: true,
        }
    }
}

impl ObjectiveConfig {
    /// The literal terminal condition `lambda(T) = H_mol psi(T)` with no penalty.
    pub fn unnormalized() -> Self {
        ObjectiveConfig {
            normalize: false,
            ..Default::default()
        }
    }

    pub fn with_penalty(penalty_rate: f64, leakage_threshold: f64) -> Self {
        ObjectiveConfig {
            penalty_rate,
            leakage_threshold,
            normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_rate >= 0.0) {
            return Err(Error::Input(format!("penalty_rate must be >= 0, got {}", self.penalty_rate)));
        }
        if !(0.0..=1.0).contains(&self.leakage_threshold) {
            return Err(Error::Input(format!(
                "leakage_threshold must lie in [0, 1], got {}",
                self.leakage_threshold
            )));
        }
        Ok(())
    }

    /// Hinge penalty on percentage points of leakage above the threshold.
    pub fn penalty(&self, leakage: f64) -> f64 {
        self.penalty_rate * (100.0 * (leakage - self.leakage_threshold)).max(0.0)
    }

    /// `d penalty / d leakage`.
    pub fn penalty_slope(&self, leakage: f64) -> f64 {
        if leakage > self.leakage_threshold {
            100.0 * self.penalty_rate
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Hartree.
    pub energy: f64,
    pub leakage_fraction: f64,
    /// Hartree.
    pub penalty: f64,
    /// `energy + penalty`, Hartree.
    pub total_cost: f64,
}

/// Molecular Hamiltonian embedded in the qudit space together with the
/// computational projector of the same frame (both bare coordinates).
#[derive(Clone, Debug)]
pub struct EmbeddedHamiltonian {
    pub frame: FrameChoice,
    pub matrix: CMatrix,
    pub projector: CMatrix,
    /// Exact ground energy of the qubit Hamiltonian, Hartree.
    pub ground_energy: f64,
}

impl EmbeddedHamiltonian {
    pub fn new(device: &Device, h: &PauliHamiltonian, frame: FrameChoice) -> Result<Self> {
        Ok(EmbeddedHamiltonian {
            frame,
            matrix: device.embed(h, frame)?,
            projector: device.projector(frame),
            ground_energy: h.ground_energy(),
        })
    }
}

/// Energy and `d cost / d psi^*` from `H psi` and `P psi`.
pub(crate) fn assemble(
    psi: &[C64],
    h_psi: &[C64],
    p_psi: &[C64],
    cfg: &ObjectiveConfig,
) -> Result<(EnergyReport, Vec<C64>)> {
    let dot = |a: &[C64], b: &[C64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum() };
    let norm2 = dot(psi, psi);
    let expect = dot(psi, h_psi);
    let weight = dot(psi, p_psi);
    let leakage = (1.0 - weight / norm2).clamp(0.0, 1.0);
    let (energy, mut costate) = if cfg.normalize {
        if weight < SINGULAR_PROJECTION {
            return Err(Error::SingularProjection { weight });
        }
        let e = expect / weight;
        let lam = h_psi
            .iter()
            .zip(p_psi)
            .map(|(h, p)| (h - p * e) / weight)
            .collect();
        (e, lam)
    } else {
        (expect, h_psi.to_vec())
    };
    let slope = cfg.penalty_slope(leakage);
    if slope != 0.0 {
        for (l, p) in costate.iter_mut().zip(p_psi) {
            *l -= p * slope;
        }
    }
    let penalty = cfg.penalty(leakage);
    Ok((
        EnergyReport {
            energy,
            leakage_fraction: leakage,
            penalty,
            total_cost: energy + penalty,
        },
        costate,
    ))
}

/// Cost of a final state (normalized or not, plus penalty).
pub fn energy(psi_final: &StateVector, h: &EmbeddedHamiltonian, cfg: &ObjectiveConfig) -> Result<EnergyReport> {
    cfg.validate()?;
    let (report, _) = evaluate_bare(psi_final, h, cfg)?;
    Ok(report)
}

pub(crate) fn evaluate_bare(
    psi: &StateVector,
    h: &EmbeddedHamiltonian,
    cfg: &ObjectiveConfig,
) -> Result<(EnergyReport, Vec<C64>)> {
    if psi.dim() != h.matrix.nrows() {
        return Err(Error::Dimension(format!(
            "state dimension {} differs from Hamiltonian dimension {}",
            psi.dim(),
            h.matrix.nrows()
        )));
    }
    let hp = &h.matrix * &psi.amplitudes;
    let pp = &h.projector * &psi.amplitudes;
    assemble(psi.amplitudes.as_slice(), hp.as_slice(), pp.as_slice(), cfg)
}

/// Observable transformed to dressed coordinates for the optimization loop.
#[derive(Clone)]
pub(crate) struct DressedObservable {
    dim: usize,
    h: Vec<C64>,
    p: Vec<C64>,
}

impl DressedObservable {
    pub fn new(device: &Device, h: &EmbeddedHamiltonian) -> Self {
        let v = device.vectors.map(|x| C64::new(x, 0.0));
        let hd = v.transpose() * &h.matrix * &v;
        let pd = v.transpose() * &h.projector * &v;
        // Row-major for contiguous row dots.
        DressedObservable {
            dim: device.dim(),
            h: hd.transpose().as_slice().to_vec(),
            p: pd.transpose().as_slice().to_vec(),
        }
    }

    pub fn evaluate(&self, phi: &[C64], cfg: &ObjectiveConfig) -> Result<(EnergyReport, Vec<C64>)> {
        let d = self.dim;
        let matvec = |m: &[C64]| -> Vec<C64> {
            (0..d)
                .map(|r| m[r * d..(r + 1) * d].iter().zip(phi).map(|(a, b)| a * b).sum())
                .collect()
        };
        assemble(phi, &matvec(&self.h), &matvec(&self.p), cfg)
    }
}
