//! A fixed optimization problem: device, molecular observable, initial state
//! and pulse template, evaluated over packed parameter vectors.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adjoint::{adjoint_sweep, switching_from_dressed, SwitchingTrace};
use crate::error::{Error, Result};
use crate::model::{BasisLabel, Device, FrameChoice, PauliHamiltonian, StateVector, C64};
use crate::objective::{DressedObservable, EmbeddedHamiltonian, EnergyReport, ObjectiveConfig};
use crate::propagator::{evolve, EvolutionTrace, Evolver, DEFAULT_TROTTER_STEPS};
use crate::pulse::{random_schedule, unpack_values, ParameterVector, PulseBounds, PulseSchedule, DEFAULT_SEGMENTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemConfig {
    /// ns.
    pub duration: f64,
    pub n_segments: usize,
    pub bounds: PulseBounds,
    pub n_trotter: usize,
    pub frame: FrameChoice,
    pub objective: ObjectiveConfig,
    /// Initial product state, labeled in `frame`.
    pub initial: BasisLabel,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            duration: 20.0,
            n_segments: DEFAULT_SEGMENTS,
            bounds: PulseBounds::default(),
            n_trotter: DEFAULT_TROTTER_STEPS,
            frame: FrameChoice::Dressed,
            objective: ObjectiveConfig::default(),
            initial: BasisLabel(vec![0, 1]),
        }
    }
}

#[derive(Clone)]
pub struct Problem {
    config: ProblemConfig,
    evolver: Evolver,
    hamiltonian: Arc<EmbeddedHamiltonian>,
    observable: Arc<DressedObservable>,
    psi0: StateVector,
    phi0: Vec<C64>,
    template: PulseSchedule,
}

impl Problem {
    pub fn new(device: Arc<Device>, h: &PauliHamiltonian, config: ProblemConfig) -> Result<Self> {
        config.objective.validate()?;
        if config.n_segments == 0 {
            return Err(Error::Input("n_segments must be at least 1".into()));
        }
        if !(config.bounds.amp_bound >= 0.0 && config.bounds.detuning_bound >= 0.0) {
            return Err(Error::Input("pulse bounds must be non-negative".into()));
        }
        let hamiltonian = EmbeddedHamiltonian::new(&device, h, config.frame)?;
        let observable = DressedObservable::new(&device, &hamiltonian);
        let psi0 = device.label_state(&config.initial, config.frame)?;
        let template = PulseSchedule::zero(config.duration, config.n_segments, &device.spec.omega, config.bounds);
        let evolver = Evolver::new(device, config.duration, config.n_trotter)?;
        let phi0 = evolver.to_dressed(&psi0);
        Ok(Problem {
            config,
            evolver,
            hamiltonian: Arc::new(hamiltonian),
            observable: Arc::new(observable),
            psi0,
            phi0,
            template,
        })
    }

    /// Same problem at another duration (everything except the time grid is shared).
    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        let mut p = self.clone();
        p.config.duration = duration;
        p.evolver = Evolver::new(self.evolver.device.clone(), duration, self.config.n_trotter)?;
        p.template.duration = duration;
        Ok(p)
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.evolver.device
    }

    pub fn device_arc(&self) -> Arc<Device> {
        self.evolver.device.clone()
    }

    pub(crate) fn evolver(&self) -> &Evolver {
        &self.evolver
    }

    pub fn hamiltonian(&self) -> &EmbeddedHamiltonian {
        &self.hamiltonian
    }

    pub fn initial_state(&self) -> &StateVector {
        &self.psi0
    }

    pub fn duration(&self) -> f64 {
        self.config.duration
    }

    /// Exact ground energy of the molecular Hamiltonian, Hartree.
    pub fn reference_energy(&self) -> f64 {
        self.hamiltonian.ground_energy
    }

    pub fn template(&self) -> &PulseSchedule {
        &self.template
    }

    pub fn parameters(&self, schedule: &PulseSchedule) -> ParameterVector {
        ParameterVector::pack(schedule, &self.device().spec.omega)
    }

    pub fn schedule(&self, x: &[f64]) -> PulseSchedule {
        unpack_values(x, &self.template)
    }

    pub fn random_start(&self, seed: u64) -> ParameterVector {
        let s = random_schedule(
            seed,
            self.config.bounds,
            self.config.n_segments,
            self.config.duration,
            &self.device().spec.omega,
        );
        self.parameters(&s)
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        let n = self.template.n_transmons() * (self.config.n_segments + 1);
        if x.len() != n {
            return Err(Error::Dimension(format!("expected {n} parameters, got {}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Self::non_finite(x));
        }
        Ok(())
    }

    fn non_finite(x: &[f64]) -> Error {
        Error::NonFinite { point: x.to_vec() }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<EnergyReport> {
        self.check_len(x)?;
        let s = self.schedule(x);
        let phi = self.evolver.propagate(&s, &self.phi0);
        let (report, _) = self.observable.evaluate(&phi, &self.config.objective)?;
        if !report.total_cost.is_finite() {
            return Err(Self::non_finite(x));
        }
        Ok(report)
    }

    /// Cost report and the exact gradient of `total_cost` over packed parameters.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(EnergyReport, Vec<f64>)> {
        self.check_len(x)?;
        let s = self.schedule(x);
        let fwd = self.evolver.forward(&s, &self.phi0);
        let (report, lambda) = self.observable.evaluate(fwd.last(), &self.config.objective)?;
        let (grad, _) = adjoint_sweep(&self.evolver, &s, &fwd, &lambda, false);
        if !report.total_cost.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Self::non_finite(x));
        }
        Ok((report, grad))
    }

    /// Validates a schedule against the device and this problem's grid.
    pub fn check_schedule(&self, schedule: &PulseSchedule) -> Result<()> {
        schedule.validate(&self.device().spec.omega)?;
        if (schedule.duration - self.config.duration).abs() > 1e-12 * self.config.duration {
            return Err(Error::Input(format!(
                "schedule duration {} ns differs from problem duration {} ns",
                schedule.duration, self.config.duration
            )));
        }
        self.evolver.check_schedule(schedule)
    }

    pub fn final_state(&self, schedule: &PulseSchedule) -> Result<StateVector> {
        self.check_schedule(schedule)?;
        Ok(self.evolver.to_bare(&self.evolver.propagate(schedule, &self.phi0)))
    }

    /// Final state and population traces of `record`, in the problem's frame.
    pub fn trace(&self, schedule: &PulseSchedule, record: &[BasisLabel]) -> Result<(StateVector, EvolutionTrace)> {
        self.check_schedule(schedule)?;
        evolve(
            self.device(),
            schedule,
            &self.psi0,
            self.config.n_trotter,
            record,
            self.config.frame,
        )
    }

    pub fn report(&self, schedule: &PulseSchedule) -> Result<EnergyReport> {
        self.check_schedule(schedule)?;
        let phi = self.evolver.propagate(schedule, &self.phi0);
        Ok(self.observable.evaluate(&phi, &self.config.objective)?.0)
    }

    /// Switching function along the evolution, with the terminal costate of `cfg`.
    pub fn switching_trace(&self, schedule: &PulseSchedule, cfg: &ObjectiveConfig) -> Result<SwitchingTrace> {
        self.check_schedule(schedule)?;
        cfg.validate()?;
        let fwd = self.evolver.forward(schedule, &self.phi0);
        let (_, lambda) = self.observable.evaluate(fwd.last(), cfg)?;
        let (_, costates) = adjoint_sweep(&self.evolver, schedule, &fwd, &lambda, true);
        Ok(switching_from_dressed(&self.evolver, schedule, &fwd.states, &costates.expect("requested")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Coupling, DeviceSpec};

    pub(crate) fn h2() -> PauliHamiltonian {
        PauliHamiltonian::from_terms([
            ("II", -0.656859887080193),
            ("IZ", 0.129101312887111),
            ("ZI", -0.129101312887111),
            ("ZZ", -0.004188958260028),
            ("XX", 0.229535936059702),
        ])
        .unwrap()
    }

    fn device(levels: usize) -> Arc<Device> {
        Arc::new(
            Device::new(
                DeviceSpec::new(
                    vec![4.8080, 4.8333],
                    vec![0.3102, 0.2916],
                    vec![Coupling { p: 0, q: 1, g: 0.01831 }],
                    levels,
                )
                .unwrap(),
            )
            .unwrap(),
        )
    }

    fn small(levels: usize) -> Problem {
        let cfg = ProblemConfig {
            duration: 8.0,
            n_segments: 10,
            n_trotter: 100,
            ..Default::default()
        };
        Problem::new(device(levels), &h2(), cfg).unwrap()
    }

    #[test]
    fn zero_pulse_gives_hartree_fock_energy() {
        let p = small(3);
        let x = p.parameters(p.template()).values;
        let r = p.evaluate(&x).unwrap();
        assert!((r.energy + 0.9108735545943865).abs() < 1e-12);
        assert_eq!(r.leakage_fraction, 0.0);
    }

    #[test]
    fn problem_gradient_matches_public_gradient() {
        let p = small(3);
        let x = p.random_start(5);
        let (r, g) = p.value_and_gradient(&x.values).unwrap();
        let s = p.schedule(&x.values);
        let g2 = crate::adjoint::gradient(p.device(), &s, p.initial_state(), p.hamiltonian(), &p.config().objective, 100)
            .unwrap();
        for (a, b) in g.iter().zip(&g2.values) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(r, p.evaluate(&x.values).unwrap());
        assert_eq!(r, p.report(&s).unwrap());
    }

    #[test]
    fn with_duration_matches_fresh_problem() {
        let p = small(2).with_duration(6.0).unwrap();
        let fresh = Problem::new(
            device(2),
            &h2(),
            ProblemConfig {
                duration: 6.0,
                n_segments: 10,
                n_trotter: 100,
                ..Default::default()
            },
        )
        .unwrap();
        let x = fresh.random_start(1).values;
        assert_eq!(p.value_and_gradient(&x).unwrap(), fresh.value_and_gradient(&x).unwrap());
    }

    #[test]
    fn rejects_wrong_parameter_count_and_nan() {
        let p = small(2);
        assert!(matches!(p.evaluate(&[0.0; 3]), Err(Error::Dimension(_))));
        let mut x = p.random_start(2).values;
        x[0] = f64::NAN;
        assert!(matches!(p.value_and_gradient(&x), Err(Error::NonFinite { .. })));
    }
}
