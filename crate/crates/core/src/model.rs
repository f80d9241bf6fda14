//! Device description, qudit operator algebra and the molecular Hamiltonian.
//!
//! Basis convention: product number states of `n_transmons` qudits with
//! `levels` levels each, ordered little-endian (transmon 0 varies fastest), so
//! that `index = sum_q n_q * levels^q`. Labels are written with transmon 0
//! first: the label `"01"` is transmon 0 in `|0>` and transmon 1 in `|1>`.
//! Pauli words follow the same rule, character `j` acts on transmon `j`.
//!
//! Frequencies enter as ordinary frequencies in GHz, times in ns. Every
//! Hamiltonian built here carries the `2*pi` factor and is in rad/ns.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Largest Hilbert-space dimension accepted unless a caller asks otherwise.
pub const DEFAULT_MAX_DIMENSION: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub p: usize,
    pub q: usize,
    /// Static exchange coupling, GHz.
    pub g: f64,
}

/// Transmon parameters: resonance frequencies, anharmonicities and static
/// couplings, all in GHz (the `omega / 2pi` convention).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub n_transmons: usize,
    pub levels: usize,
    pub omega: Vec<f64>,
    pub delta: Vec<f64>,
    #[serde(default)]
    pub couplings: Vec<Coupling>,
}

impl DeviceSpec {
    pub fn new(
        omega: Vec<f64>,
        delta: Vec<f64>,
        couplings: Vec<Coupling>,
        levels: usize,
    ) -> Result<Self> {
        let spec = DeviceSpec {
            n_transmons: omega.len(),
            levels,
            omega,
            delta,
            couplings,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDevice(m));
        if self.n_transmons == 0 {
            return bad("n_transmons must be positive".into());
        }
        if self.levels < 2 {
            return bad(format!("levels must be at least 2, got {}", self.levels));
        }
        if self.omega.len() != self.n_transmons || self.delta.len() != self.n_transmons {
            return bad(format!(
                "expected {} frequencies and anharmonicities, got {} and {}",
                self.n_transmons,
                self.omega.len(),
                self.delta.len()
            ));
        }
        if self
            .omega
            .iter()
            .chain(&self.delta)
            .any(|v| !v.is_finite())
        {
            return bad("frequencies must be finite".into());
        }
        let mut seen = Vec::new();
        for c in &self.couplings {
            if c.p >= c.q || c.q >= self.n_transmons {
                return bad(format!(
                    "coupling ({}, {}) must satisfy p < q < {}",
                    c.p, c.q, self.n_transmons
                ));
            }
            if !c.g.is_finite() {
                return bad(format!("coupling ({}, {}) is not finite", c.p, c.q));
            }
            if seen.contains(&(c.p, c.q)) {
                return bad(format!("coupling ({}, {}) listed twice", c.p, c.q));
            }
            seen.push((c.p, c.q));
        }
        Ok(())
    }

    /// `levels^n_transmons`, or `None` on overflow.
    pub fn dimension(&self) -> Option<usize> {
        self.levels.checked_pow(self.n_transmons as u32)
    }

    pub fn checked_dimension(&self, cap: usize) -> Result<usize> {
        match self.dimension() {
            Some(dim) if dim <= cap => Ok(dim),
            Some(dim) => Err(Error::Capacity { dim, cap }),
            None => Err(Error::Capacity {
                dim: usize::MAX,
                cap,
            }),
        }
    }

    /// Same device truncated to a different number of levels.
    pub fn with_levels(&self, levels: usize) -> Result<Self> {
        let spec = DeviceSpec {
            levels,
            ..self.clone()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        let spec: DeviceSpec = toml::from_str(text).map_err(|e| e.to_string())?;
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: DeviceSpec = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0);
            Error::parse(path, line, e.message().to_string())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("device spec serializes")
    }
}

/// Product-basis label, one level per transmon (transmon 0 first).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BasisLabel(pub Vec<usize>);

impl BasisLabel {
    pub fn from_index(mut index: usize, levels: usize, n_transmons: usize) -> Self {
        let mut digits = Vec::with_capacity(n_transmons);
        for _ in 0..n_transmons {
            digits.push(index % levels);
            index /= levels;
        }
        BasisLabel(digits)
    }

    pub fn index(&self, levels: usize) -> usize {
        self.0.iter().rev().fold(0, |acc, &d| acc * levels + d)
    }

    /// Checks the label against a device truncation and returns its index.
    pub fn checked_index(&self, levels: usize, n_transmons: usize) -> Result<usize> {
        if self.0.len() != n_transmons || self.0.iter().any(|&d| d >= levels) {
            return Err(Error::Input(format!(
                "label |{self}> is not a basis state of {n_transmons} transmons with {levels} levels"
            )));
        }
        Ok(self.index(levels))
    }

    pub fn is_computational(&self) -> bool {
        self.0.iter().all(|&d| d < 2)
    }
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.0 {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl FromStr for BasisLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches('|').trim_end_matches('>');
        let s = s.strip_prefix('p').unwrap_or(s);
        if s.is_empty() {
            return Err(Error::Input("empty basis label".into()));
        }
        s.chars()
            .map(|c| {
                c.to_digit(10)
                    .map(|d| d as usize)
                    .ok_or_else(|| Error::Input(format!("bad basis label '{s}'")))
            })
            .collect::<Result<Vec<_>>>()
            .map(BasisLabel)
    }
}

impl TryFrom<String> for BasisLabel {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BasisLabel> for String {
    fn from(l: BasisLabel) -> String {
        l.to_string()
    }
}

/// Which states span the computational subspace.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameChoice {
    Bare,
    #[default]
    Dressed,
}

impl FromStr for FrameChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bare" => Ok(FrameChoice::Bare),
            "dressed" => Ok(FrameChoice::Dressed),
            other => Err(Error::Input(format!("unknown frame '{other}'"))),
        }
    }
}

impl fmt::Display for FrameChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameChoice::Bare => "bare",
            FrameChoice::Dressed => "dressed",
        })
    }
}

/// Amplitudes over the qudit product basis (interaction picture, bare
/// coordinates). Also used for costates, which need not be normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub levels: usize,
    pub n_transmons: usize,
    pub amplitudes: CVector,
}

impl StateVector {
    pub fn new(levels: usize, n_transmons: usize, amplitudes: CVector) -> Result<Self> {
        let dim = levels.pow(n_transmons as u32);
        if amplitudes.len() != dim {
            return Err(Error::Dimension(format!(
                "state has {} amplitudes, expected {dim}",
                amplitudes.len()
            )));
        }
        Ok(StateVector {
            levels,
            n_transmons,
            amplitudes,
        })
    }

    pub fn basis(levels: usize, n_transmons: usize, label: &BasisLabel) -> Result<Self> {
        let idx = label.checked_index(levels, n_transmons)?;
        let mut amplitudes = CVector::zeros(levels.pow(n_transmons as u32));
        amplitudes[idx] = C64::new(1.0, 0.0);
        Ok(StateVector {
            levels,
            n_transmons,
            amplitudes,
        })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn population(&self, label: &BasisLabel) -> Result<f64> {
        let idx = label.checked_index(self.levels, self.n_transmons)?;
        Ok(self.amplitudes[idx].norm_sqr())
    }

    pub fn fidelity(&self, other: &StateVector) -> f64 {
        let n = self.amplitudes.norm_squared() * other.amplitudes.norm_squared();
        self.inner(other).norm_sqr() / n
    }
}

/// Annihilation operator of transmon `q` on the full product space.
pub fn annihilation(levels: usize, n_transmons: usize, q: usize) -> DMatrix<f64> {
    let dim = levels.pow(n_transmons as u32);
    let stride = levels.pow(q as u32);
    let mut a = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        let n = (col / stride) % levels;
        if n > 0 {
            a[(col - stride, col)] = (n as f64).sqrt();
        }
    }
    a
}

/// Occupation of transmon `q` for every basis index.
pub fn occupations(levels: usize, n_transmons: usize, q: usize) -> Vec<f64> {
    let stride = levels.pow(q as u32);
    (0..levels.pow(n_transmons as u32))
        .map(|i| ((i / stride) % levels) as f64)
        .collect()
}

fn device_hamiltonian_real(spec: &DeviceSpec, cap: usize) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let dim = spec.checked_dimension(cap)?;
    let (l, n) = (spec.levels, spec.n_transmons);
    let mut h = DMatrix::zeros(dim, dim);
    for q in 0..n {
        for (i, &nq) in occupations(l, n, q).iter().enumerate() {
            h[(i, i)] += TAU * (spec.omega[q] * nq - 0.5 * spec.delta[q] * nq * (nq - 1.0));
        }
    }
    for c in &spec.couplings {
        let ap = annihilation(l, n, c.p);
        let aq = annihilation(l, n, c.q);
        let hop = ap.transpose() * &aq;
        h += (&hop + hop.transpose()) * (TAU * c.g);
    }
    Ok(h)
}

/// Static transmon Hamiltonian in rad/ns:
/// `2pi [ sum_q w_q n_q - d_q/2 a+a+aa + sum_<pq> g (a+_p a_q + a+_q a_p) ]`.
pub fn build_device_hamiltonian(spec: &DeviceSpec) -> Result<CMatrix> {
    build_device_hamiltonian_with_cap(spec, DEFAULT_MAX_DIMENSION)
}

pub fn build_device_hamiltonian_with_cap(spec: &DeviceSpec, cap: usize) -> Result<CMatrix> {
    Ok(device_hamiltonian_real(spec, cap)?.map(|x| C64::new(x, 0.0)))
}

/// Eigendecomposition of the static Hamiltonian with each bare label
/// attached to the dressed state it overlaps most.
#[derive(Clone, Debug)]
pub struct DressedFrame {
    /// Ascending eigenvalues, GHz.
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors in bare coordinates, same order as `eigenvalues`.
    pub eigenvectors: CMatrix,
    /// `bare_to_dressed[b]` is the eigenvector column assigned to bare index `b`.
    pub bare_to_dressed: Vec<usize>,
    levels: usize,
    n_transmons: usize,
}

/// Overlap ties closer than this are reported as degenerate.
const TIE_TOLERANCE: f64 = 1e-9;

impl DressedFrame {
    /// Dressed eigenvector assigned to a bare label.
    pub fn state(&self, label: &BasisLabel) -> Result<StateVector> {
        let b = label.checked_index(self.levels, self.n_transmons)?;
        let col = self.eigenvectors.column(self.bare_to_dressed[b]).into_owned();
        StateVector::new(self.levels, self.n_transmons, col)
    }

    /// Dressed energy (GHz) carried by a bare label.
    pub fn energy(&self, label: &BasisLabel) -> Result<f64> {
        let b = label.checked_index(self.levels, self.n_transmons)?;
        Ok(self.eigenvalues[self.bare_to_dressed[b]])
    }

    /// Largest overlap `|<b|dressed(b)>|^2` over bare labels' own states, minimised over labels.
    pub fn min_assigned_overlap(&self) -> f64 {
        self.bare_to_dressed
            .iter()
            .enumerate()
            .map(|(b, &d)| self.eigenvectors[(b, d)].norm_sqr())
            .fold(f64::INFINITY, f64::min)
    }

    /// Eigenvalues (rad/ns) and real eigenvector matrix reordered so that
    /// column `b` belongs to bare label `b`.
    pub(crate) fn label_ordered(&self) -> (Vec<f64>, DMatrix<f64>) {
        let dim = self.bare_to_dressed.len();
        let energies = self
            .bare_to_dressed
            .iter()
            .map(|&d| TAU * self.eigenvalues[d])
            .collect();
        let v = DMatrix::from_fn(dim, dim, |i, b| self.eigenvectors[(i, self.bare_to_dressed[b])].re);
        (energies, v)
    }
}

pub fn dress(spec: &DeviceSpec) -> Result<DressedFrame> {
    dress_with_cap(spec, DEFAULT_MAX_DIMENSION)
}

pub fn dress_with_cap(spec: &DeviceSpec, cap: usize) -> Result<DressedFrame> {
    let h = device_hamiltonian_real(spec, cap)?;
    let dim = h.nrows();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k] / TAU).collect();
    let mut vectors = DMatrix::from_fn(dim, dim, |i, j| eig.eigenvectors[(i, order[j])]);

    let label = |b| BasisLabel::from_index(b, spec.levels, spec.n_transmons).to_string();
    let mut bare_to_dressed = vec![usize::MAX; dim];
    let mut owner = vec![usize::MAX; dim];
    for b in 0..dim {
        let mut best = 0;
        let mut best_overlap = -1.0;
        for d in 0..dim {
            let ov = vectors[(b, d)].powi(2);
            if ov > best_overlap {
                best_overlap = ov;
                best = d;
            }
        }
        for d in 0..dim {
            if d != best && (vectors[(b, d)].powi(2) - best_overlap).abs() < TIE_TOLERANCE {
                // Name the other bare label that competes for the tied dressed state.
                let rival = (0..dim)
                    .filter(|&r| r != b)
                    .max_by(|&x, &y| vectors[(x, d)].abs().total_cmp(&vectors[(y, d)].abs()))
                    .unwrap_or(b);
                return Err(Error::Degeneracy {
                    first: label(b),
                    second: label(rival),
                });
            }
        }
        if owner[best] != usize::MAX {
            return Err(Error::Degeneracy {
                first: label(owner[best]),
                second: label(b),
            });
        }
        owner[best] = b;
        bare_to_dressed[b] = best;
    }
    // Fix the sign so that every dressed state has positive overlap with its bare label.
    for (b, &d) in bare_to_dressed.iter().enumerate() {
        if vectors[(b, d)] < 0.0 {
            vectors.column_mut(d).neg_mut();
        }
    }
    Ok(DressedFrame {
        eigenvalues,
        eigenvectors: vectors.map(|x| C64::new(x, 0.0)),
        bare_to_dressed,
        levels: spec.levels,
        n_transmons: spec.n_transmons,
    })
}

/// Weighted Pauli words on the computational subspace, Hartree.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PauliHamiltonian {
    pub terms: Vec<(String, f64)>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl PauliHamiltonian {
    /// Builds the operator, merging repeated words.
    pub fn from_terms<S: AsRef<str>>(terms: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let mut merged: Vec<(String, f64)> = Vec::new();
        let mut width = None;
        for (word, c) in terms {
            let word = word.as_ref().trim().to_ascii_uppercase();
            if word.is_empty() || !word.chars().all(|ch| matches!(ch, 'I' | 'X' | 'Y' | 'Z')) {
                return Err(Error::Input(format!("'{word}' is not a Pauli word")));
            }
            if !c.is_finite() {
                return Err(Error::Input(format!("coefficient of {word} is not finite")));
            }
            match width {
                None => width = Some(word.len()),
                Some(w) if w != word.len() => {
                    return Err(Error::Input(format!(
                        "Pauli word {word} has length {}, expected {w}",
                        word.len()
                    )))
                }
                _ => {}
            }
            match merged.iter_mut().find(|(w, _)| *w == word) {
                Some(entry) => entry.1 += c,
                None => merged.push((word, c)),
            }
        }
        Ok(PauliHamiltonian {
            terms: merged,
            metadata: BTreeMap::new(),
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.terms.first().map_or(0, |(w, _)| w.len())
    }

    /// Parses `WORD coefficient` lines; `# key: value` comment lines become metadata.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut terms = Vec::new();
        let mut metadata = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once(':') {
                    metadata.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let mut fields = line.split_whitespace();
            let (Some(word), Some(coef), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::parse(path, lineno + 1, "expected 'PAULI_WORD coefficient'"));
            };
            let coef: f64 = coef
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, format!("bad coefficient '{coef}'")))?;
            terms.push((word.to_string(), coef, lineno + 1));
        }
        let width = terms.first().map(|t| t.0.len());
        for (word, _, line) in &terms {
            if Some(word.len()) != width
                || !word.chars().all(|ch| matches!(ch.to_ascii_uppercase(), 'I' | 'X' | 'Y' | 'Z'))
            {
                return Err(Error::parse(path, *line, format!("bad Pauli word '{word}'")));
            }
        }
        if terms.is_empty() {
            return Err(Error::parse(path, 0, "no Hamiltonian terms"));
        }
        let mut h = Self::from_terms(terms.into_iter().map(|(w, c, _)| (w, c)))?;
        h.metadata = metadata;
        Ok(h)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Dense `2^n x 2^n` matrix, qubit 0 as the fastest index.
    pub fn to_matrix(&self) -> CMatrix {
        let n = self.n_qubits();
        let dim = 1usize << n;
        let mut m = CMatrix::zeros(dim, dim);
        for (word, c) in &self.terms {
            for col in 0..dim {
                let mut row = col;
                let mut phase = C64::new(*c, 0.0);
                for (q, ch) in word.chars().enumerate() {
                    let bit = (col >> q) & 1;
                    match ch {
                        'X' => row ^= 1 << q,
                        'Y' => {
                            row ^= 1 << q;
                            phase *= if bit == 0 { C64::i() } else { -C64::i() };
                        }
                        'Z' if bit == 1 => phase = -phase,
                        _ => {}
                    }
                }
                m[(row, col)] += phase;
            }
        }
        m
    }

    /// Smallest eigenvalue of the qubit matrix (the exact ground energy).
    pub fn ground_energy(&self) -> f64 {
        let eig = SymmetricEigen::new(self.to_matrix());
        eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Exact ground state over the computational labels (qubit index order).
    pub fn ground_state(&self) -> CVector {
        let eig = SymmetricEigen::new(self.to_matrix());
        let k = eig.eigenvalues.imin();
        eig.eigenvectors.column(k).into_owned()
    }
}

/// Full-space index of each computational (qubit) basis index.
pub fn computational_indices(levels: usize, n_transmons: usize) -> Vec<usize> {
    (0..1usize << n_transmons)
        .map(|c| (0..n_transmons).map(|q| ((c >> q) & 1) * levels.pow(q as u32)).sum())
        .collect()
}

/// Columns spanning the computational subspace in the chosen frame (bare coordinates).
pub(crate) fn computational_basis(
    spec: &DeviceSpec,
    frame: &DressedFrame,
    choice: FrameChoice,
) -> CMatrix {
    let dim = frame.bare_to_dressed.len();
    let comp = computational_indices(spec.levels, spec.n_transmons);
    CMatrix::from_fn(dim, comp.len(), |i, c| match choice {
        FrameChoice::Bare => {
            if i == comp[c] {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }
        FrameChoice::Dressed => frame.eigenvectors[(i, frame.bare_to_dressed[comp[c]])],
    })
}

/// `P^dag H_mol P` on the full qudit space, bare coordinates.
pub fn embed_molecular_hamiltonian(
    h: &PauliHamiltonian,
    spec: &DeviceSpec,
    frame_choice: FrameChoice,
) -> Result<CMatrix> {
    let frame = dress(spec)?;
    embed_in_frame(h, spec, &frame, frame_choice)
}

pub(crate) fn embed_in_frame(
    h: &PauliHamiltonian,
    spec: &DeviceSpec,
    frame: &DressedFrame,
    frame_choice: FrameChoice,
) -> Result<CMatrix> {
    if h.n_qubits() != spec.n_transmons {
        return Err(Error::Dimension(format!(
            "Hamiltonian acts on {} qubits but the device has {} transmons",
            h.n_qubits(),
            spec.n_transmons
        )));
    }
    let basis = computational_basis(spec, frame, frame_choice);
    Ok(&basis * h.to_matrix() * basis.adjoint())
}

/// Projector onto the computational subspace in the chosen frame, bare coordinates.
pub fn computational_projector(
    spec: &DeviceSpec,
    frame: &DressedFrame,
    frame_choice: FrameChoice,
) -> CMatrix {
    let basis = computational_basis(spec, frame, frame_choice);
    &basis * basis.adjoint()
}

/// A validated device with its static Hamiltonian and dressed frame cached.
#[derive(Clone, Debug)]
pub struct Device {
    pub spec: DeviceSpec,
    pub frame: DressedFrame,
    /// Dressed energies in rad/ns, label order.
    pub(crate) energies: Vec<f64>,
    /// Dressed eigenvectors, column `b` for label `b` (real because `H_D` is real).
    pub(crate) vectors: DMatrix<f64>,
    /// `a_q + a_q^dag` per transmon, bare coordinates.
    pub(crate) drive_ops: Vec<DMatrix<f64>>,
    pub(crate) occupations: Vec<Vec<f64>>,
}

impl Device {
    pub fn new(spec: DeviceSpec) -> Result<Self> {
        Self::with_capacity(spec, DEFAULT_MAX_DIMENSION)
    }

    pub fn with_capacity(spec: DeviceSpec, cap: usize) -> Result<Self> {
        let frame = dress_with_cap(&spec, cap)?;
        let (energies, vectors) = frame.label_ordered();
        let (l, n) = (spec.levels, spec.n_transmons);
        let drive_ops = (0..n)
            .map(|q| {
                let a = annihilation(l, n, q);
                &a + a.transpose()
            })
            .collect();
        let occupations = (0..n).map(|q| occupations(l, n, q)).collect();
        Ok(Device {
            spec,
            frame,
            energies,
            vectors,
            drive_ops,
            occupations,
        })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn levels(&self) -> usize {
        self.spec.levels
    }

    pub fn n_transmons(&self) -> usize {
        self.spec.n_transmons
    }

    pub fn hamiltonian(&self) -> CMatrix {
        build_device_hamiltonian_with_cap(&self.spec, usize::MAX).expect("validated at construction")
    }

    pub fn embed(&self, h: &PauliHamiltonian, frame: FrameChoice) -> Result<CMatrix> {
        embed_in_frame(h, &self.spec, &self.frame, frame)
    }

    pub fn projector(&self, frame: FrameChoice) -> CMatrix {
        computational_projector(&self.spec, &self.frame, frame)
    }

    /// Basis state of a label in the chosen frame, bare coordinates.
    pub fn label_state(&self, label: &BasisLabel, frame: FrameChoice) -> Result<StateVector> {
        match frame {
            FrameChoice::Bare => StateVector::basis(self.levels(), self.n_transmons(), label),
            FrameChoice::Dressed => self.frame.state(label),
        }
    }

    /// Population of each basis label in the chosen frame.
    pub fn populations(&self, psi: &StateVector, frame: FrameChoice) -> Vec<f64> {
        match frame {
            FrameChoice::Bare => psi.amplitudes.iter().map(|a| a.norm_sqr()).collect(),
            FrameChoice::Dressed => (0..self.dim())
                .map(|b| {
                    self.vectors
                        .column(b)
                        .iter()
                        .zip(psi.amplitudes.iter())
                        .map(|(v, a)| a * *v)
                        .sum::<C64>()
                        .norm_sqr()
                })
                .collect(),
        }
    }

    pub fn labels(&self) -> Vec<BasisLabel> {
        (0..self.dim())
            .map(|i| BasisLabel::from_index(i, self.levels(), self.n_transmons()))
            .collect()
    }
}
