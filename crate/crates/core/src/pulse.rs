//! Bounded piecewise-constant drive schedules.
//!
//! Amplitudes are ordinary frequencies (`Omega / 2pi`) in GHz, so the default
//! bound of 20 MHz is `0.020`. Segment `k` covers `[k T/n, (k+1) T/n)`; the
//! final instant `t = T` belongs to the last segment.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SEGMENTS: usize = 100;
pub const DEFAULT_AMP_BOUND: f64 = 0.020;
pub const DEFAULT_DETUNING_BOUND: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseBounds {
    /// Symmetric amplitude bound, GHz.
    pub amp_bound: f64,
    /// Cap on `|nu_q - omega_q|`, GHz.
    pub detuning_bound: f64,
}

impl Default for PulseBounds {
    fn default() -> Self {
        PulseBounds {
            amp_bound: DEFAULT_AMP_BOUND,
            detuning_bound: DEFAULT_DETUNING_BOUND,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    /// Total duration `T`, ns.
    pub duration: f64,
    pub n_segments: usize,
    /// `amplitudes[q][k]`, GHz.
    pub amplitudes: Vec<Vec<f64>>,
    /// Drive carrier frequency per transmon, GHz.
    pub drive_freq: Vec<f64>,
    pub amp_bound: f64,
    pub detuning_bound: f64,
}

impl PulseSchedule {
    /// All amplitudes zero, carriers on resonance.
    pub fn zero(duration: f64, n_segments: usize, omega: &[f64], bounds: PulseBounds) -> Self {
        PulseSchedule {
            duration,
            n_segments,
            amplitudes: vec![vec![0.0; n_segments]; omega.len()],
            drive_freq: omega.to_vec(),
            amp_bound: bounds.amp_bound,
            detuning_bound: bounds.detuning_bound,
        }
    }

    /// Every amplitude set to `value`, carriers on resonance.
    pub fn constant(duration: f64, n_segments: usize, omega: &[f64], bounds: PulseBounds, value: f64) -> Self {
        let mut s = Self::zero(duration, n_segments, omega, bounds);
        s.amplitudes.iter_mut().for_each(|a| a.fill(value));
        s
    }

    pub fn n_transmons(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn bounds(&self) -> PulseBounds {
        PulseBounds {
            amp_bound: self.amp_bound,
            detuning_bound: self.detuning_bound,
        }
    }

    pub fn segment_width(&self) -> f64 {
        self.duration / self.n_segments as f64
    }

    /// Segment containing `t`, right-continuous, with `t = T` in the last one.
    pub fn segment_index(&self, t: f64) -> usize {
        let n = self.n_segments;
        let width = self.segment_width();
        let mut k = ((t / width).floor().max(0.0) as usize).min(n - 1);
        if k + 1 < n && (k + 1) as f64 * width <= t {
            k += 1;
        } else if k > 0 && k as f64 * width > t {
            k -= 1;
        }
        k
    }

    pub fn segment_start(&self, k: usize) -> f64 {
        k as f64 * self.segment_width()
    }

    /// Checks the structural and bound invariants against device frequencies.
    pub fn validate(&self, omega: &[f64]) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if self.n_segments == 0 {
            return bad("n_segments must be positive".into());
        }
        if self.amplitudes.len() != omega.len() || self.drive_freq.len() != omega.len() {
            return Err(Error::Dimension(format!(
                "schedule drives {} transmons, device has {}",
                self.amplitudes.len(),
                omega.len()
            )));
        }
        if self.amp_bound < 0.0 || self.detuning_bound < 0.0 {
            return bad("bounds must be non-negative".into());
        }
        for (q, amps) in self.amplitudes.iter().enumerate() {
            if amps.len() != self.n_segments {
                return bad(format!("transmon {q} has {} segments, expected {}", amps.len(), self.n_segments));
            }
            if let Some(c) = amps.iter().find(|c| !(c.abs() <= self.amp_bound)) {
                return bad(format!("amplitude {c} on transmon {q} exceeds bound {}", self.amp_bound));
            }
            let det = self.drive_freq[q] - omega[q];
            if !(det.abs() <= self.detuning_bound * (1.0 + 1e-12)) {
                return bad(format!("drive on transmon {q} detuned by {det} GHz"));
            }
        }
        Ok(())
    }

    /// Same pulse shape stretched onto a new duration.
    pub fn rescaled(&self, duration: f64) -> Self {
        PulseSchedule {
            duration,
            ..self.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let nu: Vec<String> = self.drive_freq.iter().map(|v| v.to_string()).collect();
        writeln!(out, "# qudit-ctrl pulse schedule").unwrap();
        writeln!(out, "# duration_ns: {}", self.duration).unwrap();
        writeln!(out, "# n_segments: {}", self.n_segments).unwrap();
        writeln!(out, "# n_transmons: {}", self.n_transmons()).unwrap();
        writeln!(out, "# drive_freq_ghz: {}", nu.join(" ")).unwrap();
        writeln!(out, "# amp_bound_ghz: {}", self.amp_bound).unwrap();
        writeln!(out, "# detuning_bound_ghz: {}", self.detuning_bound).unwrap();
        let cols: Vec<String> = (0..self.n_transmons()).map(|q| format!("amp_{q}_ghz")).collect();
        writeln!(out, "segment t_start_ns {}", cols.join(" ")).unwrap();
        for k in 0..self.n_segments {
            write!(out, "{k} {}", self.segment_start(k)).unwrap();
            for amps in &self.amplitudes {
                write!(out, " {}", amps[k]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut duration = None;
        let mut n_segments = None;
        let mut n_transmons = None;
        let mut drive_freq = None;
        let mut amp_bound = None;
        let mut detuning_bound = None;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        let num = |s: &str, line: usize| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::parse(path, line, format!("bad number '{s}'")))
        };
        let count = |s: &str, line: usize| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::parse(path, line, format!("bad integer '{s}'")))
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with("segment") {
                continue;
            }
            if let Some(h) = raw.strip_prefix('#') {
                let Some((key, value)) = h.split_once(':') else { continue };
                let value = value.trim();
                match key.trim() {
                    "duration_ns" => duration = Some(num(value, line)?),
                    "n_segments" => n_segments = Some(count(value, line)?),
                    "n_transmons" => n_transmons = Some(count(value, line)?),
                    "drive_freq_ghz" => {
                        drive_freq = Some(
                            value
                                .split_whitespace()
                                .map(|v| num(v, line))
                                .collect::<Result<Vec<_>>>()?,
                        )
                    }
                    "amp_bound_ghz" => amp_bound = Some(num(value, line)?),
                    "detuning_bound_ghz" => detuning_bound = Some(num(value, line)?),
                    _ => {}
                }
                continue;
            }
            let fields = raw
                .split_whitespace()
                .map(|v| num(v, line))
                .collect::<Result<Vec<_>>>()?;
            rows.push((line, fields));
        }
        let missing = |k: &str| Error::parse(path, 0, format!("missing header '{k}'"));
        let duration = duration.ok_or_else(|| missing("duration_ns"))?;
        let n_segments = n_segments.ok_or_else(|| missing("n_segments"))?;
        let n_transmons = n_transmons.ok_or_else(|| missing("n_transmons"))?;
        let drive_freq = drive_freq.ok_or_else(|| missing("drive_freq_ghz"))?;
        let amp_bound = amp_bound.ok_or_else(|| missing("amp_bound_ghz"))?;
        let detuning_bound = detuning_bound.ok_or_else(|| missing("detuning_bound_ghz"))?;
        if drive_freq.len() != n_transmons {
            return Err(Error::parse(path, 0, "drive_freq_ghz length differs from n_transmons"));
        }
        if rows.len() != n_segments {
            return Err(Error::parse(
                path,
                rows.last().map_or(0, |r| r.0),
                format!("expected {n_segments} segment rows, found {}", rows.len()),
            ));
        }
        let mut amplitudes = vec![vec![0.0; n_segments]; n_transmons];
        for (k, (line, fields)) in rows.iter().enumerate() {
            if fields.len() != 2 + n_transmons || fields[0] as usize != k {
                return Err(Error::parse(path, *line, format!("malformed row for segment {k}")));
            }
            for q in 0..n_transmons {
                amplitudes[q][k] = fields[2 + q];
            }
        }
        Ok(PulseSchedule {
            duration,
            n_segments,
            amplitudes,
            drive_freq,
            amp_bound,
            detuning_bound,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Amplitude of transmon `q` at time `t`.
pub fn sample_at(s: &PulseSchedule, q: usize, t: f64) -> Result<f64> {
    if !(0.0..=s.duration).contains(&t) {
        return Err(Error::TimeOutOfRange {
            t,
            duration: s.duration,
        });
    }
    let amps = s
        .amplitudes
        .get(q)
        .ok_or_else(|| Error::Input(format!("no drive on transmon {q}")))?;
    Ok(amps[s.segment_index(t)])
}

/// Uniform random schedule, reproducible from the seed.
pub fn random_schedule(
    rng_seed: u64,
    bounds: PulseBounds,
    n_segments: usize,
    duration: f64,
    omega: &[f64],
) -> PulseSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut uniform = |half_width: f64| half_width * (2.0 * rng.random::<f64>() - 1.0);
    let amplitudes = omega
        .iter()
        .map(|_| (0..n_segments).map(|_| uniform(bounds.amp_bound)).collect())
        .collect();
    let drive_freq = omega.iter().map(|w| w + uniform(bounds.detuning_bound)).collect();
    PulseSchedule {
        duration,
        n_segments,
        amplitudes,
        drive_freq,
        amp_bound: bounds.amp_bound,
        detuning_bound: bounds.detuning_bound,
    }
}

/// Flat optimizer view of a schedule: all amplitudes (transmon-major), then
/// every carrier frequency, with box bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterVector {
    pub fn pack(s: &PulseSchedule, omega: &[f64]) -> Self {
        let mut values = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for amps in &s.amplitudes {
            values.extend_from_slice(amps);
            lower.extend(std::iter::repeat_n(-s.amp_bound, amps.len()));
            upper.extend(std::iter::repeat_n(s.amp_bound, amps.len()));
        }
        for (nu, w) in s.drive_freq.iter().zip(omega) {
            values.push(*nu);
            lower.push(w - s.detuning_bound);
            upper.push(w + s.detuning_bound);
        }
        ParameterVector { values, lower, upper }
    }

    /// Writes packed values back into a schedule with the template's shape.
    pub fn unpack(&self, template: &PulseSchedule) -> PulseSchedule {
        unpack_values(&self.values, template)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub(crate) fn unpack_values(values: &[f64], template: &PulseSchedule) -> PulseSchedule {
    let n = template.n_segments;
    let nq = template.n_transmons();
    let mut s = template.clone();
    for q in 0..nq {
        s.amplitudes[q].copy_from_slice(&values[q * n..(q + 1) * n]);
    }
    s.drive_freq.copy_from_slice(&values[nq * n..nq * n + nq]);
    s
}

/// Componentwise projection onto `[lower, upper]`.
pub fn clip_to_bounds(v: &ParameterVector) -> ParameterVector {
    let values = v
        .values
        .iter()
        .zip(v.lower.iter().zip(&v.upper))
        .map(|(&x, (&lo, &hi))| x.max(lo).min(hi))
        .collect();
    ParameterVector {
        values,
        lower: v.lower.clone(),
        upper: v.upper.clone(),
    }
}
