//! Spin-level circuit engine: ideal MS and single-qubit gates, a
//! time-proportional dephasing model, parity scans and the parity-based
//! fidelity estimator.
//!
//! Qubit 0 is the most significant bit of a basis index. The text format uses
//! 1-based qubit labels.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::Axis;
use crate::error::{Error, Result};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Largest register simulated as a state vector.
pub const MAX_PURE_QUBITS: usize = 24;
/// Largest register simulated as a density matrix.
pub const MAX_MIXED_QUBITS: usize = 11;
/// Smallest scan accepted by [`estimate_fidelity`].
pub const MIN_SCAN_POINTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gate", rename_all = "lowercase")]
pub enum Gate {
    /// exp(iχ σ_x^p σ_x^q) on the given bus.
    Ms { pair: (usize, usize), angle: f64, axis: Axis },
    /// exp(−iθσ_z/2).
    Rz { qubit: usize, angle: f64 },
    Rx { qubit: usize, angle: f64 },
    Ry { qubit: usize, angle: f64 },
    /// exp(−iθ(cos φ σ_x + sin φ σ_y)/2).
    R { qubit: usize, angle: f64, phase: f64 },
    H { qubit: usize },
    /// exp(−iσ_z π/4).
    S { qubit: usize },
    /// exp(+iσ_z π/4).
    Sdg { qubit: usize },
}

impl Gate {
    pub fn ms(p: usize, q: usize, angle: f64, axis: Axis) -> Gate {
        Gate::Ms { pair: (p, q), angle, axis }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::Ms { pair, .. } => vec![pair.0, pair.1],
            Gate::Rz { qubit, .. }
            | Gate::Rx { qubit, .. }
            | Gate::Ry { qubit, .. }
            | Gate::R { qubit, .. }
            | Gate::H { qubit }
            | Gate::S { qubit }
            | Gate::Sdg { qubit } => vec![qubit],
        }
    }

    pub fn is_ms(&self) -> bool {
        matches!(self, Gate::Ms { .. })
    }

    fn is_rz(&self) -> bool {
        matches!(self, Gate::Rz { .. })
    }

    /// 2×2 matrix of a single-qubit gate, rows then columns.
    fn matrix(&self) -> Option<[[C64; 2]; 2]> {
        let rot = |theta: f64, phi: f64| {
            let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
            let e = C64::from_polar(1.0, phi);
            // −i s (cos φ σ_x + sin φ σ_y)
            [[C64::new(c, 0.0), C64::new(0.0, -s) * e.conj()], [C64::new(0.0, -s) * e, C64::new(c, 0.0)]]
        };
        let phase = |theta: f64| {
            [[C64::from_polar(1.0, -theta / 2.0), ZERO], [ZERO, C64::from_polar(1.0, theta / 2.0)]]
        };
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        Some(match *self {
            Gate::Ms { .. } => return None,
            Gate::Rz { angle, .. } => phase(angle),
            Gate::Rx { angle, .. } => rot(angle, 0.0),
            Gate::Ry { angle, .. } => rot(angle, FRAC_PI_2),
            Gate::R { angle, phase: phi, .. } => rot(angle, phi),
            Gate::H { .. } => [[h, h], [h, -h]],
            Gate::S { .. } => phase(FRAC_PI_2),
            Gate::Sdg { .. } => phase(-FRAC_PI_2),
        })
    }

    fn shifted(&self, by: isize) -> Gate {
        let m = |q: usize| (q as isize + by) as usize;
        match *self {
            Gate::Ms { pair, angle, axis } => Gate::Ms { pair: (m(pair.0), m(pair.1)), angle, axis },
            Gate::Rz { qubit, angle } => Gate::Rz { qubit: m(qubit), angle },
            Gate::Rx { qubit, angle } => Gate::Rx { qubit: m(qubit), angle },
            Gate::Ry { qubit, angle } => Gate::Ry { qubit: m(qubit), angle },
            Gate::R { qubit, angle, phase } => Gate::R { qubit: m(qubit), angle, phase },
            Gate::H { qubit } => Gate::H { qubit: m(qubit) },
            Gate::S { qubit } => Gate::S { qubit: m(qubit) },
            Gate::Sdg { qubit } => Gate::Sdg { qubit: m(qubit) },
        }
    }
}

/// Text form with 1-based labels.
impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.shifted(1) {
            Gate::Ms { pair, angle, axis } => write!(f, "MS {} {} {angle:?} {axis}", pair.0, pair.1),
            Gate::Rz { qubit, angle } => write!(f, "RZ {qubit} {angle:?}"),
            Gate::Rx { qubit, angle } => write!(f, "RX {qubit} {angle:?}"),
            Gate::Ry { qubit, angle } => write!(f, "RY {qubit} {angle:?}"),
            Gate::R { qubit, angle, phase } => write!(f, "R {qubit} {angle:?} {phase:?}"),
            Gate::H { qubit } => write!(f, "H {qubit}"),
            Gate::S { qubit } => write!(f, "S {qubit}"),
            Gate::Sdg { qubit } => write!(f, "SDG {qubit}"),
        }
    }
}

/// Wall-clock durations of moments without an explicit duration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    /// Any moment containing an MS gate.
    pub ms_s: f64,
    /// Moments of single-qubit gates other than RZ.
    pub single_qubit_s: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing { ms_s: 200e-6, single_qubit_s: 10e-6 }
    }
}

impl Timing {
    pub fn validate(&self) -> Result<()> {
        if !(self.ms_s >= 0.0 && self.single_qubit_s >= 0.0 && self.ms_s.is_finite() && self.single_qubit_s.is_finite()) {
            return Err(Error::InvalidConfig(format!("moment durations must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub gates: Vec<Gate>,
    /// Overrides the timing default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

impl Moment {
    pub fn new(gates: Vec<Gate>) -> Self {
        Moment { gates, duration_s: None }
    }

    pub fn idle(duration: f64) -> Self {
        Moment { gates: Vec::new(), duration_s: Some(duration) }
    }

    pub fn duration(&self, timing: &Timing) -> f64 {
        if let Some(d) = self.duration_s {
            d
        } else if self.gates.iter().any(Gate::is_ms) {
            timing.ms_s
        } else if self.gates.iter().any(|g| !g.is_rz()) {
            timing.single_qubit_s
        } else {
            0.0
        }
    }

    fn validate(&self, qubits: usize) -> Result<()> {
        let mut single_owner = vec![false; qubits];
        let mut ms_owner = vec![false; qubits];
        let mut buses: Vec<Axis> = Vec::new();
        let mut ms_pairs: Vec<(usize, usize)> = Vec::new();
        for gate in &self.gates {
            for q in gate.qubits() {
                if q >= qubits {
                    return Err(Error::QubitOutOfRange { index: q, count: qubits });
                }
            }
            match *gate {
                Gate::Ms { pair, angle, axis } => {
                    if pair.0 == pair.1 {
                        return Err(Error::InvalidCircuit(format!("MS needs two distinct qubits, got {}", pair.0 + 1)));
                    }
                    if axis == Axis::Z {
                        return Err(Error::InvalidCircuit("MS gates run on the X or Y bus".into()));
                    }
                    if !angle.is_finite() {
                        return Err(Error::InvalidCircuit(format!("MS angle {angle}")));
                    }
                    if buses.contains(&axis) {
                        return Err(Error::InvalidCircuit(format!("two MS gates on the {axis} bus in one moment")));
                    }
                    let key = (pair.0.min(pair.1), pair.0.max(pair.1));
                    if ms_pairs.contains(&key) {
                        return Err(Error::InvalidCircuit(format!("parallel MS gates share both qubits {} {}", key.0 + 1, key.1 + 1)));
                    }
                    buses.push(axis);
                    ms_pairs.push(key);
                    for q in [pair.0, pair.1] {
                        if single_owner[q] {
                            return Err(Error::InvalidCircuit(format!("qubit {} has a single-qubit gate during an MS gate", q + 1)));
                        }
                        ms_owner[q] = true;
                    }
                }
                _ => {
                    let q = gate.qubits()[0];
                    if ms_owner[q] {
                        return Err(Error::InvalidCircuit(format!("qubit {} has a single-qubit gate during an MS gate", q + 1)));
                    }
                    if single_owner[q] {
                        return Err(Error::InvalidCircuit(format!("qubit {} has two single-qubit gates in one moment", q + 1)));
                    }
                    single_owner[q] = true;
                }
            }
        }
        match self.duration_s {
            Some(d) if !(d >= 0.0 && d.is_finite()) => Err(Error::InvalidCircuit(format!("moment duration {d}"))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub qubit_count: usize,
    pub moments: Vec<Moment>,
    #[serde(default)]
    pub timing: Timing,
}

impl Circuit {
    pub fn new(qubit_count: usize) -> Self {
        Circuit { qubit_count, moments: Vec::new(), timing: Timing::default() }
    }

    pub fn with_timing(mut self, timing: Timing) -> Self {
        self.timing = timing;
        self
    }

    pub fn push(&mut self, gates: Vec<Gate>) -> &mut Self {
        self.moments.push(Moment::new(gates));
        self
    }

    pub fn push_moment(&mut self, moment: Moment) -> &mut Self {
        self.moments.push(moment);
        self
    }

    pub fn append(&mut self, other: &Circuit) -> Result<&mut Self> {
        if other.qubit_count != self.qubit_count {
            return Err(Error::InvalidCircuit(format!(
                "cannot append a {}-qubit circuit to a {}-qubit circuit",
                other.qubit_count, self.qubit_count
            )));
        }
        self.moments.extend(other.moments.iter().cloned());
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.qubit_count == 0 {
            return Err(Error::InvalidCircuit("circuit has no qubits".into()));
        }
        self.timing.validate()?;
        self.moments.iter().try_for_each(|m| m.validate(self.qubit_count))
    }

    pub fn duration(&self) -> f64 {
        self.moments.iter().map(|m| m.duration(&self.timing)).sum()
    }

    pub fn ms_count(&self) -> usize {
        self.moments.iter().flat_map(|m| &m.gates).filter(|g| g.is_ms()).count()
    }

    /// Parses the line format: `QUBITS n`, then one moment per line with gates
    /// separated by `|` and an optional `@ seconds` duration. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Circuit> {
        let mut qubits: Option<usize> = None;
        let mut moments = Vec::new();
        let mut highest = 0usize;
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let err = |message: String| Error::Parse { line: line_no, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            if words.next().is_some_and(|w| w.eq_ignore_ascii_case("QUBITS")) {
                if qubits.is_some() || !moments.is_empty() {
                    return Err(err("QUBITS must appear once, before any moment".into()));
                }
                let n = words
                    .next()
                    .and_then(|w| w.parse::<usize>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| err("QUBITS needs a positive count".into()))?;
                if words.next().is_some() {
                    return Err(err("trailing tokens after QUBITS".into()));
                }
                qubits = Some(n);
                continue;
            }
            let (body, duration_s) = match line.split_once('@') {
                Some((b, d)) => {
                    let d: f64 = d.trim().parse().map_err(|_| err(format!("bad duration '{}'", d.trim())))?;
                    (b, Some(d))
                }
                None => (line, None),
            };
            let mut gates = Vec::new();
            if !body.trim().is_empty() {
                for part in body.split('|') {
                    let g = parse_gate(part).map_err(err)?;
                    highest = highest.max(g.qubits().into_iter().max().unwrap_or(0) + 1);
                    gates.push(g);
                }
            }
            moments.push(Moment { gates, duration_s });
        }
        let qubit_count = qubits.unwrap_or(highest);
        let circuit = Circuit { qubit_count, moments, timing: Timing::default() };
        circuit.validate()?;
        Ok(circuit)
    }

    /// Inverse of [`Circuit::parse`].
    pub fn to_text(&self) -> String {
        let mut out = format!("QUBITS {}\n", self.qubit_count);
        for m in &self.moments {
            let gates: Vec<String> = m.gates.iter().map(ToString::to_string).collect();
            out.push_str(&gates.join(" | "));
            if let Some(d) = m.duration_s {
                if !gates.is_empty() {
                    out.push(' ');
                }
                out.push_str(&format!("@ {d:?}"));
            }
            out.push('\n');
        }
        out
    }

    /// Full unitary of a noiseless circuit (small registers only).
    pub fn unitary(&self) -> Result<DMatrix<C64>> {
        self.validate()?;
        if self.qubit_count > 12 {
            return Err(Error::SizeLimit(format!("unitary of {} qubits", self.qubit_count)));
        }
        let d = 1usize << self.qubit_count;
        let mut u = DMatrix::zeros(d, d);
        for b in 0..d {
            let mut psi = vec![ZERO; d];
            psi[b] = ONE;
            for m in &self.moments {
                for g in &m.gates {
                    apply_gate(&mut psi, self.qubit_count, 0, g, false);
                }
            }
            u.set_column(b, &nalgebra::DVector::from_vec(psi));
        }
        Ok(u)
    }
}

fn parse_gate(part: &str) -> std::result::Result<Gate, String> {
    let words: Vec<&str> = part.split_whitespace().collect();
    let name = words.first().ok_or("empty gate")?.to_ascii_uppercase();
    let qubit = |k: usize| -> std::result::Result<usize, String> {
        let w = words.get(k).ok_or(format!("{name}: missing qubit"))?;
        match w.parse::<usize>() {
            Ok(q) if q >= 1 => Ok(q - 1),
            _ => Err(format!("{name}: qubit labels are 1-based integers, got '{w}'")),
        }
    };
    let real = |k: usize| -> std::result::Result<f64, String> {
        let w = words.get(k).ok_or(format!("{name}: missing angle"))?;
        w.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(format!("{name}: bad number '{w}'"))
    };
    let arity = |n: usize| -> std::result::Result<(), String> {
        if words.len() == n {
            Ok(())
        } else {
            Err(format!("{name} takes {} arguments, got {}", n - 1, words.len() - 1))
        }
    };
    let gate = match name.as_str() {
        "MS" => {
            if words.len() == 5 {
                let axis: Axis = words[4].parse().map_err(|e: Error| e.to_string())?;
                Gate::ms(qubit(1)?, qubit(2)?, real(3)?, axis)
            } else {
                arity(4)?;
                Gate::ms(qubit(1)?, qubit(2)?, real(3)?, Axis::X)
            }
        }
        "RZ" | "RX" | "RY" => {
            arity(3)?;
            let (q, a) = (qubit(1)?, real(2)?);
            match name.as_str() {
                "RZ" => Gate::Rz { qubit: q, angle: a },
                "RX" => Gate::Rx { qubit: q, angle: a },
                _ => Gate::Ry { qubit: q, angle: a },
            }
        }
        "R" => {
            arity(4)?;
            Gate::R { qubit: qubit(1)?, angle: real(2)?, phase: real(3)? }
        }
        "H" | "S" | "SDG" => {
            arity(2)?;
            let q = qubit(1)?;
            match name.as_str() {
                "H" => Gate::H { qubit: q },
                "S" => Gate::S { qubit: q },
                _ => Gate::Sdg { qubit: q },
            }
        }
        other => return Err(format!("unknown gate '{other}'")),
    };
    Ok(gate)
}

/// Per-qubit coherence time: one value for all qubits or one per qubit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoherenceTime {
    Uniform(f64),
    PerQubit(Vec<f64>),
}

/// Noise applied by [`run`]. The default is noiseless.
///
/// Dephasing acts after the gates of each moment and multiplies every
/// single-qubit coherence by e^{−t/T2} for a moment of duration t. Each MS gate
/// is followed by two-qubit depolarizing noise with probability
/// `ms_depolarizing`, the uniform average over the 16 two-qubit Paulis.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(default, rename = "t2_s", skip_serializing_if = "Option::is_none")]
    pub t2: Option<CoherenceTime>,
    #[serde(default)]
    pub ms_depolarizing: f64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel::default()
    }

    pub fn dephasing(t2: f64) -> Self {
        NoiseModel { t2: Some(CoherenceTime::Uniform(t2)), ms_depolarizing: 0.0 }
    }

    pub fn depolarizing(p: f64) -> Self {
        NoiseModel { t2: None, ms_depolarizing: p }
    }

    pub fn is_noiseless(&self) -> bool {
        self.ms_depolarizing == 0.0 && self.t2_values(1).is_none_or(|t| t.iter().all(|v| v.is_infinite()))
    }

    fn t2_values(&self, qubits: usize) -> Option<Vec<f64>> {
        match &self.t2 {
            None => None,
            Some(CoherenceTime::Uniform(t)) => Some(vec![*t; qubits]),
            Some(CoherenceTime::PerQubit(v)) => Some(v.clone()),
        }
    }

    pub fn validate(&self, qubits: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ms_depolarizing) {
            return Err(Error::InvalidConfig(format!("MS depolarizing probability {} outside [0, 1]", self.ms_depolarizing)));
        }
        if let Some(t) = self.t2_values(qubits) {
            if t.len() != qubits {
                return Err(Error::InvalidConfig(format!("{} T2 values for {qubits} qubits", t.len())));
            }
            if let Some(bad) = t.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::InvalidConfig(format!("T2 must be positive, got {bad}")));
            }
        }
        Ok(())
    }
}

/// Spin register state.
#[derive(Clone, Debug, PartialEq)]
pub enum SpinState {
    Pure { qubits: usize, amplitudes: Vec<C64> },
    /// Row-major density matrix.
    Mixed { qubits: usize, rho: Vec<C64> },
}

impl SpinState {
    pub fn zero(qubits: usize) -> Self {
        let mut amplitudes = vec![ZERO; 1 << qubits];
        amplitudes[0] = ONE;
        SpinState::Pure { qubits, amplitudes }
    }

    pub fn qubits(&self) -> usize {
        match self {
            SpinState::Pure { qubits, .. } | SpinState::Mixed { qubits, .. } => *qubits,
        }
    }

    pub fn to_mixed(&self) -> SpinState {
        match self {
            SpinState::Pure { qubits, amplitudes } => {
                let d = amplitudes.len();
                let mut rho = vec![ZERO; d * d];
                for r in 0..d {
                    for c in 0..d {
                        rho[r * d + c] = amplitudes[r] * amplitudes[c].conj();
                    }
                }
                SpinState::Mixed { qubits: *qubits, rho }
            }
            mixed => mixed.clone(),
        }
    }

    pub fn density_matrix(&self) -> DMatrix<C64> {
        match self.to_mixed() {
            SpinState::Mixed { qubits, rho } => {
                let d = 1 << qubits;
                DMatrix::from_row_slice(d, d, &rho)
            }
            SpinState::Pure { .. } => unreachable!(),
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        match self {
            SpinState::Pure { amplitudes, .. } => amplitudes.iter().map(|a| a.norm_sqr()).collect(),
            SpinState::Mixed { qubits, rho } => {
                let d = 1usize << qubits;
                (0..d).map(|k| rho[k * d + k].re.max(0.0)).collect()
            }
        }
    }

    /// ⟨ψ|ρ|ψ⟩.
    pub fn fidelity_to(&self, target: &[C64]) -> f64 {
        match self {
            SpinState::Pure { amplitudes, .. } => {
                amplitudes.iter().zip(target).map(|(a, t)| t.conj() * a).sum::<C64>().norm_sqr()
            }
            SpinState::Mixed { rho, .. } => {
                let d = target.len();
                let mut f = ZERO;
                for r in 0..d {
                    for c in 0..d {
                        f += target[r].conj() * rho[r * d + c] * target[c];
                    }
                }
                f.re
            }
        }
    }

    /// Σ_i ⟨σ_z^i⟩.
    pub fn total_z(&self) -> f64 {
        let q = self.qubits();
        self.probabilities().iter().enumerate().map(|(b, p)| p * (q as f64 - 2.0 * b.count_ones() as f64)).sum()
    }
}

fn mask(n: usize, qubit: usize) -> usize {
    1 << (n - 1 - qubit)
}

/// Applies `g` to the qubits `offset + g.qubits()` of an `n`-qubit vector,
/// conjugated when `conj` is set.
fn apply_gate(v: &mut [C64], n: usize, offset: usize, g: &Gate, conj: bool) {
    match *g {
        Gate::Ms { pair, angle, .. } => {
            let flip = mask(n, offset + pair.0) | mask(n, offset + pair.1);
            let (c, s) = (angle.cos(), angle.sin());
            let is = C64::new(0.0, if conj { -s } else { s });
            for b in 0..v.len() {
                let partner = b ^ flip;
                if b < partner {
                    let (x, y) = (v[b], v[partner]);
                    v[b] = x * c + is * y;
                    v[partner] = y * c + is * x;
                }
            }
        }
        _ => {
            let mut m = g.matrix().expect("single-qubit gate");
            if conj {
                m.iter_mut().flatten().for_each(|z| *z = z.conj());
            }
            let bit = mask(n, offset + g.qubits()[0]);
            for b in 0..v.len() {
                if b & bit == 0 {
                    let (x, y) = (v[b], v[b | bit]);
                    v[b] = m[0][0] * x + m[0][1] * y;
                    v[b | bit] = m[1][0] * x + m[1][1] * y;
                }
            }
        }
    }
}

/// ρ → ρ with coherences of `qubit` scaled by `factor`.
fn dephase(rho: &mut [C64], qubits: usize, qubit: usize, factor: f64) {
    let d = 1usize << qubits;
    let bit = mask(qubits, qubit);
    for r in 0..d {
        for c in 0..d {
            if (r ^ c) & bit != 0 {
                rho[r * d + c] *= factor;
            }
        }
    }
}

/// (1 − p)ρ + p · Tr_ab(ρ) ⊗ 1/4, which equals the average over the 16
/// two-qubit Paulis applied with total probability p.
fn depolarize_pair(rho: &mut [C64], qubits: usize, pair: (usize, usize), p: f64) {
    let d = 1usize << qubits;
    let ab = mask(qubits, pair.0) | mask(qubits, pair.1);
    let patterns = [0, mask(qubits, pair.0), mask(qubits, pair.1), ab];
    let old = rho.to_vec();
    for r in 0..d {
        for c in 0..d {
            let mut v = old[r * d + c] * (1.0 - p);
            if (r ^ c) & ab == 0 {
                let (r0, c0) = (r & !ab, c & !ab);
                let traced: C64 = patterns.iter().map(|x| old[(r0 | x) * d + (c0 | x)]).sum();
                v += traced * (p / 4.0);
            }
            rho[r * d + c] = v;
        }
    }
}

fn apply_moment(state: &mut SpinState, moment: &Moment, timing: &Timing, t2: Option<&[f64]>, depol: f64) {
    match state {
        SpinState::Pure { qubits, amplitudes } => {
            for g in &moment.gates {
                apply_gate(amplitudes, *qubits, 0, g, false);
            }
        }
        SpinState::Mixed { qubits, rho } => {
            let q = *qubits;
            // ket qubits are the high half of the 2q-bit index, bra qubits the low half
            for g in &moment.gates {
                apply_gate(rho, 2 * q, 0, g, false);
                apply_gate(rho, 2 * q, q, g, true);
                if let (Gate::Ms { pair, .. }, true) = (g, depol > 0.0) {
                    depolarize_pair(rho, q, *pair, depol);
                }
            }
            if let Some(t2) = t2 {
                let dt = moment.duration(timing);
                if dt > 0.0 {
                    for (j, t) in t2.iter().enumerate() {
                        dephase(rho, q, j, (-dt / t).exp());
                    }
                }
            }
        }
    }
}

/// Runs `circuit` on `initial`. Noise forces a density-matrix simulation.
pub fn evolve(circuit: &Circuit, noise: &NoiseModel, initial: SpinState) -> Result<SpinState> {
    circuit.validate()?;
    noise.validate(circuit.qubit_count)?;
    let q = circuit.qubit_count;
    if initial.qubits() != q {
        return Err(Error::InvalidState(format!("{}-qubit state for a {q}-qubit circuit", initial.qubits())));
    }
    let mut state = if noise.is_noiseless() {
        if q > MAX_PURE_QUBITS {
            return Err(Error::SizeLimit(format!("{q} qubits exceed the state-vector limit {MAX_PURE_QUBITS}")));
        }
        initial
    } else {
        if q > MAX_MIXED_QUBITS {
            return Err(Error::SizeLimit(format!("{q} qubits exceed the density-matrix limit {MAX_MIXED_QUBITS}")));
        }
        initial.to_mixed()
    };
    let t2 = noise.t2_values(q);
    for m in &circuit.moments {
        apply_moment(&mut state, m, &circuit.timing, t2.as_deref(), noise.ms_depolarizing);
    }
    Ok(state)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shots {
    /// Exact Born probabilities.
    Exact,
    Count(u64),
}

impl Shots {
    pub fn from_count(n: u64) -> Shots {
        if n == 0 {
            Shots::Exact
        } else {
            Shots::Count(n)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub state: SpinState,
    pub probabilities: Vec<f64>,
    /// Histogram over basis states when sampled.
    pub counts: Option<Vec<u64>>,
}

/// Runs `circuit` from |0…0⟩ and optionally samples `shots` outcomes with a
/// generator seeded by `seed`.
pub fn run(circuit: &Circuit, noise: &NoiseModel, shots: Shots, seed: u64) -> Result<RunOutput> {
    let state = evolve(circuit, noise, SpinState::zero(circuit.qubit_count))?;
    let probabilities = state.probabilities();
    let counts = match shots {
        Shots::Exact => None,
        Shots::Count(n) => Some(sample_counts(&probabilities, n, &mut ChaCha8Rng::seed_from_u64(seed))?),
    };
    Ok(RunOutput { state, probabilities, counts })
}

fn sample_counts(p: &[f64], shots: u64, rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
    let dist = WeightedIndex::new(p).map_err(|e| Error::InvalidState(format!("cannot sample: {e}")))?;
    let mut counts = vec![0u64; p.len()];
    for _ in 0..shots {
        counts[dist.sample(rng)] += 1;
    }
    Ok(counts)
}

/// Estimate with a standard error (zero when exact).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub phase: f64,
    pub parity: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityScan {
    pub qubits: Vec<usize>,
    pub points: Vec<ScanPoint>,
}

impl ParityScan {
    /// `phase,parity,stderr` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,parity,stderr\n");
        for p in &self.points {
            out.push_str(&format!("{:?},{:?},{:?}\n", p.phase, p.parity, p.stderr));
        }
        out
    }
}

/// `count` evenly spaced phases over one parity period for `qubits` qubits.
pub fn scan_phases(qubits: usize, count: usize) -> Vec<f64> {
    let period = 2.0 * PI / qubits.max(1) as f64;
    (0..count).map(|k| period * k as f64 / count as f64).collect()
}

fn parity_of(probabilities: &[f64], qubits: usize, measured: &[usize]) -> f64 {
    let m: usize = measured.iter().map(|&j| mask(qubits, j)).fold(0, |a, b| a | b);
    probabilities.iter().enumerate().map(|(b, p)| if (b & m).count_ones().is_multiple_of(2) { *p } else { -*p }).sum()
}

fn check_measured(measured: &[usize], qubits: usize) -> Result<()> {
    if measured.is_empty() {
        return Err(Error::InvalidConfig("no qubits to analyse".into()));
    }
    for (k, &j) in measured.iter().enumerate() {
        if j >= qubits {
            return Err(Error::QubitOutOfRange { index: j, count: qubits });
        }
        if measured[..k].contains(&j) {
            return Err(Error::InvalidConfig(format!("qubit {} listed twice", j + 1)));
        }
    }
    Ok(())
}

/// Parity ⟨Π_i σ_z^i⟩ after an R(π/2, φ) on each listed qubit, for each φ.
///
/// The analysis pulses form one extra moment. Each point draws from its own
/// stream of the seeded generator.
pub fn parity_scan(
    prep: &Circuit,
    qubits: &[usize],
    phases: &[f64],
    noise: &NoiseModel,
    shots: Shots,
    seed: u64,
) -> Result<ParityScan> {
    check_measured(qubits, prep.qubit_count)?;
    let prepared = evolve(prep, noise, SpinState::zero(prep.qubit_count))?;
    let t2 = noise.t2_values(prep.qubit_count);
    let points = phases
        .par_iter()
        .enumerate()
        .map(|(k, &phi)| {
            let analysis = Moment::new(qubits.iter().map(|&q| Gate::R { qubit: q, angle: FRAC_PI_2, phase: phi }).collect());
            let mut state = prepared.clone();
            apply_moment(&mut state, &analysis, &prep.timing, t2.as_deref(), noise.ms_depolarizing);
            let p = state.probabilities();
            let exact = parity_of(&p, prep.qubit_count, qubits);
            let (parity, stderr) = match shots {
                Shots::Exact => (exact, 0.0),
                Shots::Count(n) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(k as u64 + 1);
                    let counts = sample_counts(&p, n, &mut rng)?;
                    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
                    let v = parity_of(&freq, prep.qubit_count, qubits);
                    // floor keeps a finite weight when every shot agrees
                    (v, ((1.0 - v * v).max(1.0 / n as f64) / n as f64).sqrt())
                }
            };
            Ok(ScanPoint { phase: phi, parity, stderr })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParityScan { qubits: qubits.to_vec(), points })
}

/// P(all listed qubits 0) + P(all 1) of the state prepared by `prep`.
pub fn even_population(prep: &Circuit, qubits: &[usize], noise: &NoiseModel, shots: Shots, seed: u64) -> Result<Estimate> {
    check_measured(qubits, prep.qubit_count)?;
    let out = run(prep, noise, shots, seed)?;
    let m: usize = qubits.iter().map(|&j| mask(prep.qubit_count, j)).fold(0, |a, b| a | b);
    let hit = |b: usize| b & m == 0 || b & m == m;
    match out.counts {
        None => {
            let p = out.probabilities.iter().enumerate().filter(|(b, _)| hit(*b)).map(|(_, p)| p).sum();
            Ok(Estimate { value: p, stderr: 0.0 })
        }
        Some(counts) => {
            let n: u64 = counts.iter().sum();
            let k: u64 = counts.iter().enumerate().filter(|(b, _)| hit(*b)).map(|(_, c)| c).sum();
            let p = k as f64 / n as f64;
            Ok(Estimate { value: p, stderr: (p * (1.0 - p) / n as f64).sqrt() })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub even_population: f64,
    pub even_population_stderr: f64,
    /// Fitted cosine amplitude; zero when within one standard error of zero.
    pub parity_contrast: f64,
    pub contrast_stderr: f64,
    /// φ₀ in Π(φ) = C cos(nφ + φ₀).
    pub phase_offset: f64,
    pub fidelity: f64,
    pub fidelity_stderr: f64,
    /// Covariance of the (cos, sin) amplitudes.
    pub covariance: [[f64; 2]; 2],
    /// Parity oscillation frequency n per radian of φ.
    pub frequency: usize,
}

/// Fits Π(φ) = a cos nφ + b sin nφ at the known frequency n = number of
/// scanned qubits and combines F = (P_even + C)/2.
pub fn estimate_fidelity(population: Estimate, scan: &ParityScan) -> Result<FidelityReport> {
    let n = scan.qubits.len();
    let pts = &scan.points;
    if n == 0 {
        return Err(Error::Fit("scan has no qubits".into()));
    }
    if pts.len() < MIN_SCAN_POINTS {
        return Err(Error::Fit(format!("{} scan points, need at least {MIN_SCAN_POINTS}", pts.len())));
    }
    let (lo, hi) = pts.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p.phase), h.max(p.phase)));
    let k = pts.len() as f64;
    // span of the grid including the last step
    if (hi - lo) * k / (k - 1.0) < 2.0 * PI / n as f64 - 1e-9 {
        return Err(Error::Fit(format!("scan covers {:.4} rad, less than one period {:.4}", hi - lo, 2.0 * PI / n as f64)));
    }
    let weighted = pts.iter().all(|p| p.stderr > 0.0);
    let (mut ata, mut atb) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
    for p in pts {
        let w = if weighted { 1.0 / (p.stderr * p.stderr) } else { 1.0 };
        let row = [(n as f64 * p.phase).cos(), (n as f64 * p.phase).sin()];
        for i in 0..2 {
            atb[i] += w * row[i] * p.parity;
            for j in 0..2 {
                ata[i][j] += w * row[i] * row[j];
            }
        }
    }
    let det = ata[0][0] * ata[1][1] - ata[0][1] * ata[1][0];
    if !(det.abs() > 1e-12 * (ata[0][0] * ata[1][1]).abs().max(1e-300)) {
        return Err(Error::Fit("phases do not resolve the cosine and sine components".into()));
    }
    let inv = [[ata[1][1] / det, -ata[0][1] / det], [-ata[1][0] / det, ata[0][0] / det]];
    let a = inv[0][0] * atb[0] + inv[0][1] * atb[1];
    let b = inv[1][0] * atb[0] + inv[1][1] * atb[1];
    let scale = if weighted {
        1.0
    } else {
        // residual variance estimate; zero for exact data
        let rss: f64 = pts
            .iter()
            .map(|p| {
                let m = a * (n as f64 * p.phase).cos() + b * (n as f64 * p.phase).sin();
                (p.parity - m).powi(2)
            })
            .sum();
        rss / (k - 2.0)
    };
    let cov = [[inv[0][0] * scale, inv[0][1] * scale], [inv[1][0] * scale, inv[1][1] * scale]];
    let c = a.hypot(b);
    let var_c = if c > 0.0 {
        (a * a * cov[0][0] + b * b * cov[1][1] + 2.0 * a * b * cov[0][1]) / (c * c)
    } else {
        0.5 * (cov[0][0] + cov[1][1])
    };
    let sigma_c = var_c.max(0.0).sqrt();
    let contrast = if c <= sigma_c { 0.0 } else { c };
    let fidelity = 0.5 * (population.value + contrast);
    Ok(FidelityReport {
        even_population: population.value,
        even_population_stderr: population.stderr,
        parity_contrast: contrast,
        contrast_stderr: sigma_c,
        phase_offset: (-b).atan2(a),
        fidelity,
        fidelity_stderr: 0.5 * population.stderr.hypot(sigma_c),
        covariance: cov,
        frequency: n,
    })
}

/// The analysed pairs of a parallel layer that are not themselves gated: one
/// qubit from each gate.
pub fn cross_pairs(a: (usize, usize), b: (usize, usize)) -> Vec<(usize, usize)> {
    let same = |x: (usize, usize), y: (usize, usize)| (x.0 == y.0 && x.1 == y.1) || (x.0 == y.1 && x.1 == y.0);
    let mut out = Vec::new();
    for p in [a.0, a.1] {
        for q in [b.0, b.1] {
            let pair = (p.min(q), p.max(q));
            if p != q && !same(pair, a) && !same(pair, b) && !out.contains(&pair) {
                out.push(pair);
            }
        }
    }
    out
}

/// Single MS gate on qubits (0, 1) of a 2-qubit register at angle π/4.
pub fn bell_circuit(axis: Axis) -> Circuit {
    let mut c = Circuit::new(2);
    c.push(vec![Gate::ms(0, 1, FRAC_PI_4, axis)]);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn empty_circuit_keeps_zero_state() {
        let c = Circuit::new(3);
        let out = run(&c, &NoiseModel::noiseless(), Shots::Exact, 0).unwrap();
        assert_eq!(out.probabilities[0], 1.0);
    }

    #[test]
    fn ms_gives_bell_state() {
        let out = run(&bell_circuit(Axis::X), &NoiseModel::noiseless(), Shots::Exact, 0).unwrap();
        let p = &out.probabilities;
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[3] - 0.5).abs() < 1e-15);
        let h = FRAC_1_SQRT_2;
        assert!((out.state.fidelity_to(&[C64::new(h, 0.0), ZERO, ZERO, C64::new(0.0, h)]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gate_matrices_match_definitions() {
        // S = exp(−iσ_z π/4) and R(θ, 0) = RX(θ), R(θ, π/2) = RY(θ)
        let s = Gate::S { qubit: 0 }.matrix().unwrap();
        assert!((s[0][0] - C64::from_polar(1.0, -FRAC_PI_4)).norm() < 1e-15);
        assert!((s[1][1] - C64::from_polar(1.0, FRAC_PI_4)).norm() < 1e-15);
        let rx = Gate::Rx { qubit: 0, angle: 0.7 }.matrix().unwrap();
        let r = Gate::R { qubit: 0, angle: 0.7, phase: 0.0 }.matrix().unwrap();
        assert_eq!(rx, r);
        let ry = Gate::Ry { qubit: 0, angle: 0.7 }.matrix().unwrap();
        assert!((ry[0][1] - C64::new(-(0.35f64).sin(), 0.0)).norm() < 1e-15);
        assert!((ry[1][0] - C64::new((0.35f64).sin(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn parallel_moment_equals_sequential() {
        for (a, b) in [((2, 4), (1, 3)), ((2, 4), (1, 4))] {
            let mut par = Circuit::new(5);
            par.push(vec![Gate::ms(a.0, a.1, 0.3, Axis::X), Gate::ms(b.0, b.1, -0.9, Axis::Y)]);
            let mut seq = Circuit::new(5);
            seq.push(vec![Gate::ms(a.0, a.1, 0.3, Axis::X)]).push(vec![Gate::ms(b.0, b.1, -0.9, Axis::Y)]);
            assert!(dist(&par.unitary().unwrap(), &seq.unitary().unwrap()) < 1e-12);
        }
    }

    #[test]
    fn moment_rules_enforced() {
        let bad = [
            vec![Gate::ms(0, 1, 0.1, Axis::X), Gate::ms(2, 3, 0.1, Axis::X)],
            vec![Gate::ms(0, 1, 0.1, Axis::X), Gate::H { qubit: 1 }],
            vec![Gate::H { qubit: 2 }, Gate::S { qubit: 2 }],
            vec![Gate::ms(0, 1, 0.1, Axis::X), Gate::ms(1, 0, 0.1, Axis::Y)],
            vec![Gate::ms(0, 0, 0.1, Axis::X)],
            vec![Gate::ms(0, 1, 0.1, Axis::Z)],
        ];
        for gates in bad {
            let mut c = Circuit::new(4);
            c.push(gates.clone());
            assert!(matches!(c.validate(), Err(Error::InvalidCircuit(_))), "{gates:?}");
        }
        let mut c = Circuit::new(4);
        c.push(vec![Gate::ms(0, 1, 0.1, Axis::X), Gate::ms(1, 2, 0.1, Axis::Y), Gate::Rz { qubit: 3, angle: 1.0 }]);
        c.validate().unwrap();
        c.push(vec![Gate::H { qubit: 4 }]);
        assert!(matches!(c.validate(), Err(Error::QubitOutOfRange { index: 4, count: 4 })));
    }

    #[test]
    fn text_round_trip() {
        let text = "# layer\nMS 3 5 0.7 X | MS 2 4 0.7 Y\nRZ 1 1.5708\nR 2 1.5707963267948966 0.1 | SDG 3 @ 2e-5\n@ 0.001\n";
        let c = Circuit::parse(text).unwrap();
        assert_eq!(c.qubit_count, 5);
        assert_eq!(c.moments[0].gates[0], Gate::ms(2, 4, 0.7, Axis::X));
        assert_eq!(c.moments[1].duration(&c.timing), 0.0);
        assert_eq!(c.moments[2].duration(&c.timing), 2e-5);
        assert_eq!(c.moments[3].duration(&c.timing), 1e-3);
        assert_eq!(Circuit::parse(&c.to_text()).unwrap(), c);
        assert!(matches!(Circuit::parse("MS 0 1 0.1"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Circuit::parse("H 1\nFOO 2"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(Circuit::parse("QUBITS 2\nH 3"), Err(Error::QubitOutOfRange { .. })));
    }

    #[test]
    fn dephasing_scales_coherence() {
        let mut c = Circuit::new(1);
        c.push(vec![Gate::H { qubit: 0 }]).push_moment(Moment::idle(3e-3));
        c.timing.single_qubit_s = 0.0;
        let t2 = 0.01;
        let out = evolve(&c, &NoiseModel::dephasing(t2), SpinState::zero(1)).unwrap();
        let rho = out.density_matrix();
        assert!((rho[(0, 1)].re - 0.5 * (-3e-3f64 / t2).exp()).abs() < 1e-15);
        assert!((rho[(0, 0)].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn depolarizing_matches_pauli_average() {
        let paulis = [
            [[ONE, ZERO], [ZERO, ONE]],
            [[ZERO, ONE], [ONE, ZERO]],
            [[ZERO, C64::new(0.0, -1.0)], [C64::new(0.0, 1.0), ZERO]],
            [[ONE, ZERO], [ZERO, -ONE]],
        ];
        let to_m = |p: [[C64; 2]; 2]| DMatrix::from_fn(2, 2, |r, c| p[r][c]);
        let id = DMatrix::<C64>::identity(2, 2);
        let mut c = Circuit::new(3);
        c.push(vec![Gate::H { qubit: 0 }, Gate::Ry { qubit: 1, angle: 0.4 }, Gate::Rx { qubit: 2, angle: 1.1 }]);
        c.push(vec![Gate::ms(0, 2, 0.3, Axis::X)]);
        let clean = evolve(&c, &NoiseModel::noiseless(), SpinState::zero(3)).unwrap().density_matrix();
        let p = 0.2;
        let noisy = evolve(&c, &NoiseModel::depolarizing(p), SpinState::zero(3)).unwrap().density_matrix();
        let mut expect = &clean * C64::new(1.0 - p, 0.0);
        for a in paulis {
            for b in paulis {
                let op = to_m(a).kronecker(&id).kronecker(&to_m(b));
                expect += (&op * &clean * op.adjoint()) * C64::new(p / 16.0, 0.0);
            }
        }
        assert!(dist(&noisy, &expect) < 1e-14);
    }

    #[test]
    fn sampling_is_reproducible() {
        let c = bell_circuit(Axis::Y);
        let a = run(&c, &NoiseModel::depolarizing(0.1), Shots::Count(500), 9).unwrap();
        let b = run(&c, &NoiseModel::depolarizing(0.1), Shots::Count(500), 9).unwrap();
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.counts.unwrap().iter().sum::<u64>(), 500);
    }

    #[test]
    fn bell_scan_has_full_contrast_and_period_pi() {
        let c = bell_circuit(Axis::X);
        let phases = scan_phases(2, 16);
        let scan = parity_scan(&c, &[0, 1], &phases, &NoiseModel::noiseless(), Shots::Exact, 0).unwrap();
        // period π: Π(φ) = Π(φ + π)
        let shifted = parity_scan(&c, &[0, 1], &phases.iter().map(|p| p + PI).collect::<Vec<_>>(), &NoiseModel::noiseless(), Shots::Exact, 0).unwrap();
        for (a, b) in scan.points.iter().zip(&shifted.points) {
            assert!((a.parity - b.parity).abs() < 1e-12);
        }
        let pop = even_population(&c, &[0, 1], &NoiseModel::noiseless(), Shots::Exact, 0).unwrap();
        let rep = estimate_fidelity(pop, &scan).unwrap();
        assert!((rep.parity_contrast - 1.0).abs() < 1e-12);
        assert!((rep.fidelity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_formula_on_synthetic_data() {
        let phases = scan_phases(2, 12);
        let points = phases.iter().map(|&p| ScanPoint { phase: p, parity: 0.98 * (2.0 * p + 0.3).cos(), stderr: 0.0 }).collect();
        let scan = ParityScan { qubits: vec![0, 1], points };
        let rep = estimate_fidelity(Estimate { value: 0.99, stderr: 0.0 }, &scan).unwrap();
        assert!((rep.fidelity - 0.985).abs() < 1e-12);
        assert!((rep.phase_offset - 0.3).abs() < 1e-12);
        let short = ParityScan { qubits: vec![0, 1], points: scan.points[..5].to_vec() };
        assert!(matches!(estimate_fidelity(Estimate { value: 1.0, stderr: 0.0 }, &short), Err(Error::Fit(_))));
    }

    #[test]
    fn depolarized_bell_fidelity_recovered() {
        // F = 1 − 3p/4 for the Pauli-averaged channel
        let p = 0.012;
        let c = bell_circuit(Axis::X);
        let noise = NoiseModel::depolarizing(p);
        let pop = even_population(&c, &[0, 1], &noise, Shots::Exact, 0).unwrap();
        let scan = parity_scan(&c, &[0, 1], &scan_phases(2, 16), &noise, Shots::Exact, 0).unwrap();
        let rep = estimate_fidelity(pop, &scan).unwrap();
        assert!((rep.fidelity - (1.0 - 0.75 * p)).abs() < 1e-12);
    }

    #[test]
    fn cross_pairs_of_layers() {
        assert_eq!(cross_pairs((2, 4), (1, 3)), vec![(1, 2), (2, 3), (1, 4), (3, 4)]);
        assert_eq!(cross_pairs((2, 4), (1, 4)), vec![(1, 2)]);
    }
}
