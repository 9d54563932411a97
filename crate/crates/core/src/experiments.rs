//! Simulated demonstrations: parallel-gate parity scans with cross-talk
//! checks, the one-moment GHZ circuit, and Trotterized transverse-field Ising
//! dynamics against an exact reference.

use std::f64::consts::FRAC_PI_4;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::Axis;
use crate::circuit::{
    estimate_fidelity, even_population, evolve, parity_scan, scan_phases, Circuit, FidelityReport, Gate, Moment,
    NoiseModel, ParityScan, Shots, SpinState, Timing,
};
use crate::error::{Error, Result};
use crate::scheduler::{schedule, DependencyMode, GateList, Policy, ScheduleOptions, XxGate};

/// Largest chain handled by [`exact_reference`].
pub const EXACT_REFERENCE_LIMIT: usize = 12;
/// Default scan length for parity analysis.
pub const DEFAULT_SCAN_POINTS: usize = 24;
/// Points with |m| at least this fraction of the spin count count as high-|m|.
pub const HIGH_MAGNETIZATION_FRACTION: f64 = 0.5;

fn distinct(qubits: &[usize], register: usize) -> Result<()> {
    for (k, &q) in qubits.iter().enumerate() {
        if q >= register {
            return Err(Error::QubitOutOfRange { index: q, count: register });
        }
        if qubits[..k].contains(&q) {
            return Err(Error::InvalidConfig(format!("qubit {} used twice", q + 1)));
        }
    }
    Ok(())
}

/// Bell-pair analysis of one gate and parity scans of its cross pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairAnalysis {
    pub pair: (usize, usize),
    pub report: FidelityReport,
    pub scan: ParityScan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelLayerResult {
    pub gates: Vec<PairAnalysis>,
    pub cross: Vec<PairAnalysis>,
}

/// Runs one parallel layer MS(a, π/4) on X with MS(b, π/4) on Y from |0…0⟩
/// and analyses the gated pairs and the four cross pairs.
pub fn parallel_layer_experiment(
    register: usize,
    pair_x: (usize, usize),
    pair_y: (usize, usize),
    noise: &NoiseModel,
    shots: Shots,
    seed: u64,
) -> Result<ParallelLayerResult> {
    let mut prep = Circuit::new(register);
    prep.push(vec![Gate::ms(pair_x.0, pair_x.1, FRAC_PI_4, Axis::X), Gate::ms(pair_y.0, pair_y.1, FRAC_PI_4, Axis::Y)]);
    prep.validate()?;
    let phases = scan_phases(2, DEFAULT_SCAN_POINTS);
    let analyse = |pair: (usize, usize), k: u64| -> Result<PairAnalysis> {
        let q = [pair.0, pair.1];
        let s = seed.wrapping_add(k.wrapping_mul(0x9E37_79B9));
        let pop = even_population(&prep, &q, noise, shots, s)?;
        let scan = parity_scan(&prep, &q, &phases, noise, shots, s ^ 1)?;
        Ok(PairAnalysis { pair, report: estimate_fidelity(pop, &scan)?, scan })
    };
    let gates = vec![analyse(pair_x, 0)?, analyse(pair_y, 1)?];
    let cross = crate::circuit::cross_pairs(pair_x, pair_y)
        .into_iter()
        .enumerate()
        .map(|(k, p)| analyse(p, 2 + k as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(ParallelLayerResult { gates, cross })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhzConfig {
    pub register: usize,
    /// (a, b, c): MS(a, b) and MS(b, c) share b.
    pub qubits: [usize; 3],
    /// Put MS(a, b) on the Y bus instead of X.
    #[serde(default)]
    pub swap_buses: bool,
    pub scan_points: usize,
}

impl Default for GhzConfig {
    /// Labels 3, 5, 2 of a five-qubit register: pairs {3,5} and {5,2}.
    fn default() -> Self {
        GhzConfig { register: 5, qubits: [2, 4, 1], swap_buses: false, scan_points: DEFAULT_SCAN_POINTS }
    }
}

impl GhzConfig {
    pub fn validate(&self) -> Result<()> {
        distinct(&self.qubits, self.register)?;
        if self.scan_points < crate::circuit::MIN_SCAN_POINTS {
            return Err(Error::InvalidConfig(format!("{} scan points, need at least {}", self.scan_points, crate::circuit::MIN_SCAN_POINTS)));
        }
        Ok(())
    }

    /// One parallel MS moment sharing b, S† on the outer qubits, H on all three.
    pub fn circuit(&self) -> Result<Circuit> {
        self.validate()?;
        let [a, b, c] = self.qubits;
        let (first, second) = if self.swap_buses { (Axis::Y, Axis::X) } else { (Axis::X, Axis::Y) };
        let mut circ = Circuit::new(self.register);
        circ.push(vec![Gate::ms(a, b, FRAC_PI_4, first), Gate::ms(b, c, FRAC_PI_4, second)]);
        circ.push(vec![Gate::Sdg { qubit: a }, Gate::Sdg { qubit: c }]);
        circ.push(vec![Gate::H { qubit: a }, Gate::H { qubit: b }, Gate::H { qubit: c }]);
        circ.validate()?;
        Ok(circ)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhzResult {
    pub report: FidelityReport,
    /// Populations of the three GHZ qubits, indexed by the bits (a b c).
    pub populations: Vec<f64>,
    pub scan: ParityScan,
    /// ⟨ψ|ρ|ψ⟩ against the noiseless output.
    pub injected_fidelity: f64,
}

pub fn ghz_experiment(config: &GhzConfig, noise: &NoiseModel, shots: Shots, seed: u64) -> Result<GhzResult> {
    let circ = config.circuit()?;
    let q = config.qubits;
    let ideal = evolve(&circ, &NoiseModel::noiseless(), SpinState::zero(config.register))?;
    let SpinState::Pure { amplitudes: target, .. } = ideal else { unreachable!("noiseless runs stay pure") };
    let state = evolve(&circ, noise, SpinState::zero(config.register))?;
    let n = config.register;
    let mut populations = vec![0.0; 8];
    for (idx, p) in state.probabilities().iter().enumerate() {
        let bits = q.iter().fold(0, |acc, &j| (acc << 1) | ((idx >> (n - 1 - j)) & 1));
        populations[bits] += p;
    }
    let pop = even_population(&circ, &q, noise, shots, seed)?;
    let scan = parity_scan(&circ, &q, &scan_phases(3, config.scan_points), noise, shots, seed ^ 1)?;
    Ok(GhzResult { report: estimate_fidelity(pop, &scan)?, populations, scan, injected_fidelity: state.fidelity_to(&target) })
}

/// Parity-estimated fidelity of a single MS gate under `ms_depolarizing = p`.
pub fn single_gate_fidelity(p: f64) -> Result<f64> {
    let c = crate::circuit::bell_circuit(Axis::X);
    let noise = NoiseModel::depolarizing(p);
    let pop = even_population(&c, &[0, 1], &noise, Shots::Exact, 0)?;
    let scan = parity_scan(&c, &[0, 1], &scan_phases(2, DEFAULT_SCAN_POINTS), &noise, Shots::Exact, 0)?;
    Ok(estimate_fidelity(pop, &scan)?.fidelity)
}

/// Depolarizing probability at which a single MS gate reaches `target`, by bisection.
pub fn calibrate_depolarizing(target: f64) -> Result<f64> {
    let worst = single_gate_fidelity(1.0)?;
    if !(target > worst && target <= 1.0) {
        return Err(Error::InvalidConfig(format!("target fidelity {target} outside ({worst}, 1]")));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if single_gate_fidelity(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrotterMode {
    /// Bond gates packed two per moment on the X and Y buses.
    Parallel,
    /// One bond gate per moment.
    Sequential,
}

/// H = −J Σ σ_x^i σ_x^{i+1} − B Σ σ_z^i on an open chain, time in units of 1/J.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfimConfig {
    pub spins: usize,
    pub coupling: f64,
    /// B/J.
    pub field_ratio: f64,
    /// Trotter step in units of 1/J.
    pub dt: f64,
    pub steps: usize,
    pub timing: Timing,
}

impl Default for TfimConfig {
    fn default() -> Self {
        TfimConfig {
            spins: 5,
            coupling: 1.0,
            field_ratio: 0.096,
            dt: std::f64::consts::PI / 10.0,
            steps: 20,
            timing: Timing::default(),
        }
    }
}

impl TfimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.spins < 2 {
            return Err(Error::InvalidConfig(format!("TFIM needs at least 2 spins, got {}", self.spins)));
        }
        for (name, v) in [("coupling", self.coupling), ("field_ratio", self.field_ratio), ("dt", self.dt)] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite, got {v}")));
            }
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        self.timing.validate()
    }

    pub fn field(&self) -> f64 {
        self.field_ratio * self.coupling
    }

    /// Same total time with the step divided by `k`.
    pub fn refined(&self, k: usize) -> TfimConfig {
        TfimConfig { dt: self.dt / k as f64, steps: self.steps * k, ..self.clone() }
    }

    /// One Trotter step: the bond gates, then the field as free RZ rotations.
    pub fn step_circuit(&self, mode: TrotterMode) -> Result<Circuit> {
        self.validate()?;
        let n = self.spins;
        let chi = self.coupling * self.dt;
        let bonds: Vec<XxGate> = (0..n - 1).map(|i| XxGate { pair: (i, i + 1), angle: chi }).collect();
        let mut c = Circuit::new(n).with_timing(self.timing);
        match mode {
            TrotterMode::Parallel => {
                // even bonds first, then odd: each group is disjoint
                let mut ordered: Vec<XxGate> = bonds.iter().step_by(2).copied().collect();
                ordered.extend(bonds.iter().skip(1).step_by(2).copied());
                let list = GateList::new(n, ordered, DependencyMode::CommutingXx)?;
                let s = schedule(&list, Policy::Greedy, &ScheduleOptions { forbid_shared_ion: true })?;
                c.append(&s.to_circuit(self.timing))?;
            }
            TrotterMode::Sequential => {
                for g in &bonds {
                    c.push(vec![Gate::ms(g.pair.0, g.pair.1, g.angle, Axis::X)]);
                }
            }
        }
        let theta = -2.0 * self.field() * self.dt;
        c.push_moment(Moment::new((0..n).map(|q| Gate::Rz { qubit: q, angle: theta }).collect()));
        Ok(c)
    }
}

/// m(t) = Σ_i ⟨σ_z^i⟩ sampled after every step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagnetizationTrace {
    /// In units of 1/J.
    pub times: Vec<f64>,
    /// Circuit wall time at each point (zero for the exact reference).
    pub wall_times_s: Vec<f64>,
    pub magnetization: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl MagnetizationTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,wall_time_s,magnetization,stderr\n");
        for k in 0..self.times.len() {
            out.push_str(&format!(
                "{:?},{:?},{:?},{:?}\n",
                self.times[k], self.wall_times_s[k], self.magnetization[k], self.stderr[k]
            ));
        }
        out
    }

    pub fn max_deviation(&self, other: &MagnetizationTrace) -> f64 {
        self.magnetization.iter().zip(&other.magnetization).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn sampled_magnetization(state: &SpinState, shots: Shots, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    match shots {
        Shots::Exact => Ok((state.total_z(), 0.0)),
        Shots::Count(n) => {
            let q = state.qubits() as f64;
            let p = state.probabilities();
            let dist = WeightedIndex::new(&p).map_err(|e| Error::InvalidState(format!("cannot sample: {e}")))?;
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let m = q - 2.0 * dist.sample(rng).count_ones() as f64;
                s1 += m;
                s2 += m * m;
            }
            let mean = s1 / n as f64;
            let var = if n > 1 { (s2 - n as f64 * mean * mean).max(0.0) / (n as f64 - 1.0) } else { 0.0 };
            Ok((mean, (var / n as f64).sqrt()))
        }
    }
}

/// Trotterized evolution from |0…0⟩, measuring m before the first step and
/// after each step.
pub fn tfim_trotter(config: &TfimConfig, mode: TrotterMode, noise: &NoiseModel, shots: Shots, seed: u64) -> Result<MagnetizationTrace> {
    let step = config.step_circuit(mode)?;
    let step_wall = step.duration();
    let mut state = SpinState::zero(config.spins);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = MagnetizationTrace { times: Vec::new(), wall_times_s: Vec::new(), magnetization: Vec::new(), stderr: Vec::new() };
    for k in 0..=config.steps {
        if k > 0 {
            state = evolve(&step, noise, state)?;
        }
        let (m, e) = sampled_magnetization(&state, shots, &mut rng)?;
        trace.times.push(k as f64 * config.dt);
        trace.wall_times_s.push(k as f64 * step_wall);
        trace.magnetization.push(m);
        trace.stderr.push(e);
    }
    Ok(trace)
}

/// m(t) at the Trotter sample times from the dense propagator of H.
pub fn exact_reference(config: &TfimConfig) -> Result<MagnetizationTrace> {
    config.validate()?;
    let n = config.spins;
    if n > EXACT_REFERENCE_LIMIT {
        return Err(Error::SizeLimit(format!("exact reference for {n} spins (limit {EXACT_REFERENCE_LIMIT})")));
    }
    let d = 1usize << n;
    let bit = |j: usize| 1usize << (n - 1 - j);
    let mut h = DMatrix::<f64>::zeros(d, d);
    for b in 0..d {
        let z: f64 = (0..n).map(|j| if b & bit(j) == 0 { 1.0 } else { -1.0 }).sum();
        h[(b, b)] -= config.field() * z;
        for j in 0..n - 1 {
            h[(b ^ bit(j) ^ bit(j + 1), b)] -= config.coupling;
        }
    }
    let eig = SymmetricEigen::new(h);
    let v = eig.eigenvectors.map(|x| C64::new(x, 0.0));
    // ψ(0) = |0…0⟩, so its eigenbasis coefficients are the first row of V
    let c0: DVector<C64> = v.row(0).transpose();
    let step_phase = |t: f64| DVector::from_iterator(d, eig.eigenvalues.iter().map(|&e| C64::from_polar(1.0, -e * t)));
    let mut trace = MagnetizationTrace { times: Vec::new(), wall_times_s: Vec::new(), magnetization: Vec::new(), stderr: Vec::new() };
    for k in 0..=config.steps {
        let t = k as f64 * config.dt;
        let psi = &v * c0.component_mul(&step_phase(t));
        let state = SpinState::Pure { qubits: n, amplitudes: psi.iter().copied().collect() };
        trace.times.push(t);
        trace.wall_times_s.push(0.0);
        trace.magnetization.push(state.total_z());
        trace.stderr.push(0.0);
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeErrorPoint {
    pub time: f64,
    pub m_noiseless: f64,
    pub error_parallel: f64,
    pub error_sequential: f64,
    /// error_sequential / error_parallel; `None` when the parallel error is zero.
    pub ratio: Option<f64>,
    pub high_magnetization: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeErrorReport {
    pub points: Vec<RuntimeErrorPoint>,
    pub max_error: f64,
}

impl RuntimeErrorReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,m_noiseless,error_parallel,error_sequential,ratio,high_magnetization\n");
        for p in &self.points {
            let r = p.ratio.map_or(String::new(), |r| format!("{r:?}"));
            out.push_str(&format!(
                "{:?},{:?},{:?},{:?},{r},{}\n",
                p.time, p.m_noiseless, p.error_parallel, p.error_sequential, p.high_magnetization
            ));
        }
        out
    }

    /// Ratios at high-|m| points after the first step.
    pub fn high_magnetization_ratios(&self) -> Vec<f64> {
        self.points.iter().filter(|p| p.high_magnetization).filter_map(|p| p.ratio).collect()
    }
}

/// |m_noisy − m_noiseless| for both modes with identical per-moment durations.
pub fn runtime_error_comparison(config: &TfimConfig, noise: &NoiseModel) -> Result<RuntimeErrorReport> {
    let clean = tfim_trotter(config, TrotterMode::Parallel, &NoiseModel::noiseless(), Shots::Exact, 0)?;
    let par = tfim_trotter(config, TrotterMode::Parallel, noise, Shots::Exact, 0)?;
    let seq = tfim_trotter(config, TrotterMode::Sequential, noise, Shots::Exact, 0)?;
    let threshold = HIGH_MAGNETIZATION_FRACTION * config.spins as f64;
    let points: Vec<RuntimeErrorPoint> = (0..clean.times.len())
        .map(|k| {
            let m = clean.magnetization[k];
            let ep = (par.magnetization[k] - m).abs();
            let es = (seq.magnetization[k] - m).abs();
            RuntimeErrorPoint {
                time: clean.times[k],
                m_noiseless: m,
                error_parallel: ep,
                error_sequential: es,
                ratio: (ep > 0.0).then(|| es / ep),
                high_magnetization: m.abs() >= threshold,
            }
        })
        .collect();
    let max_error = points.iter().map(|p| p.error_parallel.max(p.error_sequential)).fold(0.0, f64::max);
    Ok(RuntimeErrorReport { points, max_error })
}
