//! Equilibrium geometry and normal modes of a linear ion chain.
//!
//! Internally everything is dimensionless: lengths in units of the Coulomb
//! length ℓ and frequencies in units of the axial trap frequency ω_z. The
//! public types carry SI values (rad/s, kg, 1/m).

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units;

const NEWTON_MAX_ITER: usize = 200;
const NEWTON_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const RADIAL: [Axis; 2] = [Axis::X, Axis::Y];
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn other_radial(self) -> Option<Axis> {
        match self {
            Axis::X => Some(Axis::Y),
            Axis::Y => Some(Axis::X),
            Axis::Z => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "X" | "x" => Ok(Axis::X),
            "Y" | "y" => Ok(Axis::Y),
            "Z" | "z" => Ok(Axis::Z),
            other => Err(Error::InvalidConfig(format!("unknown axis '{other}'"))),
        }
    }
}

/// Projection of the drive wavevector difference Δk onto each principal axis (1/m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveVectors {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WaveVectors {
    pub fn along(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }
}

impl Default for WaveVectors {
    /// Raman beams at 45° to both radial axes.
    fn default() -> Self {
        let radial = units::RAMAN_DELTA_K / 2f64.sqrt();
        WaveVectors { x: radial, y: radial, z: 0.0 }
    }
}

/// Trap and species parameters. Frequencies are angular (rad/s).
#[derive(Clone, Debug, PartialEq)]
pub struct TrapConfig {
    pub ion_count: usize,
    pub axial_freq: f64,
    pub radial_freq_x: f64,
    pub radial_freq_y: f64,
    pub ion_mass: f64,
    pub wavevector: WaveVectors,
}

impl Default for TrapConfig {
    /// Seven ¹⁷¹Yb⁺ ions, ω_z/2π = 0.4 MHz, ω_x/2π = 3.0 MHz, ω_y/2π = 2.9 MHz.
    fn default() -> Self {
        TrapConfig {
            ion_count: 7,
            axial_freq: 2.0 * PI * 0.4e6,
            radial_freq_x: 2.0 * PI * 3.0e6,
            radial_freq_y: 2.0 * PI * 2.9e6,
            ion_mass: units::YB171_MASS,
            wavevector: WaveVectors::default(),
        }
    }
}

impl TrapConfig {
    pub fn with_ion_count(mut self, n: usize) -> Self {
        self.ion_count = n;
        self
    }

    pub fn axis_freq(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.radial_freq_x,
            Axis::Y => self.radial_freq_y,
            Axis::Z => self.axial_freq,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.ion_count == 0 {
            return bad("ion_count must be at least 1".into());
        }
        for (name, v) in [
            ("axial_freq", self.axial_freq),
            ("radial_freq_x", self.radial_freq_x),
            ("radial_freq_y", self.radial_freq_y),
            ("ion_mass", self.ion_mass),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and positive, got {v}"));
            }
        }
        for axis in Axis::ALL {
            let k = self.wavevector.along(axis);
            if !k.is_finite() {
                return bad(format!("wavevector along {axis} must be finite"));
            }
        }
        if self.radial_freq_x == self.radial_freq_y {
            return bad("degenerate radial frequencies: ω_x must differ from ω_y".into());
        }
        if self.radial_freq_x <= self.axial_freq || self.radial_freq_y <= self.axial_freq {
            return bad("radial frequencies must exceed the axial frequency".into());
        }
        Ok(())
    }

    /// Coulomb length ℓ in metres.
    pub fn length_unit(&self) -> f64 {
        units::coulomb_length(self.ion_mass, self.axial_freq)
    }
}

/// On-disk form of [`TrapConfig`] with explicit SI units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfigFile {
    pub ion_count: usize,
    pub axial_freq_hz: f64,
    pub radial_freq_x_hz: f64,
    pub radial_freq_y_hz: f64,
    #[serde(default = "default_mass")]
    pub ion_mass_kg: f64,
    #[serde(default)]
    pub wavevector_per_m: Option<WaveVectors>,
}

fn default_mass() -> f64 {
    units::YB171_MASS
}

impl From<&TrapConfig> for TrapConfigFile {
    fn from(c: &TrapConfig) -> Self {
        TrapConfigFile {
            ion_count: c.ion_count,
            axial_freq_hz: units::angular_to_hz(c.axial_freq),
            radial_freq_x_hz: units::angular_to_hz(c.radial_freq_x),
            radial_freq_y_hz: units::angular_to_hz(c.radial_freq_y),
            ion_mass_kg: c.ion_mass,
            wavevector_per_m: Some(c.wavevector),
        }
    }
}

impl TryFrom<TrapConfigFile> for TrapConfig {
    type Error = Error;

    fn try_from(f: TrapConfigFile) -> Result<Self> {
        let cfg = TrapConfig {
            ion_count: f.ion_count,
            axial_freq: units::hz_to_angular(f.axial_freq_hz),
            radial_freq_x: units::hz_to_angular(f.radial_freq_x_hz),
            radial_freq_y: units::hz_to_angular(f.radial_freq_y_hz),
            ion_mass: f.ion_mass_kg,
            wavevector: f.wavevector_per_m.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Dimensionless axial equilibrium positions (units of ℓ), sorted ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPositions {
    pub positions: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl EquilibriumPositions {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn to_metres(&self, config: &TrapConfig) -> Vec<f64> {
        let l = config.length_unit();
        self.positions.iter().map(|u| u * l).collect()
    }
}

/// Dimensionless force F_i = u_i − Σ_{j≠i} sgn(u_i − u_j)/(u_i − u_j)².
pub fn axial_force(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|i| {
            let coulomb: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d = u[i] - u[j];
                    d.signum() / (d * d)
                })
                .sum();
            u[i] - coulomb
        })
        .collect()
}

/// Dimensionless potential Σ u_i²/2 + Σ_{i<j} 1/|u_i − u_j|.
pub fn axial_potential(u: &[f64]) -> f64 {
    let n = u.len();
    let mut v: f64 = u.iter().map(|x| 0.5 * x * x).sum();
    for i in 0..n {
        for j in i + 1..n {
            v += 1.0 / (u[i] - u[j]).abs();
        }
    }
    v
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Axial Hessian of the dimensionless potential.
fn axial_hessian(u: &[f64]) -> DMatrix<f64> {
    let n = u.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 1.0;
        for j in 0..n {
            if i != j {
                let c = 1.0 / (u[i] - u[j]).abs().powi(3);
                h[(i, j)] = -2.0 * c;
                diag += 2.0 * c;
            }
        }
        h[(i, i)] = diag;
    }
    h
}

/// Radial Hessian with trap anisotropy β = ω_r/ω_z.
fn radial_hessian(u: &[f64], beta: f64) -> DMatrix<f64> {
    let n = u.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = beta * beta;
        for j in 0..n {
            if i != j {
                let c = 1.0 / (u[i] - u[j]).abs().powi(3);
                h[(i, j)] = c;
                diag -= c;
            }
        }
        h[(i, i)] = diag;
    }
    h
}

/// Newton iteration on the force balance, started from uniform spacing at the
/// empirical minimum separation 2.018/N^0.559.
pub fn solve_equilibrium(config: &TrapConfig) -> Result<EquilibriumPositions> {
    config.validate()?;
    solve_equilibrium_n(config.ion_count)
}

pub(crate) fn solve_equilibrium_n(n: usize) -> Result<EquilibriumPositions> {
    if n == 1 {
        return Ok(EquilibriumPositions { positions: vec![0.0], residual_norm: 0.0, iterations: 0 });
    }
    let spacing = 2.018 / (n as f64).powf(0.559);
    let mid = (n as f64 - 1.0) / 2.0;
    let mut u: Vec<f64> = (0..n).map(|i| spacing * (i as f64 - mid)).collect();
    let mut f = axial_force(&u);
    let mut res = max_abs(&f);

    for iter in 0..NEWTON_MAX_ITER {
        if res < NEWTON_TOL {
            symmetrize(&mut u);
            let res = max_abs(&axial_force(&u));
            return Ok(EquilibriumPositions { positions: u, residual_norm: res, iterations: iter });
        }
        // The force Jacobian equals the axial Hessian.
        let jac = axial_hessian(&u);
        let rhs = DVector::from_iterator(n, f.iter().map(|x| -x));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or(Error::SolverFailure { iterations: iter, residual: res })?;

        // Backtrack to keep ordering and reduce the residual.
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(x, d)| x + lambda * d).collect();
            let ordered = trial.windows(2).all(|w| w[1] > w[0]);
            if ordered {
                let ft = axial_force(&trial);
                let rt = max_abs(&ft);
                if rt < res || lambda < 1e-6 {
                    u = trial;
                    f = ft;
                    res = rt;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-12 {
                return Err(Error::SolverFailure { iterations: iter, residual: res });
            }
        }
    }
    Err(Error::SolverFailure { iterations: NEWTON_MAX_ITER, residual: res })
}

/// Enforce the reflection symmetry u_i = −u_{N−1−i}.
fn symmetrize(u: &mut [f64]) {
    let n = u.len();
    let orig = u.to_vec();
    for i in 0..n {
        u[i] = 0.5 * (orig[i] - orig[n - 1 - i]);
    }
}

/// Normal modes of one principal axis.
///
/// `mode_vectors` and `lamb_dicke` are ions × modes; column k is mode k.
/// Modes are sorted by descending frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSet {
    pub axis: Axis,
    pub frequencies: Vec<f64>,
    pub mode_vectors: DMatrix<f64>,
    pub lamb_dicke: DMatrix<f64>,
    /// Index of each retained mode in the full (unrestricted) set.
    pub mode_labels: Vec<usize>,
}

impl ModeSet {
    pub fn ion_count(&self) -> usize {
        self.mode_vectors.nrows()
    }

    pub fn mode_count(&self) -> usize {
        self.frequencies.len()
    }

    pub fn eta(&self, ion: usize, mode: usize) -> f64 {
        self.lamb_dicke[(ion, mode)]
    }

    /// Keep only the listed modes (indices into this set).
    pub fn restrict(&self, modes: &[usize]) -> Result<ModeSet> {
        if let Some(&bad) = modes.iter().find(|&&k| k >= self.mode_count()) {
            return Err(Error::InvalidConfig(format!(
                "mode {bad} out of range for {} modes",
                self.mode_count()
            )));
        }
        Ok(ModeSet {
            axis: self.axis,
            frequencies: modes.iter().map(|&k| self.frequencies[k]).collect(),
            mode_vectors: self.mode_vectors.select_columns(modes),
            lamb_dicke: self.lamb_dicke.select_columns(modes),
            mode_labels: modes.iter().map(|&k| self.mode_labels[k]).collect(),
        })
    }

    pub fn max_frequency(&self) -> f64 {
        self.frequencies.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn min_frequency(&self) -> f64 {
        self.frequencies.iter().cloned().fold(f64::MAX, f64::min)
    }

    pub fn bandwidth(&self) -> f64 {
        self.max_frequency() - self.min_frequency()
    }
}

/// Eigen-decomposition of the axis Hessian, returning frequencies in rad/s.
pub fn normal_modes(config: &TrapConfig, eq: &EquilibriumPositions, axis: Axis) -> Result<ModeSet> {
    config.validate()?;
    if eq.len() != config.ion_count {
        return Err(Error::InvalidConfig(format!(
            "equilibrium has {} ions but config has {}",
            eq.len(),
            config.ion_count
        )));
    }
    let n = eq.len();
    let hess = match axis {
        Axis::Z => axial_hessian(&eq.positions),
        Axis::X | Axis::Y => radial_hessian(&eq.positions, config.axis_freq(axis) / config.axial_freq),
    };
    let eig = SymmetricEigen::new(hess);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut frequencies = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[k];
        if !(lambda > 0.0) {
            return Err(Error::ChainInstability { axis, eigenvalue: lambda });
        }
        frequencies.push(config.axial_freq * lambda.sqrt());
        let mut v = eig.eigenvectors.column(k).into_owned();
        // Sign convention: the largest-magnitude entry is positive.
        let mut pivot = 0;
        for i in 1..n {
            if v[i].abs() > v[pivot].abs() + 1e-12 {
                pivot = i;
            }
        }
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(col, &v);
    }

    let mut modes = ModeSet {
        axis,
        frequencies,
        mode_vectors: vectors,
        lamb_dicke: DMatrix::zeros(n, n),
        mode_labels: (0..n).collect(),
    };
    modes.lamb_dicke = lamb_dicke_matrix(config, &modes);
    Ok(modes)
}

/// η_k^i = Δk · b_k^i · sqrt(ħ / (2 M ω_k)).
pub fn lamb_dicke_matrix(config: &TrapConfig, modes: &ModeSet) -> DMatrix<f64> {
    let dk = config.wavevector.along(modes.axis);
    DMatrix::from_fn(modes.ion_count(), modes.mode_count(), |i, k| {
        let zpf = (units::HBAR / (2.0 * config.ion_mass * modes.frequencies[k])).sqrt();
        dk * modes.mode_vectors[(i, k)] * zpf
    })
}

/// Convenience: equilibrium plus the three mode sets.
#[derive(Clone, Debug)]
pub struct IonChain {
    pub config: TrapConfig,
    pub equilibrium: EquilibriumPositions,
    pub x: ModeSet,
    pub y: ModeSet,
    pub z: ModeSet,
}

impl IonChain {
    pub fn new(config: TrapConfig) -> Result<Self> {
        let equilibrium = solve_equilibrium(&config)?;
        let x = normal_modes(&config, &equilibrium, Axis::X)?;
        let y = normal_modes(&config, &equilibrium, Axis::Y)?;
        let z = normal_modes(&config, &equilibrium, Axis::Z)?;
        Ok(IonChain { config, equilibrium, x, y, z })
    }

    pub fn modes(&self, axis: Axis) -> &ModeSet {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
            Axis::Z => &self.z,
        }
    }

    pub fn separation(&self) -> SpectralSeparation {
        spectral_separation(&self.x, &self.y)
    }
}

/// Whether the X and Y mode bands overlap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSeparation {
    pub x_band_hz: (f64, f64),
    pub y_band_hz: (f64, f64),
    pub x_bandwidth_hz: f64,
    pub y_bandwidth_hz: f64,
    /// Distance between the bands; negative when they overlap.
    pub gap_hz: f64,
    pub disjoint: bool,
}

pub fn spectral_separation(x: &ModeSet, y: &ModeSet) -> SpectralSeparation {
    let xb = (units::angular_to_hz(x.min_frequency()), units::angular_to_hz(x.max_frequency()));
    let yb = (units::angular_to_hz(y.min_frequency()), units::angular_to_hz(y.max_frequency()));
    let gap = if xb.0 >= yb.1 { xb.0 - yb.1 } else if yb.0 >= xb.1 { yb.0 - xb.1 } else {
        -(xb.1.min(yb.1) - xb.0.max(yb.0))
    };
    SpectralSeparation {
        x_band_hz: xb,
        y_band_hz: yb,
        x_bandwidth_hz: xb.1 - xb.0,
        y_bandwidth_hz: yb.1 - yb.0,
        gap_hz: gap,
        disjoint: gap > 0.0,
    }
}

/// JSON form of a mode set: frequencies in Hz, matrices row-major (rows are ions).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSetRecord {
    pub axis: Axis,
    pub frequencies_hz: Vec<f64>,
    pub mode_vectors: Vec<Vec<f64>>,
    pub lamb_dicke: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl From<&ModeSet> for ModeSetRecord {
    fn from(m: &ModeSet) -> Self {
        ModeSetRecord {
            axis: m.axis,
            frequencies_hz: m.frequencies.iter().map(|&w| units::angular_to_hz(w)).collect(),
            mode_vectors: rows(&m.mode_vectors),
            lamb_dicke: rows(&m.lamb_dicke),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(n: usize) -> TrapConfig {
        TrapConfig::default().with_ion_count(n)
    }

    #[test]
    fn single_ion_sits_at_centre() {
        let eq = solve_equilibrium(&cfg(1)).unwrap();
        assert_eq!(eq.positions, vec![0.0]);
        let x = normal_modes(&cfg(1), &eq, Axis::X).unwrap();
        assert_relative_eq!(x.frequencies[0], cfg(1).radial_freq_x, max_relative = 1e-14);
        assert_relative_eq!(x.mode_vectors[(0, 0)], 1.0);
    }

    #[test]
    fn two_and_three_ion_closed_forms() {
        let eq2 = solve_equilibrium(&cfg(2)).unwrap();
        let a = 0.25f64.cbrt();
        assert_relative_eq!(eq2.positions[0], -a, epsilon = 1e-13);
        assert_relative_eq!(eq2.positions[1], a, epsilon = 1e-13);

        let eq3 = solve_equilibrium(&cfg(3)).unwrap();
        let b = 1.25f64.cbrt();
        assert!(eq3.positions[1].abs() < 1e-14);
        assert_relative_eq!(eq3.positions[2], b, epsilon = 1e-13);
        assert_relative_eq!(eq3.positions[0], -b, epsilon = 1e-13);
    }

    #[test]
    fn equilibria_are_symmetric_and_converged() {
        for n in 1..=20 {
            let eq = solve_equilibrium(&cfg(n)).unwrap();
            assert!(eq.residual_norm < 1e-12, "n={n} residual {}", eq.residual_norm);
            assert!(eq.positions.iter().sum::<f64>().abs() < 1e-12);
            assert!(eq.positions.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn two_ion_mode_frequencies() {
        let c = cfg(2);
        let eq = solve_equilibrium(&c).unwrap();
        let z = normal_modes(&c, &eq, Axis::Z).unwrap();
        assert_relative_eq!(z.frequencies[0], 3f64.sqrt() * c.axial_freq, max_relative = 1e-12);
        assert_relative_eq!(z.frequencies[1], c.axial_freq, max_relative = 1e-12);

        let x = normal_modes(&c, &eq, Axis::X).unwrap();
        let wx = c.radial_freq_x;
        let wz = c.axial_freq;
        assert_relative_eq!(x.frequencies[0], wx, max_relative = 1e-12);
        assert_relative_eq!(x.frequencies[1], (wx * wx - wz * wz).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn lamb_dicke_symmetry_for_two_ions() {
        let c = cfg(2);
        let eq = solve_equilibrium(&c).unwrap();
        let x = normal_modes(&c, &eq, Axis::X).unwrap();
        assert_relative_eq!(x.eta(0, 0), x.eta(1, 0), max_relative = 1e-12);
        assert_relative_eq!(x.eta(0, 1), -x.eta(1, 1), max_relative = 1e-12);
        assert!(x.eta(0, 1) > 0.0);

        let c1 = cfg(1);
        let x1 = normal_modes(&c1, &solve_equilibrium(&c1).unwrap(), Axis::X).unwrap();
        let expected = c1.wavevector.x * (units::HBAR / (2.0 * c1.ion_mass * c1.radial_freq_x)).sqrt();
        assert_relative_eq!(x1.eta(0, 0), expected, max_relative = 1e-14);
    }

    #[test]
    fn radial_com_is_highest_and_uniform() {
        let c = cfg(7);
        let eq = solve_equilibrium(&c).unwrap();
        for axis in Axis::RADIAL {
            let m = normal_modes(&c, &eq, axis).unwrap();
            assert_relative_eq!(m.frequencies[0], c.axis_freq(axis), max_relative = 1e-12);
            let u = 1.0 / 7f64.sqrt();
            for i in 0..7 {
                assert_relative_eq!(m.mode_vectors[(i, 0)], u, epsilon = 1e-10);
            }
            assert!(m.frequencies.iter().all(|&w| w <= c.axis_freq(axis) * (1.0 + 1e-12)));
        }
        let z = normal_modes(&c, &eq, Axis::Z).unwrap();
        assert!(z.frequencies.iter().all(|&w| w >= c.axial_freq * (1.0 - 1e-12)));
    }

    #[test]
    fn weak_radial_confinement_is_unstable() {
        let mut c = cfg(20);
        c.radial_freq_x = 1.5 * c.axial_freq;
        c.radial_freq_y = 1.6 * c.axial_freq;
        let eq = solve_equilibrium(&c).unwrap();
        assert!(matches!(normal_modes(&c, &eq, Axis::X), Err(Error::ChainInstability { .. })));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(3);
        c.radial_freq_y = c.radial_freq_x;
        assert!(c.validate().is_err());
        let mut c = cfg(3);
        c.radial_freq_x = 0.5 * c.axial_freq;
        assert!(c.validate().is_err());
        assert!(cfg(0).validate().is_err());
    }

    #[test]
    fn radial_band_separation_is_reported() {
        // Default trap: 100 kHz split is smaller than the 7-ion radial bandwidth.
        let chain = IonChain::new(TrapConfig::default()).unwrap();
        let sep = chain.separation();
        assert!(!sep.disjoint);
        assert!(sep.gap_hz < 0.0);
        assert!(sep.x_bandwidth_hz > 1e5);

        let c = TrapConfig { radial_freq_y: 2.0 * PI * 2.4e6, ..TrapConfig::default() };
        let sep = IonChain::new(c).unwrap().separation();
        assert!(sep.disjoint);
        assert!((sep.gap_hz - (sep.x_band_hz.0 - sep.y_band_hz.1)).abs() < 1e-6);
    }

    #[test]
    fn restrict_keeps_labels() {
        let chain = IonChain::new(TrapConfig::default()).unwrap();
        let r = chain.x.restrict(&[0, 3]).unwrap();
        assert_eq!(r.mode_labels, vec![0, 3]);
        assert_eq!(r.mode_count(), 2);
        assert_eq!(r.ion_count(), 7);
        assert!(chain.x.restrict(&[9]).is_err());
    }
}
