//! Segmented amplitude-modulated MS pulses: phase-space displacements,
//! gate angle, and closure-constrained design.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::chain::{Axis, ModeSet};
use crate::error::{Error, Result};
use crate::integrals::{exp_integral, nested_exp_integral};
use crate::units;

/// Detuning offset beyond the highest sideband used by [`default_detuning`].
pub const DEFAULT_DETUNING_OFFSET: f64 = 2.0 * PI * 3e3;

/// Lamb–Dicke metric above which a design is flagged.
pub const LAMB_DICKE_WARN: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub amplitude_p: f64,
    pub amplitude_q: f64,
}

/// Amplitude-modulated MS drive on one ion pair.
///
/// `pair` holds ion indices into the chain. Amplitudes are Rabi frequencies in
/// rad/s; a negative amplitude is a π phase flip of that segment.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseSchedule {
    pub pair: (usize, usize),
    pub axis: Axis,
    /// Beat-note offset μ from the carrier (rad/s).
    pub detuning: f64,
    /// Motional phases (φ_p, φ_q).
    pub phases: (f64, f64),
    pub segments: Vec<Segment>,
}

/// Target of a gate: pair, bus axis and angle χ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub pair: (usize, usize),
    pub axis: Axis,
    pub angle: f64,
}

impl GateSpec {
    pub fn new(pair: (usize, usize), axis: Axis, angle: f64) -> Result<Self> {
        if pair.0 == pair.1 {
            return Err(Error::InvalidConfig(format!("gate pair must be two distinct qubits, got {pair:?}")));
        }
        if angle.abs() > PI / 2.0 + 1e-12 {
            return Err(Error::InvalidConfig(format!("gate angle {angle} outside [-π/2, π/2]")));
        }
        Ok(GateSpec { pair, axis, angle })
    }

    pub fn shares_qubit_with(&self, other: &GateSpec) -> bool {
        let (a, b) = self.pair;
        let (c, d) = other.pair;
        a == c || a == d || b == c || b == d
    }

    pub fn overlap(&self, other: &GateSpec) -> usize {
        let (a, b) = self.pair;
        [other.pair.0, other.pair.1].iter().filter(|&&x| x == a || x == b).count()
    }
}

impl PulseSchedule {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Segment boundaries t_0 = 0, …, t_n = τ.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.segments.len() + 1);
        let mut acc = 0.0;
        t.push(acc);
        for s in &self.segments {
            acc += s.duration;
            t.push(acc);
        }
        t
    }

    pub fn drives(&self, ion: usize) -> bool {
        self.pair.0 == ion || self.pair.1 == ion
    }

    /// Per-segment amplitudes addressed to `ion`, if it belongs to the pair.
    pub fn amplitudes(&self, ion: usize) -> Option<Vec<f64>> {
        if ion == self.pair.0 {
            Some(self.segments.iter().map(|s| s.amplitude_p).collect())
        } else if ion == self.pair.1 {
            Some(self.segments.iter().map(|s| s.amplitude_q).collect())
        } else {
            None
        }
    }

    pub fn phase(&self, ion: usize) -> f64 {
        if ion == self.pair.0 {
            self.phases.0
        } else {
            self.phases.1
        }
    }

    pub fn max_amplitude(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.amplitude_p.abs().max(s.amplitude_q.abs()))
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> PulseSchedule {
        let mut out = self.clone();
        for seg in &mut out.segments {
            seg.amplitude_p *= s;
            seg.amplitude_q *= s;
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.segments.iter().all(|s| s.amplitude_p == 0.0 && s.amplitude_q == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSchedule(m));
        if self.pair.0 == self.pair.1 {
            return bad(format!("pair {:?} must address two distinct ions", self.pair));
        }
        if self.segments.is_empty() {
            return bad("schedule has no segments".into());
        }
        if self.axis == Axis::Z {
            return bad("axial-mode gates are not supported".into());
        }
        if !(self.detuning.is_finite() && self.detuning > 0.0) {
            return bad(format!("detuning must be positive, got {}", self.detuning));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration.is_finite() && s.duration > 0.0) {
                return bad(format!("segment {i} has non-positive duration"));
            }
            if !(s.amplitude_p.is_finite() && s.amplitude_q.is_finite()) {
                return bad(format!("segment {i} has a non-finite amplitude"));
            }
        }
        Ok(())
    }

    fn check_modes(&self, modes: &ModeSet) -> Result<()> {
        self.validate()?;
        if modes.axis != self.axis {
            return Err(Error::InvalidSchedule(format!(
                "schedule drives axis {} but modes are for axis {}",
                self.axis, modes.axis
            )));
        }
        let n = modes.ion_count();
        if self.pair.0 >= n || self.pair.1 >= n {
            return Err(Error::InvalidSchedule(format!("pair {:?} out of range for {n} ions", self.pair)));
        }
        Ok(())
    }
}

/// One spectral component `amp · e^{iνt}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tone {
    pub amp: C64,
    pub nu: f64,
}

/// A drive coefficient on `[start, end)` as a sum of two tones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub tones: [Tone; 2],
}

impl Piece {
    pub fn eval(&self, t: f64) -> C64 {
        self.tones.iter().map(|tn| tn.amp * C64::from_polar(1.0, tn.nu * t)).sum()
    }

    pub fn integral(&self, a: f64, b: f64) -> C64 {
        self.tones.iter().map(|tn| tn.amp * exp_integral(tn.nu, a, b)).sum()
    }

    pub fn conj(&self) -> Piece {
        let c = |t: Tone| Tone { amp: t.amp.conj(), nu: -t.nu };
        Piece { start: self.start, end: self.end, tones: [c(self.tones[0]), c(self.tones[1])] }
    }

    /// ∫_a^b dt₂ self(t₂) ∫_a^{t₂} dt₁ inner(t₁) for a sub-interval of both pieces.
    pub fn nested(&self, inner: &Piece, a: f64, b: f64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for o in &self.tones {
            for i in &inner.tones {
                acc += o.amp * i.amp * nested_exp_integral(o.nu, i.nu, a, b);
            }
        }
        acc
    }
}

/// Spin-dependent force coefficient f(t) = scale · Ω_i(t) cos(μt − φ_i) e^{iωt}
/// on each segment of the schedule.
pub fn force_pieces(schedule: &PulseSchedule, ion: usize, scale: f64, omega: f64) -> Vec<Piece> {
    let amps = schedule.amplitudes(ion).unwrap_or_else(|| vec![0.0; schedule.segments.len()]);
    let phi = schedule.phase(ion);
    let mu = schedule.detuning;
    let bounds = schedule.boundaries();
    amps.iter()
        .enumerate()
        .map(|(s, &a)| {
            let half = 0.5 * scale * a;
            Piece {
                start: bounds[s],
                end: bounds[s + 1],
                tones: [
                    Tone { amp: C64::from_polar(half, -phi), nu: omega + mu },
                    Tone { amp: C64::from_polar(half, phi), nu: omega - mu },
                ],
            }
        })
        .collect()
}

/// ∫∫_{t₁<t₂} outer(t₂) inner(t₁) over [0, τ] for pieces sharing boundaries.
pub fn ordered_double_integral(outer: &[Piece], inner: &[Piece]) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    let mut inner_prefix = C64::new(0.0, 0.0);
    for (o, i) in outer.iter().zip(inner) {
        acc += o.integral(o.start, o.end) * inner_prefix;
        acc += o.nested(i, o.start, o.end);
        inner_prefix += i.integral(i.start, i.end);
    }
    acc
}

/// α_{i,k}(τ) = −∫₀^τ η_k^i Ω_i(t) cos(μt − φ_i) e^{iω_k t} dt.
pub fn alpha_final(schedule: &PulseSchedule, modes: &ModeSet, ion: usize, mode: usize) -> Result<C64> {
    schedule.check_modes(modes)?;
    check_index(ion, modes.ion_count(), "ion")?;
    check_index(mode, modes.mode_count(), "mode")?;
    let pieces = force_pieces(schedule, ion, modes.eta(ion, mode), modes.frequencies[mode]);
    Ok(-pieces.iter().map(|p| p.integral(p.start, p.end)).sum::<C64>())
}

fn check_index(i: usize, n: usize, what: &str) -> Result<()> {
    if i >= n {
        return Err(Error::InvalidSchedule(format!("{what} index {i} out of range ({n})")));
    }
    Ok(())
}

/// α_{i,k}(t) sampled at every segment boundary, for both driven ions and all modes.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementTrajectory {
    pub ions: [usize; 2],
    pub times: Vec<f64>,
    /// `alpha[slot][mode][boundary]`, slot 0 = pair.0, slot 1 = pair.1.
    pub alpha: Vec<Vec<Vec<C64>>>,
}

impl DisplacementTrajectory {
    pub fn final_alpha(&self, slot: usize, mode: usize) -> C64 {
        *self.alpha[slot][mode].last().expect("trajectory has at least one point")
    }

    pub fn max_final(&self) -> f64 {
        self.alpha
            .iter()
            .flat_map(|per_mode| per_mode.iter().map(|tr| tr.last().map_or(0.0, |a| a.norm())))
            .fold(0.0, f64::max)
    }
}

pub fn alpha_trajectory(schedule: &PulseSchedule, modes: &ModeSet) -> Result<DisplacementTrajectory> {
    schedule.check_modes(modes)?;
    let ions = [schedule.pair.0, schedule.pair.1];
    let alpha = ions
        .iter()
        .map(|&ion| {
            (0..modes.mode_count())
                .map(|k| {
                    let pieces = force_pieces(schedule, ion, modes.eta(ion, k), modes.frequencies[k]);
                    let mut acc = C64::new(0.0, 0.0);
                    let mut tr = vec![acc];
                    for p in &pieces {
                        acc -= p.integral(p.start, p.end);
                        tr.push(acc);
                    }
                    tr
                })
                .collect()
        })
        .collect();
    Ok(DisplacementTrajectory { ions, times: schedule.boundaries(), alpha })
}

/// Largest |α_{i,k}(τ)| over both driven ions and all modes in `modes`.
pub fn max_residual(schedule: &PulseSchedule, modes: &ModeSet) -> Result<f64> {
    Ok(alpha_trajectory(schedule, modes)?.max_final())
}

/// Gate angle χ_pq accumulated by the schedule (second Magnus term).
pub fn chi_angle(schedule: &PulseSchedule, modes: &ModeSet) -> Result<f64> {
    schedule.check_modes(modes)?;
    let (p, q) = schedule.pair;
    let mut chi = 0.0;
    for k in 0..modes.mode_count() {
        let w = modes.frequencies[k];
        let gp = force_pieces(schedule, p, 1.0, w);
        let gq = force_pieces(schedule, q, 1.0, w);
        let gp_c: Vec<Piece> = gp.iter().map(Piece::conj).collect();
        let gq_c: Vec<Piece> = gq.iter().map(Piece::conj).collect();
        let d_pq = ordered_double_integral(&gp, &gq_c).im;
        let d_qp = ordered_double_integral(&gq, &gp_c).im;
        chi += modes.eta(p, k) * modes.eta(q, k) * (d_pq + d_qp);
    }
    Ok(chi)
}

/// max |η_k Ω / (μ − ω_k)| over driven ions, modes and segments.
pub fn lamb_dicke_metric(schedule: &PulseSchedule, modes: &ModeSet) -> f64 {
    let mut worst: f64 = 0.0;
    for ion in [schedule.pair.0, schedule.pair.1] {
        let amp = schedule.amplitudes(ion).unwrap_or_default().iter().fold(0.0f64, |m, a| m.max(a.abs()));
        for k in 0..modes.mode_count() {
            let det = (schedule.detuning - modes.frequencies[k]).abs();
            worst = worst.max((modes.eta(ion, k) * amp / det).abs());
        }
    }
    worst
}

/// Options for [`design_amplitude_modulated`].
#[derive(Clone, Debug, PartialEq)]
pub struct DesignOptions {
    /// Largest allowed |Ω| (rad/s); `None` disables the check.
    pub omega_max: Option<f64>,
    /// Modes whose coupling to both ions is below this fraction of the largest
    /// coupling are not constrained.
    pub coupling_floor: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions { omega_max: Some(2.0 * PI * 2.0e6), coupling_floor: 1e-12 }
    }
}

/// μ placed 3 kHz beyond the highest sideband of the axis.
pub fn default_detuning(modes: &ModeSet) -> f64 {
    modes.max_frequency() + DEFAULT_DETUNING_OFFSET
}

/// Default segment count 2N + 1 for an N-mode axis.
pub fn default_segments(modes: &ModeSet) -> usize {
    2 * modes.mode_count() + 1
}

/// Unit-amplitude segment integrals ∫_s cos(μt) e^{iω_k t} dt, modes × segments.
fn unit_segment_integrals(mu: f64, modes: &ModeSet, bounds: &[f64]) -> Vec<Vec<C64>> {
    modes
        .frequencies
        .iter()
        .map(|&w| {
            bounds
                .windows(2)
                .map(|b| 0.5 * (exp_integral(w + mu, b[0], b[1]) + exp_integral(w - mu, b[0], b[1])))
                .collect()
        })
        .collect()
}

/// Quadratic form M with χ = xᵀ M x for shared amplitudes x and zero phases.
fn chi_form(mu: f64, modes: &ModeSet, pair: (usize, usize), bounds: &[f64]) -> DMatrix<f64> {
    let n = bounds.len() - 1;
    let mut m = DMatrix::zeros(n, n);
    for k in 0..modes.mode_count() {
        let w = modes.frequencies[k];
        let coupling = modes.eta(pair.0, k) * modes.eta(pair.1, k);
        if coupling == 0.0 {
            continue;
        }
        let unit = PulseSchedule {
            pair,
            axis: modes.axis,
            detuning: mu,
            phases: (0.0, 0.0),
            segments: bounds
                .windows(2)
                .map(|b| Segment { duration: b[1] - b[0], amplitude_p: 1.0, amplitude_q: 1.0 })
                .collect(),
        };
        let g = force_pieces(&unit, pair.0, 1.0, w);
        let gc: Vec<Piece> = g.iter().map(Piece::conj).collect();
        let totals: Vec<C64> = g.iter().map(|p| p.integral(p.start, p.end)).collect();
        for s2 in 0..n {
            // within one segment
            let diag = g[s2].nested(&gc[s2], g[s2].start, g[s2].end).im;
            m[(s2, s2)] += coupling * 2.0 * diag;
            for s1 in 0..s2 {
                let w21 = (totals[s2] * totals[s1].conj()).im;
                m[(s2, s1)] += coupling * w21;
                m[(s1, s2)] += coupling * w21;
            }
        }
    }
    m
}

/// Orthonormal basis of the null space of `a` (rows × cols), columns of the result.
fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    // Pad to square so the SVD returns a full set of right singular vectors.
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let null: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= rel_tol * smax.max(f64::MIN_POSITIVE))
        .collect();
    let mut basis = DMatrix::zeros(cols, null.len());
    for (c, &i) in null.iter().enumerate() {
        basis.set_column(c, &v_t.row(i).transpose());
    }
    basis
}

/// Design a shared-envelope amplitude-modulated pulse on `pair` that closes
/// every coupled mode of `modes` and accumulates gate angle `chi_target`.
pub fn design_amplitude_modulated(
    pair: (usize, usize),
    modes: &ModeSet,
    tau: f64,
    n_segments: usize,
    detuning: f64,
    chi_target: f64,
    options: &DesignOptions,
) -> Result<PulseSchedule> {
    let n_ions = modes.ion_count();
    if pair.0 == pair.1 || pair.0 >= n_ions || pair.1 >= n_ions {
        return Err(Error::InvalidConfig(format!("invalid pair {pair:?} for {n_ions} ions")));
    }
    if modes.axis == Axis::Z {
        return Err(Error::InvalidConfig("axial-mode gates are not supported".into()));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidConfig(format!("gate duration must be positive, got {tau}")));
    }
    if !chi_target.is_finite() {
        return Err(Error::InvalidConfig("target angle must be finite".into()));
    }
    let lo = 0.9 * modes.min_frequency();
    let hi = 1.1 * modes.max_frequency();
    if !(detuning > lo && detuning < hi) {
        return Err(Error::InvalidConfig(format!(
            "detuning {:.6e} Hz is outside the {} sideband region [{:.6e}, {:.6e}] Hz",
            units::angular_to_hz(detuning),
            modes.axis,
            units::angular_to_hz(lo),
            units::angular_to_hz(hi)
        )));
    }

    let coupled: Vec<usize> = {
        let scale = modes.lamb_dicke.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        (0..modes.mode_count())
            .filter(|&k| {
                modes.eta(pair.0, k).abs().max(modes.eta(pair.1, k).abs()) > options.coupling_floor * scale
            })
            .collect()
    };
    if n_segments < coupled.len() + 1 {
        return Err(Error::DesignInfeasible(format!(
            "{n_segments} segments cannot close {} modes; use at least {} (2N+1 = {} recommended)",
            coupled.len(),
            coupled.len() + 1,
            2 * coupled.len() + 1
        )));
    }

    let dt = tau / n_segments as f64;
    let bounds: Vec<f64> = (0..=n_segments).map(|s| if s == n_segments { tau } else { s as f64 * dt }).collect();
    let segments_with = |amps: &[f64], sign_q: f64| -> Vec<Segment> {
        bounds
            .windows(2)
            .zip(amps)
            .map(|(b, &a)| Segment { duration: b[1] - b[0], amplitude_p: a, amplitude_q: sign_q * a })
            .collect()
    };

    if chi_target == 0.0 {
        return Ok(PulseSchedule {
            pair,
            axis: modes.axis,
            detuning,
            phases: (0.0, 0.0),
            segments: segments_with(&vec![0.0; n_segments], 1.0),
        });
    }

    // Closure constraints: Re and Im of Σ_s x_s ∫_s cos(μt) e^{iω_k t} dt = 0.
    let unit = unit_segment_integrals(detuning, modes, &bounds);
    let mut constraints = DMatrix::zeros(2 * coupled.len(), n_segments);
    for (r, &k) in coupled.iter().enumerate() {
        let norm = unit[k].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for s in 0..n_segments {
            constraints[(2 * r, s)] = unit[k][s].re / norm;
            constraints[(2 * r + 1, s)] = unit[k][s].im / norm;
        }
    }
    let basis = null_space(&constraints, 1e-9);
    if basis.ncols() == 0 {
        return Err(Error::DesignInfeasible(format!(
            "closure constraints leave no free amplitude vector with {n_segments} segments; \
             add segments (2N+1 = {}) or change the detuning",
            2 * coupled.len() + 1
        )));
    }

    // Within the null space, pick the direction with the largest |χ| per unit
    // norm: the smallest amplitude vector reaching the target.
    let form = chi_form(detuning, modes, pair, &bounds);
    let reduced = basis.transpose() * &form * &basis;
    let reduced = 0.5 * (&reduced + reduced.transpose());
    let eig = SymmetricEigen::new(reduced);
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i].abs() > eig.eigenvalues[best].abs() {
            best = i;
        }
    }
    let lambda = eig.eigenvalues[best];
    let scale_ref = form.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if lambda.abs() <= 1e-12 * scale_ref || lambda == 0.0 {
        return Err(Error::DesignInfeasible(
            "closed pulses accumulate no gate angle; change the detuning or segment count".into(),
        ));
    }
    let mut x = &basis * eig.eigenvectors.column(best);
    let mut pivot = 0;
    for i in 1..x.len() {
        if x[i].abs() > x[pivot].abs() + 1e-15 {
            pivot = i;
        }
    }
    if x[pivot] < 0.0 {
        x.neg_mut();
    }
    let chi_unit = (x.transpose() * &form * &x)[(0, 0)];
    let s = (chi_target.abs() / chi_unit.abs()).sqrt();
    let amps: Vec<f64> = x.iter().map(|v| v * s).collect();
    // χ is bilinear in (Ω_p, Ω_q): flipping ion q's envelope flips its sign.
    let sign_q = if chi_unit.signum() == chi_target.signum() { 1.0 } else { -1.0 };

    let schedule = PulseSchedule {
        pair,
        axis: modes.axis,
        detuning,
        phases: (0.0, 0.0),
        segments: segments_with(&amps, sign_q),
    };

    if let Some(limit) = options.omega_max {
        let peak = schedule.max_amplitude();
        if peak > limit {
            return Err(Error::PowerLimit { amplitude: peak, limit });
        }
    }
    let ld = lamb_dicke_metric(&schedule, modes);
    if ld > LAMB_DICKE_WARN {
        log::warn!("Lamb-Dicke metric {ld:.3} exceeds {LAMB_DICKE_WARN}: linear coupling may be inaccurate");
    }
    Ok(schedule)
}

/// Total |Ω| addressed to one ion by a set of simultaneous schedules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveProfile {
    pub ion: usize,
    /// Interval edges, length `amplitudes.len() + 1`.
    pub breakpoints: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub max: f64,
}

/// Sum of |Ω| on `ion` across time-aligned schedules.
pub fn summed_drive(schedules: &[PulseSchedule], ion: usize) -> Result<DriveProfile> {
    let Some(first) = schedules.first() else {
        return Ok(DriveProfile { ion, breakpoints: vec![0.0], amplitudes: vec![], max: 0.0 });
    };
    let tau = first.duration();
    for s in schedules {
        let d = s.duration();
        if (d - tau).abs() > 1e-12 * tau.max(d) {
            return Err(Error::Alignment(tau, d));
        }
    }
    let mut edges: Vec<f64> = schedules.iter().flat_map(|s| s.boundaries()).collect();
    edges.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::with_capacity(edges.len());
    for t in edges {
        if merged.last().is_none_or(|&last| t - last > 1e-12 * tau) {
            merged.push(t);
        }
    }
    if let Some(last) = merged.last_mut() {
        *last = tau;
    }
    let amplitudes: Vec<f64> = merged
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            schedules
                .iter()
                .filter_map(|s| {
                    let amps = s.amplitudes(ion)?;
                    let b = s.boundaries();
                    let idx = b.windows(2).position(|x| mid >= x[0] && mid < x[1]).unwrap_or(amps.len() - 1);
                    Some(amps[idx].abs())
                })
                .sum()
        })
        .collect();
    let max = amplitudes.iter().cloned().fold(0.0, f64::max);
    Ok(DriveProfile { ion, breakpoints: merged, amplitudes, max })
}

/// Ions addressed by more than one schedule.
pub fn overlapping_ions(schedules: &[PulseSchedule]) -> Vec<usize> {
    let mut ions: Vec<usize> = schedules.iter().flat_map(|s| [s.pair.0, s.pair.1]).collect();
    ions.sort_unstable();
    let mut out: Vec<usize> = ions.windows(2).filter(|w| w[0] == w[1]).map(|w| w[0]).collect();
    out.dedup();
    out
}

/// JSON form of a [`PulseSchedule`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseScheduleRecord {
    pub pair: (usize, usize),
    pub axis: Axis,
    pub detuning_hz: f64,
    pub tau_s: f64,
    #[serde(default)]
    pub phase_p_rad: f64,
    #[serde(default)]
    pub phase_q_rad: f64,
    pub segments: Vec<SegmentRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub dt_s: f64,
    pub omega_p_rad_s: f64,
    pub omega_q_rad_s: f64,
}

impl From<&PulseSchedule> for PulseScheduleRecord {
    fn from(s: &PulseSchedule) -> Self {
        PulseScheduleRecord {
            pair: s.pair,
            axis: s.axis,
            detuning_hz: units::angular_to_hz(s.detuning),
            tau_s: s.duration(),
            phase_p_rad: s.phases.0,
            phase_q_rad: s.phases.1,
            segments: s
                .segments
                .iter()
                .map(|g| SegmentRecord { dt_s: g.duration, omega_p_rad_s: g.amplitude_p, omega_q_rad_s: g.amplitude_q })
                .collect(),
        }
    }
}

impl TryFrom<PulseScheduleRecord> for PulseSchedule {
    type Error = Error;

    fn try_from(r: PulseScheduleRecord) -> Result<Self> {
        let s = PulseSchedule {
            pair: r.pair,
            axis: r.axis,
            detuning: units::hz_to_angular(r.detuning_hz),
            phases: (r.phase_p_rad, r.phase_q_rad),
            segments: r
                .segments
                .iter()
                .map(|g| Segment { duration: g.dt_s, amplitude_p: g.omega_p_rad_s, amplitude_q: g.omega_q_rad_s })
                .collect(),
        };
        s.validate()?;
        let tau = s.duration();
        if (tau - r.tau_s).abs() > 1e-12 * tau.max(r.tau_s) {
            return Err(Error::InvalidSchedule(format!(
                "segment durations sum to {tau:e} s but tau_s is {:e} s",
                r.tau_s
            )));
        }
        Ok(s)
    }
}
