//! Spin⊗motion evolution under the parallel-gate Hamiltonian
//!
//! H(t) = Σ_{i,k} σ_x^i (f_{ik}(t) a_k† + f_{ik}(t)* a_k),
//! f_{ik}(t) = η_k^i Ω_i(t) cos(μt − φ_i) e^{iω_k t},
//!
//! summed over every driven ion and every retained mode of each driven axis,
//! plus the closed-form Magnus propagator it should reproduce.
//!
//! [`evolve_exact`] splits time at every segment boundary (and at `dt_max`)
//! and applies exp(Ω₁ + Ω₂) per step. Both Magnus terms are computed from
//! exact segment integrals and the commutators come from the symbolic
//! operator algebra on the truncated space. Without truncation the series
//! stops at Ω₂, so the remaining error comes from the Fock cutoff, which the
//! leakage monitor bounds. The step exponential uses a Lanczos expansion.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{Axis, ModeSet};
use crate::error::{Error, Result};
use crate::operator::{CompiledTerm, LocalOp, ProductTerm, Space};
use crate::pulse::{self, Piece, PulseSchedule};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub const DEFAULT_CUTOFF: usize = 12;
pub const DEFAULT_LEAKAGE_BOUND: f64 = 1e-6;
/// Residual below which [`magnus_propagator`] assembles the spin unitary.
pub const CLOSURE_TOLERANCE: f64 = 1e-6;

/// One motional mode kept in a state: mode `mode` of `axis`, Fock levels 0..=cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSlot {
    pub axis: Axis,
    pub mode: usize,
    pub cutoff: usize,
}

impl ModeSlot {
    pub fn levels(&self) -> usize {
        self.cutoff + 1
    }

    /// Every mode of `modes` with the same cutoff.
    pub fn all(modes: &ModeSet, cutoff: usize) -> Vec<ModeSlot> {
        (0..modes.mode_count()).map(|mode| ModeSlot { axis: modes.axis, mode, cutoff }).collect()
    }
}

/// Pure state on qubits ⊗ truncated modes. Qubit `j` sits on ion `ions[j]`;
/// qubits precede modes and the first site is the most significant digit.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinMotionState {
    pub ions: Vec<usize>,
    pub modes: Vec<ModeSlot>,
    pub amplitudes: Vec<C64>,
}

impl SpinMotionState {
    /// `spin` ⊗ |n_1⟩ ⊗ … ⊗ |n_M⟩.
    pub fn product(ions: Vec<usize>, spin: &[C64], modes: Vec<ModeSlot>, fock: &[usize]) -> Result<Self> {
        let q = ions.len();
        if spin.len() != 1 << q {
            return Err(Error::InvalidState(format!("spin vector has {} entries, expected {}", spin.len(), 1 << q)));
        }
        if fock.len() != modes.len() {
            return Err(Error::InvalidState("one Fock level per mode is required".into()));
        }
        for (slot, &n) in modes.iter().zip(fock) {
            if n > slot.cutoff {
                return Err(Error::InvalidState(format!("Fock level {n} above cutoff {}", slot.cutoff)));
            }
        }
        for (a, i) in ions.iter().enumerate() {
            if ions[..a].contains(i) {
                return Err(Error::InvalidState(format!("ion {i} listed twice")));
            }
        }
        for (a, m) in modes.iter().enumerate() {
            if modes[..a].iter().any(|o| o.axis == m.axis && o.mode == m.mode) {
                return Err(Error::InvalidState(format!("mode {} {} listed twice", m.axis, m.mode)));
            }
        }
        let space = space_of(q, &modes);
        if space.len() > DENSE_STATE_LIMIT {
            return Err(Error::SizeLimit(format!(
                "dense spin-motion state of {} amplitudes exceeds {DENSE_STATE_LIMIT}; use the factorized representation",
                space.len()
            )));
        }
        let motional: usize = modes.iter().map(ModeSlot::levels).product();
        let mut offset = 0;
        for (s, &n) in fock.iter().enumerate() {
            offset += n * space.stride(q + s);
        }
        let mut amplitudes = vec![ZERO; space.len()];
        for (b, &c) in spin.iter().enumerate() {
            amplitudes[b * motional + offset] = c;
        }
        let state = SpinMotionState { ions, modes, amplitudes };
        let n = state.norm();
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!("state norm {n} is not 1")));
        }
        Ok(state)
    }

    /// |0…0⟩ spins, motional ground state.
    pub fn ground(ions: Vec<usize>, modes: Vec<ModeSlot>) -> Result<Self> {
        let mut spin = vec![ZERO; 1 << ions.len()];
        spin[0] = ONE;
        let fock = vec![0; modes.len()];
        Self::product(ions, &spin, modes, &fock)
    }

    pub fn qubit_count(&self) -> usize {
        self.ions.len()
    }

    pub fn space(&self) -> Space {
        space_of(self.ions.len(), &self.modes)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }

    fn motional_dim(&self) -> usize {
        self.amplitudes.len() >> self.ions.len()
    }

    /// Partial trace over all modes.
    pub fn spin_density(&self) -> DMatrix<C64> {
        let d = 1 << self.ions.len();
        let m = self.motional_dim();
        let mut rho = DMatrix::from_element(d, d, ZERO);
        for a in 0..d {
            let ra = &self.amplitudes[a * m..(a + 1) * m];
            for b in a..d {
                let rb = &self.amplitudes[b * m..(b + 1) * m];
                let v: C64 = ra.iter().zip(rb).map(|(x, y)| x * y.conj()).sum();
                rho[(a, b)] = v;
                rho[(b, a)] = v.conj();
            }
        }
        rho
    }

    /// Population of the top Fock level of slot `s`.
    pub fn top_level_population(&self, s: usize) -> f64 {
        let motion = Space::new(self.modes.iter().map(ModeSlot::levels).collect());
        top_level_population(&self.amplitudes, &motion, s, self.modes[s].cutoff)
    }

    /// Fock-level populations of slot `s`.
    pub fn fock_populations(&self, s: usize) -> Vec<f64> {
        let space = self.space();
        let site = self.ions.len() + s;
        let mut p = vec![0.0; self.modes[s].levels()];
        for (idx, a) in self.amplitudes.iter().enumerate() {
            p[space.digit(idx, site)] += a.norm_sqr();
        }
        p
    }
}

fn space_of(qubits: usize, modes: &[ModeSlot]) -> Space {
    let mut dims = vec![2; qubits];
    dims.extend(modes.iter().map(ModeSlot::levels));
    Space::new(dims)
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// ⟨ψ|ρ|ψ⟩ for a spin density matrix and a pure target.
pub fn fidelity(rho: &DMatrix<C64>, target: &[C64]) -> f64 {
    let mut acc = ZERO;
    for a in 0..target.len() {
        for b in 0..target.len() {
            acc += target[a].conj() * rho[(a, b)] * target[b];
        }
    }
    acc.re
}

/// −Tr ρ ln ρ in nats.
pub fn von_neumann_entropy(rho: &DMatrix<C64>) -> f64 {
    let eig = SymmetricEigen::new(rho.clone());
    eig.eigenvalues.iter().filter(|&&l| l > 1e-300).map(|&l| -l * l.ln()).sum::<f64>().max(0.0)
}

/// Settings for [`evolve_exact`].
#[derive(Clone, Debug, PartialEq)]
pub struct EvolveOptions {
    /// Longest step (s); steps also break at every segment boundary.
    pub dt_max: f64,
    pub leakage_bound: f64,
    /// Per-step tolerance of the Lanczos exponential.
    pub krylov_tol: f64,
    pub krylov_dim: usize,
    /// Re-run with half the step and compare.
    pub check_convergence: bool,
    /// Allowed infidelity between the two runs of the convergence check.
    pub convergence_tol: f64,
    /// Use the Krylov exponential even when the generator splits into small
    /// commuting blocks.
    pub krylov_only: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            dt_max: 50e-6,
            leakage_bound: DEFAULT_LEAKAGE_BOUND,
            krylov_tol: 1e-13,
            krylov_dim: 30,
            check_convergence: false,
            convergence_tol: 1e-9,
            krylov_only: false,
        }
    }
}

fn axis_modes<'a>(axis: Axis, modes_x: &'a ModeSet, modes_y: &'a ModeSet) -> Result<&'a ModeSet> {
    let m = match axis {
        Axis::X => modes_x,
        Axis::Y => modes_y,
        Axis::Z => return Err(Error::InvalidSchedule("axial drives are not supported".into())),
    };
    if m.axis != axis {
        return Err(Error::InvalidConfig(format!("mode set for axis {axis} is labelled {}", m.axis)));
    }
    Ok(m)
}

/// One σ_x^i ⊗ a_k drive channel with its coefficient pieces.
struct Channel {
    pieces: Vec<Piece>,
    /// The schedule's own segment boundaries.
    bounds: Vec<f64>,
}

/// A product term with its qubit factors diagonalised in the σ_x eigenbasis:
/// weight per spin configuration times a motional operator.
struct BlockTerm {
    weights: Vec<C64>,
    motion: ProductTerm,
    /// Present when acting on dense states.
    compiled: Option<CompiledTerm>,
}

impl BlockTerm {
    fn new(term: &ProductTerm, qubits: usize, motion_space: &Space, layout: bool) -> Result<Self> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let had = LocalOp::from_dense(&[vec![C64::new(h, 0.0), C64::new(h, 0.0)], vec![C64::new(h, 0.0), C64::new(-h, 0.0)]]);
        let mut weights = vec![term.coeff; 1 << qubits];
        let mut motion = ProductTerm::identity();
        for (&site, op) in &term.ops {
            if site >= qubits {
                motion = motion.with(site - qubits, op.clone());
                continue;
            }
            let r = had.mul(op).mul(&had);
            let scale = r.get(0, 0).norm().max(r.get(1, 1).norm());
            if r.get(0, 1).norm() > 1e-12 * scale || r.get(1, 0).norm() > 1e-12 * scale {
                return Err(Error::InvalidState("generator is not diagonal in the σ_x basis".into()));
            }
            for (s, w) in weights.iter_mut().enumerate() {
                let bit = (s >> (qubits - 1 - site)) & 1;
                *w *= r.get(bit, bit);
            }
        }
        let compiled = layout.then(|| CompiledTerm::new(&motion, motion_space));
        Ok(BlockTerm { weights, motion, compiled })
    }
}

/// Largest motional block exponentiated densely; bigger ones use Lanczos.
const DENSE_BLOCK_LIMIT: usize = 512;

/// Terms sharing a connected motional support. Blocks with disjoint supports
/// commute, so the step exponential is the product of the block exponentials.
struct MotionBlock {
    sites: Vec<usize>,
    /// Dimension of the support.
    dim: usize,
    terms: Vec<usize>,
    /// Dense matrix of each term's motional factor on the support.
    dense: Vec<DMatrix<C64>>,
    /// Offset of every support basis state, and every index with zero support
    /// digits; empty without a dense layout.
    offsets: Vec<usize>,
    bases: Vec<usize>,
}

impl MotionBlock {
    fn new(sites: &[usize], terms: Vec<usize>, all: &[BlockTerm], space: &Space, layout: bool) -> Self {
        let dims: Vec<usize> = sites.iter().map(|&s| space.dims()[s]).collect();
        let d: usize = dims.iter().product();
        let digits = |mut l: usize| -> Vec<usize> {
            let mut out = vec![0; dims.len()];
            for (i, &dim) in dims.iter().enumerate().rev() {
                out[i] = l % dim;
                l /= dim;
            }
            out
        };
        let (offsets, bases) = if layout {
            (
                (0..d).map(|l| digits(l).iter().zip(sites).map(|(&g, &s)| g * space.stride(s)).sum()).collect(),
                (0..space.len()).filter(|&idx| sites.iter().all(|&s| space.digit(idx, s) == 0)).collect(),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        let dense = terms
            .iter()
            .map(|&t| {
                let ops = &all[t].motion.ops;
                DMatrix::from_fn(d, d, |r, c| {
                    let (dr, dc) = (digits(r), digits(c));
                    let mut v = all[t].motion.coeff;
                    for (i, s) in sites.iter().enumerate() {
                        v *= match ops.get(s) {
                            Some(op) => op.get(dr[i], dc[i]),
                            None if dr[i] == dc[i] => ONE,
                            None => ZERO,
                        };
                    }
                    v
                })
            })
            .collect();
        MotionBlock { sites: sites.to_vec(), dim: d, terms, dense, offsets, bases }
    }

    /// exp(−iG) for G = Σ c_t w_t[s] D_t.
    fn propagator(&self, coeffs: &[C64], all: &[BlockTerm], s: usize) -> DMatrix<C64> {
        let d = self.dim;
        let mut g = DMatrix::from_element(d, d, ZERO);
        for (&t, m) in self.terms.iter().zip(&self.dense) {
            let c = coeffs[t] * all[t].weights[s];
            if c != ZERO {
                g += m * c;
            }
        }
        let g = (&g + g.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(g);
        let v = &eig.eigenvectors;
        let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::from_polar(1.0, -l)));
        v * phases * v.adjoint()
    }

    fn apply(&self, u: &DMatrix<C64>, row: &mut [C64]) {
        let d = self.offsets.len();
        let mut x = vec![ZERO; d];
        for &b in &self.bases {
            for (xi, &o) in x.iter_mut().zip(&self.offsets) {
                *xi = row[b + o];
            }
            for (r, &o) in self.offsets.iter().enumerate() {
                let mut acc = ZERO;
                for c in 0..d {
                    acc += u[(r, c)] * x[c];
                }
                row[b + o] = acc;
            }
        }
    }
}

/// Group terms into blocks of connected motional support, or `None` when a
/// block would be too large to exponentiate densely.
fn motion_blocks(terms: &[BlockTerm], space: &Space, layout: bool) -> Option<(Vec<MotionBlock>, Vec<usize>)> {
    let n = space.dims().len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut scalars = Vec::new();
    for (t, term) in terms.iter().enumerate() {
        let sites: Vec<usize> = term.motion.ops.keys().copied().collect();
        if sites.is_empty() {
            scalars.push(t);
        }
        for w in sites.windows(2) {
            let (a, b) = (root(&mut parent, w[0]), root(&mut parent, w[1]));
            parent[a] = b;
        }
    }
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for site in 0..n {
        let r = root(&mut parent, site);
        let members: Vec<usize> = (0..n).filter(|&x| root(&mut parent, x) == r).collect();
        if members[0] != site {
            continue;
        }
        let ts: Vec<usize> = terms
            .iter()
            .enumerate()
            .filter(|(_, t)| t.motion.ops.keys().next().is_some_and(|s| members.contains(s)))
            .map(|(i, _)| i)
            .collect();
        if !ts.is_empty() {
            groups.push((members, ts));
        }
    }
    if groups.iter().any(|(sites, _)| sites.iter().map(|&s| space.dims()[s]).product::<usize>() > DENSE_BLOCK_LIMIT) {
        return None;
    }
    Some((groups.into_iter().map(|(sites, ts)| MotionBlock::new(&sites, ts, terms, space, layout)).collect(), scalars))
}

/// H(t) = Σ_j c_j(t) T_j and the commutator table needed for Ω₂.
///
/// Every T_j carries σ_x on its qubit, so in the σ_x eigenbasis of the qubits
/// the step generator is block diagonal with one motional block per spin
/// configuration.
struct Generator {
    qubits: usize,
    motion_space: Space,
    /// T_j for j < drive_count, then the distinct operators of [T_j, T_l].
    terms: Vec<BlockTerm>,
    drive_count: usize,
    /// Commuting dense blocks and pure-spin terms, when every block is small.
    blocks: Option<(Vec<MotionBlock>, Vec<usize>)>,
    /// c_j from `channels[j / 2]`, conjugated for odd j.
    channels: Vec<Channel>,
    /// (j, l, term index, structure coefficient) for j < l.
    comm_table: Vec<(usize, usize, usize, C64)>,
    breaks: Vec<f64>,
}

impl Generator {
    /// `layout` prepares the index tables needed to act on a dense state.
    fn new(
        schedules: &[PulseSchedule],
        modes_x: &ModeSet,
        modes_y: &ModeSet,
        ions: &[usize],
        slots: &[ModeSlot],
        layout: bool,
    ) -> Result<Self> {
        let q = ions.len();
        let mut seen_axes = Vec::new();
        let mut ops: Vec<ProductTerm> = Vec::new();
        let mut channels = Vec::new();
        let mut breaks = vec![0.0];
        for sched in schedules {
            sched.validate()?;
            if seen_axes.contains(&sched.axis) {
                return Err(Error::InvalidSchedule(format!(
                    "two schedules drive axis {}; schedule same-axis gates sequentially",
                    sched.axis
                )));
            }
            seen_axes.push(sched.axis);
            let modes = axis_modes(sched.axis, modes_x, modes_y)?;
            let driven: Vec<usize> = (0..modes.mode_count())
                .map(|k| {
                    slots.iter().position(|s| s.axis == sched.axis && s.mode == k).ok_or_else(|| {
                        Error::InvalidState(format!("mode {} {k} is driven but not present in the state", sched.axis))
                    })
                })
                .collect::<Result<_>>()?;
            let bounds = sched.boundaries();
            breaks.extend_from_slice(&bounds);
            for ion in [sched.pair.0, sched.pair.1] {
                let qubit = ions.iter().position(|&i| i == ion).ok_or_else(|| {
                    Error::InvalidState(format!("ion {ion} is driven but is not a qubit of the state"))
                })?;
                for (k, &slot) in driven.iter().enumerate() {
                    let eta = modes.eta(ion, k);
                    if eta == 0.0 {
                        continue;
                    }
                    let levels = slots[slot].levels();
                    let lower = ProductTerm::single(qubit, LocalOp::sigma_x()).with(q + slot, LocalOp::annihilation(levels));
                    ops.push(lower.adjoint());
                    ops.push(lower);
                    channels.push(Channel {
                        pieces: pulse::force_pieces(sched, ion, eta, modes.frequencies[k]),
                        bounds: bounds.clone(),
                    });
                }
            }
        }
        breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite boundaries"));
        breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs().max(1e-300));

        let mut unique: Vec<ProductTerm> = Vec::new();
        let mut comm_table = Vec::new();
        for j in 0..ops.len() {
            for l in j + 1..ops.len() {
                for t in ops[j].commutator(&ops[l]).terms {
                    let u = match unique.iter().position(|x| x.ops == t.ops) {
                        Some(u) => u,
                        None => {
                            unique.push(ProductTerm { coeff: ONE, ops: t.ops.clone() });
                            unique.len() - 1
                        }
                    };
                    comm_table.push((j, l, ops.len() + u, t.coeff));
                }
            }
        }
        let motion_space = Space::new(slots.iter().map(ModeSlot::levels).collect());
        let terms: Vec<BlockTerm> = ops
            .iter()
            .chain(&unique)
            .map(|t| BlockTerm::new(t, q, &motion_space, layout))
            .collect::<Result<_>>()?;
        let blocks = motion_blocks(&terms, &motion_space, layout);
        Ok(Generator { qubits: q, motion_space, terms, drive_count: ops.len(), blocks, channels, comm_table, breaks })
    }

    /// Coefficient piece of T_j on the step starting at `a`, if driven there.
    fn piece(&self, j: usize, a: f64) -> Option<Piece> {
        let ch = &self.channels[j / 2];
        let end = *ch.bounds.last()?;
        if a >= end {
            return None;
        }
        let s = ch.bounds.partition_point(|&b| b <= a).saturating_sub(1).min(ch.pieces.len() - 1);
        let p = ch.pieces[s];
        Some(if j.is_multiple_of(2) { p } else { p.conj() })
    }

    /// Coefficients of A = iΩ on [a, b], one per term.
    fn step_coefficients(&self, a: f64, b: f64) -> Vec<C64> {
        let pieces: Vec<Option<Piece>> = (0..self.drive_count).map(|j| self.piece(j, a)).collect();
        let mut coeffs: Vec<C64> = pieces.iter().map(|p| p.map_or(ZERO, |p| p.integral(a, b))).collect();
        coeffs.resize(self.terms.len(), ZERO);
        let i = C64::i();
        for &(j, l, u, c) in &self.comm_table {
            if let (Some(pj), Some(pl)) = (pieces[j], pieces[l]) {
                // Ω₂ ∋ −½ (C_jl − C_lj) [T_j, T_l]
                let w = pj.nested(&pl, a, b) - pl.nested(&pj, a, b);
                coeffs[u] += i * (-0.5) * w * c;
            }
        }
        coeffs
    }

    /// exp(−i Σ c_t w_t[s]) from the terms without motional factors.
    fn scalar_phase(&self, coeffs: &[C64], scalars: &[usize], s: usize) -> C64 {
        let phase: C64 = scalars.iter().map(|&t| coeffs[t] * self.terms[t].weights[s] * self.terms[t].motion.coeff).sum();
        if phase == ZERO {
            ONE
        } else {
            (-C64::i() * phase).exp()
        }
    }

    /// out = scale · A_s · psi on the motional block of spin configuration `s`.
    fn apply_block(&self, coeffs: &[C64], s: usize, scale: f64, psi: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|x| *x = ZERO);
        for (t, &c) in self.terms.iter().zip(coeffs) {
            if let Some(ct) = &t.compiled {
                ct.apply_add(c * t.weights[s] * scale, psi, out);
            }
        }
    }

    fn steps(&self, dt_max: f64) -> Vec<(f64, f64)> {
        let mut steps = Vec::new();
        for w in self.breaks.windows(2) {
            let n = ((w[1] - w[0]) / dt_max).ceil().max(1.0) as usize;
            let h = (w[1] - w[0]) / n as f64;
            for s in 0..n {
                let a = w[0] + s as f64 * h;
                let b = if s + 1 == n { w[1] } else { a + h };
                steps.push((a, b));
            }
        }
        steps
    }
}

/// exp(−iA) ψ by Lanczos for Hermitian A; `None` if the basis size runs out.
fn lanczos_expm<F>(apply: F, psi: &[C64], tol: f64, max_dim: usize) -> Option<Vec<C64>>
where
    F: Fn(&[C64], &mut [C64]),
{
    let beta0 = norm(psi);
    if beta0 == 0.0 {
        return Some(psi.to_vec());
    }
    let n = psi.len();
    let mut basis: Vec<Vec<C64>> = vec![psi.iter().map(|x| x / beta0).collect()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![ZERO; n];
    for k in 0..max_dim {
        apply(&basis[k], &mut w);
        let alpha: f64 = basis[k].iter().zip(&w).map(|(v, x)| (v.conj() * x).re).sum();
        alphas.push(alpha);
        // full reorthogonalisation
        for v in &basis {
            let h: C64 = v.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
            w.iter_mut().zip(v).for_each(|(x, a)| *x -= h * a);
        }
        let beta = norm(&w);
        let y = tridiagonal_expm_e1(&alphas, &betas);
        let estimate = beta * y[k].norm();
        if estimate <= tol || beta <= 1e-14 * alphas.iter().fold(1.0f64, |m, a| m.max(a.abs())) {
            let mut out = vec![ZERO; n];
            for (v, c) in basis.iter().zip(&y) {
                out.iter_mut().zip(v).for_each(|(o, x)| *o += c * beta0 * x);
            }
            return Some(out);
        }
        betas.push(beta);
        basis.push(w.iter().map(|x| x / beta).collect());
    }
    None
}

/// exp(−iT) e₁ for the symmetric tridiagonal T.
fn tridiagonal_expm_e1(alphas: &[f64], betas: &[f64]) -> Vec<C64> {
    let k = alphas.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    (0..k)
        .map(|r| {
            (0..k)
                .map(|l| C64::from_polar(eig.eigenvectors[(r, l)] * eig.eigenvectors[(0, l)], -eig.eigenvalues[l]))
                .sum()
        })
        .collect()
}

/// Hadamard on every qubit of a state laid out as spin rows of length `m`.
fn hadamard_all(psi: &mut [C64], qubits: usize, m: usize) {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for bit in 0..qubits {
        let span = m << bit;
        for chunk in psi.chunks_mut(2 * span) {
            let (lo, hi) = chunk.split_at_mut(span);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = (x + y) * h;
                *b = (x - y) * h;
            }
        }
    }
}

/// Advance the motional state of spin configuration `s` across one step.
fn step_block(gen: &Generator, coeffs: &[C64], s: usize, row: &[C64], opts: &EvolveOptions) -> Result<Vec<C64>> {
    if let Some((blocks, scalars)) = gen.blocks.as_ref().filter(|_| !opts.krylov_only) {
        let mut out = row.to_vec();
        for b in blocks {
            b.apply(&b.propagator(coeffs, &gen.terms, s), &mut out);
        }
        let f = gen.scalar_phase(coeffs, scalars, s);
        if f != ONE {
            out.iter_mut().for_each(|x| *x *= f);
        }
        return Ok(out);
    }
    // Krylov fallback, halving the step until the expansion converges
    let mut pieces = 1usize;
    loop {
        let scale = 1.0 / pieces as f64;
        let mut cur = row.to_vec();
        let mut ok = true;
        for _ in 0..pieces {
            let apply = |v: &[C64], out: &mut [C64]| gen.apply_block(coeffs, s, scale, v, out);
            match lanczos_expm(apply, &cur, opts.krylov_tol, opts.krylov_dim) {
                Some(v) => cur = v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(cur);
        }
        pieces *= 2;
        if pieces > 1 << 12 {
            return Err(Error::StepConvergence(f64::NAN));
        }
    }
}

fn run_steps(gen: &Generator, state: &SpinMotionState, opts: &EvolveOptions, dt_max: f64) -> Result<Vec<C64>> {
    let m = gen.motion_space.len();
    let mut psi = state.amplitudes.clone();
    hadamard_all(&mut psi, gen.qubits, m);
    for (a, b) in gen.steps(dt_max) {
        let coeffs = gen.step_coefficients(a, b);
        let rows: Vec<Result<Vec<C64>>> =
            psi.par_chunks(m).enumerate().map(|(s, row)| step_block(gen, &coeffs, s, row, opts)).collect();
        for (dst, row) in psi.chunks_mut(m).zip(rows) {
            dst.copy_from_slice(&row?);
        }
        // motional marginals are unchanged by the spin basis rotation
        for (slot_index, slot) in state.modes.iter().enumerate() {
            let p = top_level_population(&psi, &gen.motion_space, slot_index, slot.cutoff);
            if p > opts.leakage_bound {
                return Err(Error::FockLeakage {
                    mode: format!("{} {}", slot.axis, slot.mode),
                    population: p,
                    bound: opts.leakage_bound,
                });
            }
        }
    }
    hadamard_all(&mut psi, gen.qubits, m);
    Ok(psi)
}

fn top_level_population(psi: &[C64], motion: &Space, site: usize, top: usize) -> f64 {
    let m = motion.len();
    psi.iter().enumerate().filter(|(idx, _)| motion.digit(idx % m, site) == top).map(|(_, a)| a.norm_sqr()).sum()
}

/// Evolve `state` under the summed drive of `schedules` (at most one per axis).
pub fn evolve_exact(
    schedules: &[PulseSchedule],
    modes_x: &ModeSet,
    modes_y: &ModeSet,
    state: &SpinMotionState,
    opts: &EvolveOptions,
) -> Result<SpinMotionState> {
    if !(opts.dt_max > 0.0) {
        return Err(Error::InvalidConfig(format!("dt_max must be positive, got {}", opts.dt_max)));
    }
    let gen = Generator::new(schedules, modes_x, modes_y, &state.ions, &state.modes, true)?;
    let psi = run_steps(&gen, state, opts, opts.dt_max)?;
    if opts.check_convergence {
        let fine = run_steps(&gen, state, opts, 0.5 * opts.dt_max)?;
        let overlap: C64 = psi.iter().zip(&fine).map(|(a, b)| a.conj() * b).sum();
        let change = 1.0 - overlap.norm_sqr();
        if change > opts.convergence_tol {
            return Err(Error::StepConvergence(change));
        }
    }
    Ok(SpinMotionState { amplitudes: psi, ..state.clone() })
}

/// Truncated Boltzmann weights of one mode, renormalised.
pub fn thermal_weights(nbar: f64, cutoff: usize) -> Vec<f64> {
    if nbar <= 0.0 {
        let mut w = vec![0.0; cutoff + 1];
        w[0] = 1.0;
        return w;
    }
    let r = nbar / (nbar + 1.0);
    let w: Vec<f64> = (0..=cutoff).map(|n| r.powi(n as i32)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Fock-diagonal initial mixture: (weight, Fock levels per slot), renormalised
/// after dropping branches lighter than `weight_floor`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermalBranches {
    pub branches: Vec<(f64, Vec<usize>)>,
    pub discarded_weight: f64,
}

pub fn thermal_branches(slots: &[ModeSlot], nbar: &[f64], weight_floor: f64) -> Result<ThermalBranches> {
    if nbar.len() != slots.len() {
        return Err(Error::InvalidState("one mean occupation per mode is required".into()));
    }
    if nbar.iter().any(|n| !(n.is_finite() && *n >= 0.0)) {
        return Err(Error::InvalidState("mean occupations must be finite and non-negative".into()));
    }
    let per_mode: Vec<Vec<f64>> = slots.iter().zip(nbar).map(|(s, &n)| thermal_weights(n, s.cutoff)).collect();
    let mut branches = vec![(1.0, Vec::new())];
    for w in &per_mode {
        let mut next = Vec::new();
        for (p, levels) in &branches {
            for (n, &wn) in w.iter().enumerate() {
                let pw = p * wn;
                if pw >= weight_floor {
                    let mut l: Vec<usize> = levels.clone();
                    l.push(n);
                    next.push((pw, l));
                }
            }
        }
        branches = next;
    }
    let kept: f64 = branches.iter().map(|b| b.0).sum();
    for b in &mut branches {
        b.0 /= kept;
    }
    Ok(ThermalBranches { branches, discarded_weight: 1.0 - kept })
}

/// Spin density matrix after evolving a spin state with thermal motion.
pub fn evolve_thermal(
    schedules: &[PulseSchedule],
    modes_x: &ModeSet,
    modes_y: &ModeSet,
    ions: &[usize],
    spin: &[C64],
    slots: &[ModeSlot],
    nbar: &[f64],
    weight_floor: f64,
    opts: &EvolveOptions,
) -> Result<(DMatrix<C64>, ThermalBranches)> {
    let mix = thermal_branches(slots, nbar, weight_floor)?;
    let parts: Vec<Result<DMatrix<C64>>> = mix
        .branches
        .par_iter()
        .map(|(w, levels)| {
            let s = SpinMotionState::product(ions.to_vec(), spin, slots.to_vec(), levels)?;
            let out = evolve_exact(schedules, modes_x, modes_y, &s, opts)?;
            Ok(out.spin_density() * C64::new(*w, 0.0))
        })
        .collect();
    let d = spin.len();
    let mut rho = DMatrix::from_element(d, d, ZERO);
    for p in parts {
        rho += p?;
    }
    Ok((rho, mix))
}

/// exp(i Σ χ σ_x^p σ_x^q) on `qubits` qubits; pairs are qubit indices, qubit 0 most significant.
pub fn ideal_ms_unitary(qubits: usize, gates: &[((usize, usize), f64)]) -> DMatrix<C64> {
    let d = 1 << qubits;
    // diagonal in the σ_x eigenbasis
    let phases: Vec<f64> = (0..d)
        .map(|s| {
            gates
                .iter()
                .map(|&((p, q), chi)| chi * x_sign(s, p, qubits) * x_sign(s, q, qubits))
                .sum()
        })
        .collect();
    let hn = 1.0 / (d as f64).sqrt();
    DMatrix::from_fn(d, d, |a, b| {
        let mut acc = ZERO;
        for (s, &ph) in phases.iter().enumerate() {
            // ⟨a|s⟩_x ⟨s|b⟩_x with ⟨z|s⟩ = ±1/√d
            let sign = parity_sign(a & s) * parity_sign(b & s);
            acc += C64::from_polar(sign * hn * hn, ph);
        }
        acc
    })
}

/// σ_x eigenvalue of qubit `j` in x-basis label `s` (bit 1 ↔ −1).
fn x_sign(s: usize, j: usize, qubits: usize) -> f64 {
    if (s >> (qubits - 1 - j)) & 1 == 1 {
        -1.0
    } else {
        1.0
    }
}

fn parity_sign(bits: usize) -> f64 {
    if bits.count_ones() % 2 == 1 {
        -1.0
    } else {
        1.0
    }
}

/// Residual displacement left on one (ion, mode) by one schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualEntry {
    pub schedule: usize,
    pub ion: usize,
    pub axis: Axis,
    pub mode: usize,
    pub alpha: C64,
}

/// Gate angle accumulated by one schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleEntry {
    pub pair: (usize, usize),
    pub axis: Axis,
    pub chi: f64,
}

/// Closed-form propagator of a set of parallel schedules.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagatorReport {
    pub ions: Vec<usize>,
    pub residuals: Vec<ResidualEntry>,
    pub max_residual: f64,
    pub angles: Vec<AngleEntry>,
    /// Spin-only unitary, present when every residual is below [`CLOSURE_TOLERANCE`].
    pub unitary: Option<DMatrix<C64>>,
    /// Spin–motion entanglement entropy (nats) at τ for |0…0⟩ ⊗ vacuum.
    pub entanglement_entropy: f64,
    pub lamb_dicke_metric: f64,
}

/// Magnus propagator of `schedules` for qubits on `ions`.
pub fn magnus_propagator(
    schedules: &[PulseSchedule],
    modes_x: &ModeSet,
    modes_y: &ModeSet,
    ions: &[usize],
) -> Result<PropagatorReport> {
    let q = ions.len();
    let mut residuals = Vec::new();
    let mut angles = Vec::new();
    let mut ld: f64 = 0.0;
    // β_k(s) = i Σ_i s_i α_{ik}: one list of per-qubit α per (axis, mode)
    let mut displacements: Vec<Vec<(usize, C64)>> = Vec::new();
    let mut gates = Vec::new();
    for (si, sched) in schedules.iter().enumerate() {
        sched.validate()?;
        let modes = axis_modes(sched.axis, modes_x, modes_y)?;
        ld = ld.max(pulse::lamb_dicke_metric(sched, modes));
        let chi = pulse::chi_angle(sched, modes)?;
        angles.push(AngleEntry { pair: sched.pair, axis: sched.axis, chi });
        let qp = qubit_of(ions, sched.pair.0)?;
        let qq = qubit_of(ions, sched.pair.1)?;
        gates.push(((qp, qq), chi));
        for k in 0..modes.mode_count() {
            let mut per_qubit = Vec::new();
            for (ion, qb) in [(sched.pair.0, qp), (sched.pair.1, qq)] {
                let alpha = pulse::alpha_final(sched, modes, ion, k)?;
                residuals.push(ResidualEntry { schedule: si, ion, axis: sched.axis, mode: k, alpha });
                per_qubit.push((qb, alpha));
            }
            displacements.push(per_qubit);
        }
    }
    let max_residual = residuals.iter().map(|r| r.alpha.norm()).fold(0.0, f64::max);
    let unitary = (max_residual < CLOSURE_TOLERANCE).then(|| ideal_ms_unitary(q, &gates));

    // ρ_spin in the σ_x basis for the initial |0…0⟩_z = uniform x-basis superposition
    let d = 1 << q;
    let beta = |s: usize, disp: &[(usize, C64)]| -> C64 {
        disp.iter().map(|&(qb, a)| C64::i() * a * x_sign(s, qb, q)).sum()
    };
    let betas: Vec<Vec<C64>> = (0..d).map(|s| displacements.iter().map(|disp| beta(s, disp)).collect()).collect();
    let rho = DMatrix::from_fn(d, d, |s, t| {
        let overlap: C64 = betas[s]
            .iter()
            .zip(&betas[t])
            .map(|(b, bp)| {
                // ⟨β'|β⟩
                C64::from_polar((-(b - bp).norm_sqr() / 2.0).exp(), (bp.conj() * b).im)
            })
            .product();
        overlap / d as f64
    });
    Ok(PropagatorReport {
        ions: ions.to_vec(),
        residuals,
        max_residual,
        angles,
        unitary,
        entanglement_entropy: von_neumann_entropy(&rho),
        lamb_dicke_metric: ld,
    })
}

fn qubit_of(ions: &[usize], ion: usize) -> Result<usize> {
    ions.iter()
        .position(|&i| i == ion)
        .ok_or_else(|| Error::InvalidState(format!("ion {ion} is driven but is not listed as a qubit")))
}

/// State with one product motional state per σ_x spin configuration.
///
/// Exact for generators whose motional factors split into single-mode
/// commuting blocks, which holds for the linear spin-dependent force. It makes
/// chains with every mode retained tractable.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedState {
    pub ions: Vec<usize>,
    pub modes: Vec<ModeSlot>,
    /// Coefficient of each σ_x eigenstate; bit 0 of a qubit is σ_x = +1 and
    /// qubit 0 is the most significant bit.
    pub spin_x: Vec<C64>,
    /// `factors[s][k]`: normalised Fock amplitudes of slot `k` in configuration `s`.
    pub factors: Vec<Vec<Vec<C64>>>,
}

impl FactorizedState {
    /// `spin` (computational basis) ⊗ |n_1⟩ ⊗ … ⊗ |n_M⟩.
    pub fn product(ions: Vec<usize>, spin: &[C64], modes: Vec<ModeSlot>, fock: &[usize]) -> Result<Self> {
        // validates the arguments on a one-level stand-in
        let probe: Vec<ModeSlot> = modes.iter().map(|m| ModeSlot { cutoff: 0, ..*m }).collect();
        if fock.len() != modes.len() {
            return Err(Error::InvalidState("one Fock level per mode is required".into()));
        }
        SpinMotionState::product(ions.clone(), spin, probe, &vec![0; modes.len()])?;
        for (slot, &n) in modes.iter().zip(fock) {
            if n > slot.cutoff {
                return Err(Error::InvalidState(format!("Fock level {n} above cutoff {}", slot.cutoff)));
            }
        }
        let mut spin_x = spin.to_vec();
        hadamard_all(&mut spin_x, ions.len(), 1);
        let row: Vec<Vec<C64>> = modes
            .iter()
            .zip(fock)
            .map(|(m, &n)| {
                let mut v = vec![ZERO; m.levels()];
                v[n] = ONE;
                v
            })
            .collect();
        let factors = vec![row; spin.len()];
        Ok(FactorizedState { ions, modes, spin_x, factors })
    }

    /// Π_k ⟨other_k|self_k⟩ for configuration `s`, without the spin coefficients.
    fn row_overlap(&self, s: usize, other: &FactorizedState, t: usize) -> C64 {
        self.factors[s]
            .iter()
            .zip(&other.factors[t])
            .map(|(a, b)| b.iter().zip(a).map(|(x, y)| x.conj() * y).sum::<C64>())
            .product()
    }

    /// Partial trace over the modes, in the computational basis.
    pub fn spin_density(&self) -> DMatrix<C64> {
        let d = self.spin_x.len();
        let rho_x = DMatrix::from_fn(d, d, |s, t| self.spin_x[s] * self.spin_x[t].conj() * self.row_overlap(s, self, t));
        let h = hadamard_matrix(self.ions.len());
        &h * rho_x * &h
    }

    pub fn top_level_population(&self, k: usize) -> f64 {
        let top = self.modes[k].cutoff;
        self.spin_x.iter().zip(&self.factors).map(|(c, row)| c.norm_sqr() * row[k][top].norm_sqr()).sum()
    }

    /// |⟨self|other⟩|².
    pub fn overlap_sqr(&self, other: &FactorizedState) -> f64 {
        let o: C64 = (0..self.spin_x.len())
            .map(|s| self.spin_x[s].conj() * other.spin_x[s] * other.row_overlap(s, self, s))
            .sum();
        o.norm_sqr()
    }

    /// Expand into a dense state (small systems only).
    pub fn to_dense(&self) -> Result<SpinMotionState> {
        let q = self.ions.len();
        let motion = Space::new(self.modes.iter().map(ModeSlot::levels).collect());
        let m = motion.len();
        if (m << q) > DENSE_STATE_LIMIT {
            return Err(Error::SizeLimit(format!("dense state of {} amplitudes", m << q)));
        }
        let mut amplitudes = vec![ZERO; m << q];
        for (s, row) in self.factors.iter().enumerate() {
            for idx in 0..m {
                let v: C64 = row.iter().enumerate().map(|(k, f)| f[motion.digit(idx, k)]).product();
                amplitudes[s * m + idx] = self.spin_x[s] * v;
            }
        }
        hadamard_all(&mut amplitudes, q, m);
        Ok(SpinMotionState { ions: self.ions.clone(), modes: self.modes.clone(), amplitudes })
    }
}

/// Largest dense state (amplitudes) built by this module.
pub const DENSE_STATE_LIMIT: usize = 1 << 24;

/// H^{⊗q} as a dense matrix.
fn hadamard_matrix(qubits: usize) -> DMatrix<C64> {
    let d = 1 << qubits;
    let h = 1.0 / (d as f64).sqrt();
    DMatrix::from_fn(d, d, |a, b| C64::new(parity_sign(a & b) * h, 0.0))
}

fn run_steps_factorized(gen: &Generator, state: &FactorizedState, opts: &EvolveOptions, dt_max: f64) -> Result<FactorizedState> {
    let (blocks, scalars) = gen
        .blocks
        .as_ref()
        .filter(|(b, _)| b.iter().all(|blk| blk.sites.len() == 1))
        .ok_or_else(|| Error::InvalidState("generator does not split into single-mode blocks".into()))?;
    let mut out = state.clone();
    for (a, b) in gen.steps(dt_max) {
        let coeffs = gen.step_coefficients(a, b);
        out.factors.par_iter_mut().zip(out.spin_x.par_iter_mut()).enumerate().for_each(|(s, (row, c))| {
            for blk in blocks {
                let u = blk.propagator(&coeffs, &gen.terms, s);
                let k = blk.sites[0];
                row[k] = (&u * nalgebra::DVector::from_column_slice(&row[k])).iter().copied().collect();
            }
            *c *= gen.scalar_phase(&coeffs, scalars, s);
        });
        for (k, slot) in out.modes.iter().enumerate() {
            let p = out.top_level_population(k);
            if p > opts.leakage_bound {
                return Err(Error::FockLeakage { mode: format!("{} {}", slot.axis, slot.mode), population: p, bound: opts.leakage_bound });
            }
        }
    }
    Ok(out)
}

/// [`evolve_exact`] on the factorized representation.
pub fn evolve_factorized(
    schedules: &[PulseSchedule],
    modes_x: &ModeSet,
    modes_y: &ModeSet,
    state: &FactorizedState,
    opts: &EvolveOptions,
) -> Result<FactorizedState> {
    if !(opts.dt_max > 0.0) {
        return Err(Error::InvalidConfig(format!("dt_max must be positive, got {}", opts.dt_max)));
    }
    let gen = Generator::new(schedules, modes_x, modes_y, &state.ions, &state.modes, false)?;
    let out = run_steps_factorized(&gen, state, opts, opts.dt_max)?;
    if opts.check_convergence {
        let fine = run_steps_factorized(&gen, state, opts, 0.5 * opts.dt_max)?;
        let change = 1.0 - out.overlap_sqr(&fine);
        if change > opts.convergence_tol {
            return Err(Error::StepConvergence(change));
        }
    }
    Ok(out)
}

/// ‖a − b‖ for product vectors given as factor lists, by telescoping so that
/// nearly equal products keep their relative accuracy.
fn product_difference_norm(a: &[Vec<C64>], b: &[Vec<C64>]) -> f64 {
    let dot = |x: &[C64], y: &[C64]| -> C64 { x.iter().zip(y).map(|(u, v)| u.conj() * v).sum() };
    let k = a.len();
    let delta: Vec<Vec<C64>> = a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect()).collect();
    // term_i = a_1 … a_{i−1} ⊗ δ_i ⊗ b_{i+1} … b_k
    let factor = |term: usize, site: usize| -> &[C64] {
        match site.cmp(&term) {
            std::cmp::Ordering::Less => &a[site],
            std::cmp::Ordering::Equal => &delta[site],
            std::cmp::Ordering::Greater => &b[site],
        }
    };
    let mut total = ZERO;
    for i in 0..k {
        for j in 0..k {
            total += (0..k).map(|s| dot(factor(i, s), factor(j, s))).product::<C64>();
        }
    }
    total.re.max(0.0).sqrt()
}

/// How [`cross_coupling_residual`] stores states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Dense when the state fits under [`DENSE_STATE_LIMIT`], else factorized.
    Auto,
    Dense,
    Factorized,
}

/// Settings for [`cross_coupling_residual`].
#[derive(Clone, Debug, PartialEq)]
pub struct CrossCheckOptions {
    pub cutoff: usize,
    pub evolve: EvolveOptions,
    pub representation: Representation,
}

impl Default for CrossCheckOptions {
    fn default() -> Self {
        CrossCheckOptions { cutoff: DEFAULT_CUTOFF, evolve: EvolveOptions::default(), representation: Representation::Auto }
    }
}

/// Outcome of the x/y ordering check.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossCouplingReport {
    pub ions: Vec<usize>,
    /// ‖U_xy − U_x U_y‖ on (all spin states) ⊗ vacuum.
    pub distance: f64,
    /// Worst spin-reduced fidelity of the parallel evolution against the ideal
    /// MS product over computational-basis inputs.
    pub min_fidelity: f64,
    pub angles: Vec<AngleEntry>,
    pub max_residual: f64,
    pub representation: Representation,
}

/// D = ‖U_parallel − U_x U_y‖ for one X and one Y schedule.
pub fn cross_coupling_residual(
    schedule_x: &PulseSchedule,
    schedule_y: &PulseSchedule,
    modes_x: &ModeSet,
    modes_y: &ModeSet,
    opts: &CrossCheckOptions,
) -> Result<CrossCouplingReport> {
    if schedule_x.axis != Axis::X || schedule_y.axis != Axis::Y {
        return Err(Error::InvalidSchedule(format!(
            "cross-coupling check needs one X and one Y schedule, got {} and {}",
            schedule_x.axis, schedule_y.axis
        )));
    }
    let mut ions = vec![schedule_x.pair.0, schedule_x.pair.1, schedule_y.pair.0, schedule_y.pair.1];
    ions.sort_unstable();
    ions.dedup();
    let q = ions.len();
    let mut slots = ModeSlot::all(modes_x, opts.cutoff);
    slots.extend(ModeSlot::all(modes_y, opts.cutoff));
    let both = [schedule_x.clone(), schedule_y.clone()];
    let magnus = magnus_propagator(&both, modes_x, modes_y, &ions)?;
    let gates: Vec<((usize, usize), f64)> = both
        .iter()
        .zip(&magnus.angles)
        .map(|(s, a)| Ok(((qubit_of(&ions, s.pair.0)?, qubit_of(&ions, s.pair.1)?), a.chi)))
        .collect::<Result<_>>()?;
    let ideal = ideal_ms_unitary(q, &gates);
    let dense_len = slots.iter().map(ModeSlot::levels).try_fold(1usize << q, |acc, l| acc.checked_mul(l));
    let representation = match opts.representation {
        Representation::Auto if dense_len.is_some_and(|n| n <= DENSE_STATE_LIMIT) => Representation::Dense,
        Representation::Auto => Representation::Factorized,
        r => r,
    };
    let (distance, min_fidelity) = match representation {
        Representation::Dense => dense_cross_check(&both, modes_x, modes_y, &ions, &slots, &ideal, &opts.evolve)?,
        _ => factorized_cross_check(&both, modes_x, modes_y, &ions, &slots, &ideal, &opts.evolve)?,
    };
    Ok(CrossCouplingReport {
        ions,
        distance,
        min_fidelity,
        angles: magnus.angles,
        max_residual: magnus.max_residual,
        representation,
    })
}

/// Both propagators preserve every σ_x configuration, so the difference maps
/// |s⟩_x ⊗ vacuum to orthogonal outputs and its norm is the largest per-row
/// difference. One input with every configuration populated suffices.
fn dense_cross_check(
    both: &[PulseSchedule; 2],
    modes_x: &ModeSet,
    modes_y: &ModeSet,
    ions: &[usize],
    slots: &[ModeSlot],
    ideal: &DMatrix<C64>,
    opts: &EvolveOptions,
) -> Result<(f64, f64)> {
    let q = ions.len();
    let d = 1usize << q;
    let mut spin = vec![ZERO; d];
    spin[0] = ONE;
    let start = SpinMotionState::product(ions.to_vec(), &spin, slots.to_vec(), &vec![0; slots.len()])?;
    let par = evolve_exact(both, modes_x, modes_y, &start, opts)?;
    let y_only = evolve_exact(&both[1..], modes_x, modes_y, &start, opts)?;
    let seq = evolve_exact(&both[..1], modes_x, modes_y, &y_only, opts)?;
    let m = par.amplitudes.len() / d;
    let to_rows = |st: &SpinMotionState| {
        let mut v = st.amplitudes.clone();
        hadamard_all(&mut v, q, m);
        // undo the uniform input weight 1/√d
        v.iter_mut().for_each(|x| *x *= (d as f64).sqrt());
        v
    };
    let (pr, sr) = (to_rows(&par), to_rows(&seq));
    let distance = pr
        .chunks(m)
        .zip(sr.chunks(m))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let h = hadamard_matrix(q);
    let mut min_fidelity = f64::INFINITY;
    for b in 0..d {
        let mut psi = pr.clone();
        for (s, row) in psi.chunks_mut(m).enumerate() {
            row.iter_mut().for_each(|x| *x *= h[(s, b)]);
        }
        hadamard_all(&mut psi, q, m);
        let st = SpinMotionState { ions: ions.to_vec(), modes: slots.to_vec(), amplitudes: psi };
        let target: Vec<C64> = ideal.column(b).iter().copied().collect();
        min_fidelity = min_fidelity.min(fidelity(&st.spin_density(), &target));
    }
    Ok((distance, min_fidelity))
}

/// Factorized counterpart of [`dense_cross_check`].
fn factorized_cross_check(
    both: &[PulseSchedule; 2],
    modes_x: &ModeSet,
    modes_y: &ModeSet,
    ions: &[usize],
    slots: &[ModeSlot],
    ideal: &DMatrix<C64>,
    opts: &EvolveOptions,
) -> Result<(f64, f64)> {
    let d = 1usize << ions.len();
    // |+…+⟩ gives every σ_x configuration the same nonzero weight
    let mut spin = vec![ZERO; d];
    spin[0] = ONE;
    let start = FactorizedState::product(ions.to_vec(), &spin, slots.to_vec(), &vec![0; slots.len()])?;
    let par = evolve_factorized(both, modes_x, modes_y, &start, opts)?;
    let y_only = evolve_factorized(&both[1..], modes_x, modes_y, &start, opts)?;
    let seq = evolve_factorized(&both[..1], modes_x, modes_y, &y_only, opts)?;
    let unit_row = |st: &FactorizedState, s: usize| -> Vec<Vec<C64>> {
        let mut row = vec![vec![st.spin_x[s] / start.spin_x[s]]];
        row.extend(st.factors[s].iter().cloned());
        row
    };
    let distance = (0..d).map(|s| product_difference_norm(&unit_row(&par, s), &unit_row(&seq, s))).fold(0.0, f64::max);
    let h = hadamard_matrix(ions.len());
    let mut min_fidelity = f64::INFINITY;
    for b in 0..d {
        let c: Vec<C64> = h.column(b).iter().copied().collect();
        let mut input = par.clone();
        for (s, amp) in input.spin_x.iter_mut().enumerate() {
            *amp = c[s] * par.spin_x[s] / start.spin_x[s];
        }
        let target: Vec<C64> = ideal.column(b).iter().copied().collect();
        min_fidelity = min_fidelity.min(fidelity(&input.spin_density(), &target));
    }
    Ok((distance, min_fidelity))
}

/// JSON form of [`PropagatorReport`]; complex numbers are `[re, im]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagatorRecord {
    pub ions: Vec<usize>,
    pub max_residual: f64,
    pub residuals: Vec<ResidualRecord>,
    pub angles: Vec<AngleRecord>,
    /// Row-major spin unitary.
    pub unitary: Option<Vec<Vec<[f64; 2]>>>,
    pub entanglement_entropy: f64,
    pub lamb_dicke_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub schedule: usize,
    pub ion: usize,
    pub axis: Axis,
    pub mode: usize,
    pub alpha: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleRecord {
    pub pair: (usize, usize),
    pub axis: Axis,
    pub chi_rad: f64,
}

impl From<&PropagatorReport> for PropagatorRecord {
    fn from(r: &PropagatorReport) -> Self {
        PropagatorRecord {
            ions: r.ions.clone(),
            max_residual: r.max_residual,
            residuals: r
                .residuals
                .iter()
                .map(|e| ResidualRecord { schedule: e.schedule, ion: e.ion, axis: e.axis, mode: e.mode, alpha: [e.alpha.re, e.alpha.im] })
                .collect(),
            angles: r.angles.iter().map(|a| AngleRecord { pair: a.pair, axis: a.axis, chi_rad: a.chi }).collect(),
            unitary: r.unitary.as_ref().map(|u| {
                (0..u.nrows()).map(|i| (0..u.ncols()).map(|j| [u[(i, j)].re, u[(i, j)].im]).collect()).collect()
            }),
            entanglement_entropy: r.entanglement_entropy,
            lamb_dicke_metric: r.lamb_dicke_metric,
        }
    }
}

/// Largest |U†U − I| entry.
pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    let p = u.adjoint() * u;
    let n = p.nrows();
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (p[(i, j)] - if i == j { ONE } else { ZERO }).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{IonChain, TrapConfig};
    use crate::pulse::{default_detuning, design_amplitude_modulated, DesignOptions, Segment};

    const QUARTER_PI: f64 = std::f64::consts::FRAC_PI_4;

    fn detuning(m: &ModeSet) -> f64 {
        m.max_frequency() + 2.0 * std::f64::consts::PI * 20e3
    }

    fn two_ion_one_mode() -> (ModeSet, ModeSet) {
        let chain = IonChain::new(TrapConfig::default().with_ion_count(2)).unwrap();
        (chain.modes(Axis::X).restrict(&[0]).unwrap(), chain.modes(Axis::Y).restrict(&[0]).unwrap())
    }

    #[test]
    fn zero_drive_leaves_state_unchanged() {
        let (mx, my) = two_ion_one_mode();
        let sched = PulseSchedule {
            pair: (0, 1),
            axis: Axis::X,
            detuning: default_detuning(&mx),
            phases: (0.0, 0.0),
            segments: vec![Segment { duration: 1e-4, amplitude_p: 0.0, amplitude_q: 0.0 }; 3],
        };
        let s = SpinMotionState::ground(vec![0, 1], ModeSlot::all(&mx, 6)).unwrap();
        let out = evolve_exact(&[sched], &mx, &my, &s, &EvolveOptions::default()).unwrap();
        let drift = out.amplitudes.iter().zip(&s.amplitudes).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(drift < 1e-15, "{drift}");
    }

    #[test]
    fn single_gate_matches_ideal_ms() {
        let (mx, my) = two_ion_one_mode();
        let sched = design_amplitude_modulated((0, 1), &mx, 200e-6, 3, detuning(&mx), QUARTER_PI, &DesignOptions::default()).unwrap();
        let s = SpinMotionState::ground(vec![0, 1], ModeSlot::all(&mx, 12)).unwrap();
        let out = evolve_exact(&[sched], &mx, &my, &s, &EvolveOptions { check_convergence: true, ..Default::default() }).unwrap();
        assert!((out.norm() - 1.0).abs() < 1e-9);
        let u = ideal_ms_unitary(2, &[((0, 1), QUARTER_PI)]);
        let target: Vec<C64> = u.column(0).iter().copied().collect();
        let f = fidelity(&out.spin_density(), &target);
        assert!(f > 1.0 - 1e-6, "fidelity {f}");
        // cos χ |00⟩ + i sin χ |11⟩
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((target[0] - C64::new(h, 0.0)).norm() < 1e-12 && (target[3] - C64::new(0.0, h)).norm() < 1e-12);
    }

    #[test]
    fn magnus_entropy_matches_exact_for_open_loop() {
        let (mx, my) = two_ion_one_mode();
        let mut sched = design_amplitude_modulated((0, 1), &mx, 200e-6, 3, detuning(&mx), QUARTER_PI, &DesignOptions::default()).unwrap();
        sched.segments.pop();
        let rep = magnus_propagator(std::slice::from_ref(&sched), &mx, &my, &[0, 1]).unwrap();
        assert!(rep.max_residual > 1e-3 && rep.unitary.is_none());
        let s = SpinMotionState::ground(vec![0, 1], ModeSlot::all(&mx, 20)).unwrap();
        let out = evolve_exact(&[sched], &mx, &my, &s, &EvolveOptions::default()).unwrap();
        let exact = von_neumann_entropy(&out.spin_density());
        assert!(exact > 1e-3);
        assert!((exact - rep.entanglement_entropy).abs() < 1e-8, "{exact} vs {}", rep.entanglement_entropy);
    }

    #[test]
    fn ideal_unitary_is_unitary_and_commutes() {
        let u = ideal_ms_unitary(3, &[((0, 1), 0.3), ((1, 2), -0.7)]);
        assert!(unitarity_defect(&u) < 1e-12);
        let a = ideal_ms_unitary(3, &[((0, 1), 0.3)]);
        let b = ideal_ms_unitary(3, &[((1, 2), -0.7)]);
        assert!((&a * &b - &u).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn thermal_branches_are_normalised() {
        let slots = vec![ModeSlot { axis: Axis::X, mode: 0, cutoff: 12 }; 2];
        let t = thermal_branches(&slots, &[0.1, 0.5], 1e-10).unwrap();
        let total: f64 = t.branches.iter().map(|b| b.0).sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!(t.discarded_weight < 1e-7);
    }

    #[test]
    fn same_axis_schedules_rejected() {
        let (mx, my) = two_ion_one_mode();
        let sched = design_amplitude_modulated((0, 1), &mx, 200e-6, 3, detuning(&mx), QUARTER_PI, &DesignOptions::default()).unwrap();
        let s = SpinMotionState::ground(vec![0, 1], ModeSlot::all(&mx, 4)).unwrap();
        assert!(matches!(
            evolve_exact(&[sched.clone(), sched], &mx, &my, &s, &EvolveOptions::default()),
            Err(Error::InvalidSchedule(_))
        ));
    }

    fn open_loop_pair() -> (Vec<PulseSchedule>, ModeSet, ModeSet) {
        let chain = IonChain::new(TrapConfig::default().with_ion_count(3)).unwrap();
        let mx = chain.modes(Axis::X).restrict(&[0, 1]).unwrap();
        let my = chain.modes(Axis::Y).restrict(&[0]).unwrap();
        let mut sx = design_amplitude_modulated((0, 1), &mx, 200e-6, 5, detuning(&mx), QUARTER_PI, &DesignOptions::default()).unwrap();
        let sy = design_amplitude_modulated((1, 2), &my, 200e-6, 3, detuning(&my), -0.4, &DesignOptions::default()).unwrap();
        // leave motion entangled so the comparison sees it
        sx.segments.pop();
        (vec![sx, sy], mx, my)
    }

    #[test]
    fn dense_krylov_and_factorized_agree() {
        let (scheds, mx, my) = open_loop_pair();
        let mut slots = ModeSlot::all(&mx, 10);
        slots.extend(ModeSlot::all(&my, 10));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let spin = [C64::new(h, 0.0), ZERO, ZERO, ZERO, ZERO, C64::new(0.0, 0.5), C64::new(0.5, 0.0), ZERO];
        let fock = [0, 1, 0];
        let dense0 = SpinMotionState::product(vec![0, 1, 2], &spin, slots.clone(), &fock).unwrap();
        let fact0 = FactorizedState::product(vec![0, 1, 2], &spin, slots, &fock).unwrap();
        let expanded = fact0.to_dense().unwrap();
        assert!(expanded.amplitudes.iter().zip(&dense0.amplitudes).all(|(a, b)| (a - b).norm() < 1e-15));

        let dense = evolve_exact(&scheds, &mx, &my, &dense0, &EvolveOptions::default()).unwrap();
        let krylov = evolve_exact(&scheds, &mx, &my, &dense0, &EvolveOptions { krylov_only: true, ..Default::default() }).unwrap();
        let fact = evolve_factorized(&scheds, &mx, &my, &fact0, &EvolveOptions::default()).unwrap().to_dense().unwrap();
        for other in [&krylov, &fact] {
            let err = dense.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{err}");
        }
    }

    #[test]
    fn factorized_spin_density_matches_dense() {
        let (scheds, mx, my) = open_loop_pair();
        let mut slots = ModeSlot::all(&mx, 8);
        slots.extend(ModeSlot::all(&my, 8));
        let spin: Vec<C64> = (0..8).map(|k| C64::new(1.0, k as f64).unscale((8.0f64 + 140.0).sqrt())).collect();
        let f0 = FactorizedState::product(vec![0, 1, 2], &spin, slots, &[0; 3]).unwrap();
        let f = evolve_factorized(&scheds, &mx, &my, &f0, &EvolveOptions::default()).unwrap();
        let a = f.spin_density();
        let b = f.to_dense().unwrap().spin_density();
        assert!((&a - &b).iter().all(|z| z.norm() < 1e-12));
        assert!((a.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_check_representations_agree() {
        let chain = IonChain::new(TrapConfig::default().with_ion_count(3)).unwrap();
        let mx = chain.modes(Axis::X).restrict(&[0]).unwrap();
        let my = chain.modes(Axis::Y).restrict(&[0]).unwrap();
        let sx = design_amplitude_modulated((0, 1), &mx, 200e-6, 3, detuning(&mx), QUARTER_PI, &DesignOptions::default()).unwrap();
        let sy = design_amplitude_modulated((1, 2), &my, 200e-6, 3, detuning(&my), QUARTER_PI, &DesignOptions::default()).unwrap();
        let run = |representation| {
            let opts = CrossCheckOptions { representation, ..Default::default() };
            cross_coupling_residual(&sx, &sy, &mx, &my, &opts).unwrap()
        };
        let (d, f) = (run(Representation::Dense), run(Representation::Factorized));
        assert_eq!(run(Representation::Auto).representation, Representation::Dense);
        assert!(d.distance < 1e-12 && f.distance < 1e-12, "{} {}", d.distance, f.distance);
        assert!((d.min_fidelity - f.min_fidelity).abs() < 1e-10);
        assert!(d.min_fidelity > 1.0 - 1e-6 && d.min_fidelity <= 1.0 + 1e-12);
    }
}
