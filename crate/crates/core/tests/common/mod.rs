//! Independent reference computations shared by the integration tests.
//!
//! None of these call the library's numerics: quadrature replaces the closed
//! forms, gradient descent replaces Newton, Kronecker products and Taylor
//! series replace the simulators.

#![allow(dead_code)]

use std::f64::consts::PI;

use ionpar::pulse::PulseSchedule;
use ionpar::ModeSet;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

/// Equilibrium of H = Σ u²/2 + Σ_{i<j} 1/|u_i − u_j| by plain gradient
/// descent, started from an evenly spaced guess.
pub fn equilibrium_gradient_descent(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let mut u: Vec<f64> = (0..n).map(|i| i as f64 - (n as f64 - 1.0) / 2.0).collect();
    let grad = |u: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut g = u[i];
                for j in 0..n {
                    if j != i {
                        let d = u[i] - u[j];
                        g -= d.signum() / (d * d);
                    }
                }
                g
            })
            .collect()
    };
    // Step below 2/λ_max of the Hessian, which stays under 3n for n ≤ 10.
    let step = 0.5 / (3.0 * n as f64);
    for _ in 0..2_000_000 {
        let g = grad(&u);
        let norm = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if norm < 1e-14 {
            break;
        }
        for (x, gx) in u.iter_mut().zip(&g) {
            *x -= step * gx;
        }
    }
    u
}

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GAUSS7_WEIGHTS: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64) -> (C64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kronrod = C64::new(0.0, 0.0);
    let mut gauss = C64::new(0.0, 0.0);
    for i in 0..8 {
        let x = KRONROD_NODES[i];
        let fx = if x == 0.0 { f(c) } else { f(c - h * x) + f(c + h * x) };
        kronrod += KRONROD_WEIGHTS[i] * fx;
        if i % 2 == 1 {
            gauss += GAUSS7_WEIGHTS[i / 2] * fx;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).norm())
}

/// Adaptive Gauss–Kronrod (7/15) integral of a complex function. Intervals
/// shorter than 2⁻¹⁴ of the range are accepted as they are.
pub fn integrate_adaptive<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64, abs_tol: f64) -> C64 {
    let mut stack = vec![(a, b, abs_tol)];
    let mut total = C64::new(0.0, 0.0);
    let floor = (b - a).abs() * 2f64.powi(-14);
    while let Some((lo, hi, tol)) = stack.pop() {
        let (v, err) = gk15(f, lo, hi);
        if err <= tol || (hi - lo) < floor {
            total += v;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * tol));
            stack.push((mid, hi, 0.5 * tol));
        }
    }
    total
}

fn amplitude_of(s: &PulseSchedule, ion: usize) -> Vec<f64> {
    s.segments
        .iter()
        .map(|g| if ion == s.pair.0 { g.amplitude_p } else if ion == s.pair.1 { g.amplitude_q } else { 0.0 })
        .collect()
}

fn phase_of(s: &PulseSchedule, ion: usize) -> f64 {
    if ion == s.pair.0 {
        s.phases.0
    } else if ion == s.pair.1 {
        s.phases.1
    } else {
        0.0
    }
}

fn segment_edges(s: &PulseSchedule) -> Vec<f64> {
    let mut t = 0.0;
    let mut out = vec![0.0];
    for g in &s.segments {
        t += g.duration;
        out.push(t);
    }
    out
}

/// α_{i,k}(τ) = −∫ η Ω_i(t) cos(μt − φ_i) e^{iω_k t} dt by adaptive quadrature.
pub fn alpha_quadrature(s: &PulseSchedule, modes: &ModeSet, ion: usize, k: usize) -> C64 {
    let eta = modes.lamb_dicke[(ion, k)];
    let w = modes.frequencies[k];
    let phi = phase_of(s, ion);
    let amps = amplitude_of(s, ion);
    let edges = segment_edges(s);
    let mut total = C64::new(0.0, 0.0);
    for (seg, a) in amps.iter().enumerate() {
        let f = |t: f64| C64::from_polar(eta * a * (s.detuning * t - phi).cos(), w * t);
        let scale = (eta * a).abs() * (edges[seg + 1] - edges[seg]);
        total -= integrate_adaptive(&f, edges[seg], edges[seg + 1], 1e-13 * scale.max(f64::MIN_POSITIVE));
    }
    total
}

/// ∫₀^τ dt₂ ∫₀^{t₂} dt₁ g_a(t₂) g_b(t₁) sin(ω(t₂ − t₁)) with g_i = Ω_i cos(μt − φ_i),
/// by nested composite Gauss–Legendre. Panels never straddle a segment edge
/// and span at most two radians of the fastest tone.
fn nested_sine_integral(s: &PulseSchedule, a: usize, b: usize, w: f64) -> f64 {
    let mu = s.detuning;
    let (x, wts) = gauss_legendre(12);
    let (amp_a, amp_b) = (amplitude_of(s, a), amplitude_of(s, b));
    let (pa, pb) = (phase_of(s, a), phase_of(s, b));
    let seg = segment_edges(s);
    let rule = |lo: f64, hi: f64| {
        let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        x.iter().zip(&wts).map(move |(xi, wi)| (c + h * xi, h * wi))
    };
    // sin(ω(t₂−t₁)) = sin ωt₂ cos ωt₁ − cos ωt₂ sin ωt₁
    let inner = |ab: f64, lo: f64, hi: f64| -> (f64, f64) {
        rule(lo, hi).fold((0.0, 0.0), |(c, sn), (t, wt)| {
            let g = ab * (mu * t - pb).cos();
            (c + wt * g * (w * t).cos(), sn + wt * g * (w * t).sin())
        })
    };
    let mut total = 0.0;
    let (mut prefix_c, mut prefix_s) = (0.0, 0.0);
    for (k, e) in seg.windows(2).enumerate() {
        let n = ((e[1] - e[0]) * (mu + w) / 2.0).ceil().max(1.0) as usize;
        for j in 0..n {
            let lo = e[0] + (e[1] - e[0]) * j as f64 / n as f64;
            let hi = e[0] + (e[1] - e[0]) * (j + 1) as f64 / n as f64;
            for (t2, wt2) in rule(lo, hi) {
                let (c, sn) = inner(amp_b[k], lo, t2);
                let ga = amp_a[k] * (mu * t2 - pa).cos();
                total += wt2 * ga * ((w * t2).sin() * (prefix_c + c) - (w * t2).cos() * (prefix_s + sn));
            }
            let (c, sn) = inner(amp_b[k], lo, hi);
            prefix_c += c;
            prefix_s += sn;
        }
    }
    total
}

/// χ_pq = Σ_k η_p η_q (I_pq + I_qp) with the nested integrals done by quadrature.
pub fn chi_quadrature(s: &PulseSchedule, modes: &ModeSet) -> f64 {
    let (p, q) = s.pair;
    (0..modes.frequencies.len())
        .map(|k| {
            let w = modes.frequencies[k];
            modes.lamb_dicke[(p, k)]
                * modes.lamb_dicke[(q, k)]
                * (nested_sine_integral(s, p, q, w) + nested_sine_integral(s, q, p, w))
        })
        .sum()
}

pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

pub fn pauli_x() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)])
}

pub fn pauli_z() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0)])
}

/// `op` on qubit `k` of `n` (qubit 0 most significant).
pub fn embed(op: &DMatrix<C64>, k: usize, n: usize) -> DMatrix<C64> {
    let mut m = DMatrix::<C64>::identity(1, 1);
    for j in 0..n {
        let f = if j == k { op.clone() } else { DMatrix::identity(2, 2) };
        m = kron(&m, &f);
    }
    m
}

/// Π exp(iχ X_p X_q) = Π (cos χ + i sin χ X_p X_q) for qubit indices.
pub fn xx_product(n: usize, gates: &[((usize, usize), f64)]) -> DMatrix<C64> {
    let d = 1 << n;
    let mut u = DMatrix::<C64>::identity(d, d);
    let x = pauli_x();
    for &((p, q), chi) in gates {
        let xx = embed(&x, p, n) * embed(&x, q, n);
        let g = DMatrix::<C64>::identity(d, d) * C64::new(chi.cos(), 0.0) + xx * C64::new(0.0, chi.sin());
        u = g * u;
    }
    u
}

/// exp(m) by scaling and squaring a Taylor series.
pub fn expm(m: &DMatrix<C64>) -> DMatrix<C64> {
    let n = m.nrows();
    let norm = m.iter().map(|z| z.norm()).sum::<f64>();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let a = m / C64::new(2f64.powi(squarings as i32), 0.0);
    let mut term = DMatrix::<C64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..40 {
        term = &term * &a / C64::new(k as f64, 0.0);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// m(t) = Σ⟨σ_z⟩ for H = −J Σ XX − B Σ Z from |0…0⟩ at t = k·dt.
pub fn tfim_magnetization(spins: usize, j: f64, b: f64, dt: f64, steps: usize) -> Vec<f64> {
    let d = 1 << spins;
    let x = pauli_x();
    let z = pauli_z();
    let mut h = DMatrix::<C64>::zeros(d, d);
    for i in 0..spins - 1 {
        h -= embed(&x, i, spins) * embed(&x, i + 1, spins) * C64::new(j, 0.0);
    }
    for i in 0..spins {
        h -= embed(&z, i, spins) * C64::new(b, 0.0);
    }
    let u = expm(&(h * C64::new(0.0, -dt)));
    let mz: DMatrix<C64> = (0..spins).map(|i| embed(&z, i, spins)).fold(DMatrix::zeros(d, d), |acc, m| acc + m);
    let mut psi = nalgebra::DVector::<C64>::zeros(d);
    psi[0] = C64::new(1.0, 0.0);
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        if k > 0 {
            psi = &u * psi;
        }
        out.push((psi.adjoint() * &mz * &psi)[(0, 0)].re);
    }
    out
}

/// max_ij |a_ij − b_ij|.
pub fn max_entry_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Distance up to a global phase: min_θ max |a − e^{iθ} b| with θ from the
/// largest overlap entry.
pub fn phase_free_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let tr: C64 = (b.adjoint() * a).trace();
    let phase = if tr.norm() > 0.0 { tr / tr.norm() } else { C64::new(1.0, 0.0) };
    max_entry_diff(a, &(b * phase))
}
