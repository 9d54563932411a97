//! Closed-form integrals of complex exponentials over one time segment.
//!
//! Every drive in this crate is piecewise constant in amplitude, so all
//! displacement and phase integrals reduce to sums of these two kernels.

use num_complex::Complex64 as C64;

/// Below this |ν h| the nested kernel switches to its power series.
const SERIES_THRESHOLD: f64 = 0.5;

/// sin(x)/x, accurate near zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

#[inline]
fn cis(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

/// ∫_0^h e^{iνu} du.
#[inline]
fn local(nu: f64, h: f64) -> C64 {
    cis(0.5 * nu * h) * (h * sinc(0.5 * nu * h))
}

/// ∫_a^b e^{iνt} dt. Finite at ν = 0.
pub fn exp_integral(nu: f64, a: f64, b: f64) -> C64 {
    cis(nu * a) * local(nu, b - a)
}

/// ∫_a^b dt₂ e^{iν₂t₂} ∫_a^{t₂} dt₁ e^{iν₁t₁}.
pub fn nested_exp_integral(nu2: f64, nu1: f64, a: f64, b: f64) -> C64 {
    let h = b - a;
    cis((nu1 + nu2) * a) * nested_local(nu2, nu1, h)
}

fn nested_local(nu2: f64, nu1: f64, h: f64) -> C64 {
    let i = C64::i();
    if nu1.abs() >= nu2.abs() && nu1.abs() * h > SERIES_THRESHOLD {
        (local(nu1 + nu2, h) - local(nu2, h)) / (i * nu1)
    } else if nu2.abs() > nu1.abs() && nu2.abs() * h > SERIES_THRESHOLD {
        (cis(nu2 * h) * local(nu1, h) - local(nu1 + nu2, h)) / (i * nu2)
    } else {
        nested_series(nu2 * h, nu1 * h) * (h * h)
    }
}

/// Σ_{m,n} (ix₂)ⁿ(ix₁)ᵐ / (n! m! (m+1)(n+m+2)) for |x₁|, |x₂| ≤ 0.5.
fn nested_series(x2: f64, x1: f64) -> C64 {
    let i = C64::i();
    let z2 = i * x2;
    let z1 = i * x1;
    let mut total = C64::new(0.0, 0.0);
    let mut p2 = C64::new(1.0, 0.0); // z2^n / n!
    for n in 0..40 {
        let mut p1 = C64::new(1.0, 0.0); // z1^m / m!
        let mut row = C64::new(0.0, 0.0);
        for m in 0..40 {
            let term = p1 / ((m as f64 + 1.0) * (n as f64 + m as f64 + 2.0));
            row += term;
            if term.norm() < 1e-20 {
                break;
            }
            p1 *= z1 / (m as f64 + 1.0);
        }
        let contrib = p2 * row;
        total += contrib;
        if contrib.norm() < 1e-20 {
            break;
        }
        p2 *= z2 / (n as f64 + 1.0);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson, only for smoke checks of the kernels here.
    fn simpson<F: Fn(f64) -> C64>(f: F, a: f64, b: f64, n: usize) -> C64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += f(a + k as f64 * h) * w;
        }
        s * (h / 3.0)
    }

    #[test]
    fn zero_frequency_limits() {
        assert!((exp_integral(0.0, 1.0, 3.0) - C64::new(2.0, 0.0)).norm() < 1e-15);
        let k = nested_exp_integral(0.0, 0.0, 0.0, 2.0);
        assert!((k - C64::new(2.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn nested_kernel_branches_agree_with_direct_evaluation() {
        // inner integral done analytically, outer by Simpson
        for &(nu2, nu1) in &[(0.3, 0.2), (5.0, -5.0), (7.0, 0.1), (0.1, 9.0), (-3.0, 2.5), (0.0, 4.0)] {
            let (a, b) = (0.4, 1.7);
            let inner = |t2: f64| exp_integral(nu1, a, t2);
            let direct = simpson(|t| cis(nu2 * t) * inner(t), a, b, 4000);
            let closed = nested_exp_integral(nu2, nu1, a, b);
            assert!((direct - closed).norm() < 1e-10, "{nu2} {nu1}: {direct} vs {closed}");
        }
    }

    #[test]
    fn branches_are_continuous_at_threshold() {
        let h = 1.0;
        for &nu in &[SERIES_THRESHOLD - 1e-9, SERIES_THRESHOLD + 1e-9] {
            let a = nested_local(0.2, nu, h);
            let b = nested_local(0.2, SERIES_THRESHOLD, h);
            assert!((a - b).norm() < 1e-8);
        }
    }
}
