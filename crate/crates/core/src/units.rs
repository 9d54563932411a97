//! Physical constants (CODATA 2018, SI) and unit helpers.

use std::f64::consts::PI;

pub const HBAR: f64 = 1.054_571_817e-34;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Mass of a ¹⁷¹Yb⁺ ion in kg (electron mass neglected).
pub const YB171_MASS: f64 = 170.936_323_6 * ATOMIC_MASS_UNIT;

/// Counter-propagating 355 nm Raman beams.
pub const RAMAN_DELTA_K: f64 = 2.0 * 2.0 * PI / 355e-9;

#[inline]
pub fn hz_to_angular(f: f64) -> f64 {
    2.0 * PI * f
}

#[inline]
pub fn angular_to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Characteristic axial length ℓ = (e²/(4πε₀ M ω_z²))^{1/3}.
pub fn coulomb_length(mass: f64, axial_freq: f64) -> f64 {
    (ELEMENTARY_CHARGE * ELEMENTARY_CHARGE
        / (4.0 * PI * VACUUM_PERMITTIVITY * mass * axial_freq * axial_freq))
        .cbrt()
}
