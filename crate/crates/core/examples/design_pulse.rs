//! Designs a π/4 MS pulse on ions (3, 5) along X and checks closure.

use std::f64::consts::FRAC_PI_4;

use ionpar::pulse::{self, DesignOptions};
use ionpar::{Axis, IonChain, TrapConfig};

fn main() -> ionpar::Result<()> {
    let chain = IonChain::new(TrapConfig::default())?;
    let modes = chain.modes(Axis::X);
    let s = pulse::design_amplitude_modulated(
        (3, 5),
        modes,
        200e-6,
        pulse::default_segments(modes),
        pulse::default_detuning(modes),
        FRAC_PI_4,
        &DesignOptions::default(),
    )?;
    for (k, seg) in s.segments.iter().enumerate() {
        println!("segment {k:2}: Omega_p/2pi = {:9.1} Hz, Omega_q/2pi = {:9.1} Hz", seg.amplitude_p / (2.0 * std::f64::consts::PI), seg.amplitude_q / (2.0 * std::f64::consts::PI));
    }
    println!("max |alpha| = {:.2e}", pulse::max_residual(&s, modes)?);
    println!("chi = {:.12} (target {FRAC_PI_4:.12})", pulse::chi_angle(&s, modes)?);
    Ok(())
}
