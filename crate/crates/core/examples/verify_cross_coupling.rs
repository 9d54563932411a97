//! Runs MS(3,5) on X and MS(2,4) on Y at the same time and compares the joint
//! evolution with the product of the two gates.

use std::f64::consts::{FRAC_PI_4, PI};

use ionpar::dynamics::{self, CrossCheckOptions};
use ionpar::pulse::{self, DesignOptions};
use ionpar::{Axis, IonChain, ModeSet, PulseSchedule, TrapConfig};

fn design(modes: &ModeSet, pair: (usize, usize)) -> ionpar::Result<PulseSchedule> {
    // a wide detuning keeps the motional excitation inside a small Fock cutoff
    let mu = modes.max_frequency() + 2.0 * PI * 40e3;
    pulse::design_amplitude_modulated(pair, modes, 200e-6, pulse::default_segments(modes), mu, FRAC_PI_4, &DesignOptions::default())
}

fn main() -> ionpar::Result<()> {
    let chain = IonChain::new(TrapConfig::default())?;
    let (mx, my) = (chain.modes(Axis::X), chain.modes(Axis::Y));
    let (sx, sy) = (design(mx, (3, 5))?, design(my, (2, 4))?);
    let opts = CrossCheckOptions { cutoff: 12, ..Default::default() };
    let r = dynamics::cross_coupling_residual(&sx, &sy, mx, my, &opts)?;
    println!("ions {:?} via {:?}", r.ions, r.representation);
    println!("distance {:.2e}, 1 - F = {:.2e}", r.distance, 1.0 - r.min_fidelity);
    for a in &r.angles {
        println!("{:?} {:?}: chi = {:.10}", a.axis, a.pair, a.chi);
    }
    Ok(())
}
