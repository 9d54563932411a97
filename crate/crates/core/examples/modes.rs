//! Equilibrium positions and radial mode spectra of the default 7-ion chain.

use ionpar::units::angular_to_hz;
use ionpar::{Axis, IonChain, TrapConfig};

fn main() -> ionpar::Result<()> {
    let config = TrapConfig::default();
    let chain = IonChain::new(config.clone())?;
    let z: Vec<String> = chain.equilibrium.to_metres(&config).iter().map(|z| format!("{:.2}", z * 1e6)).collect();
    println!("positions (um): {}", z.join(" "));
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        let m = chain.modes(axis);
        let f: Vec<String> = m.frequencies.iter().map(|&w| format!("{:.1}", angular_to_hz(w) / 1e3)).collect();
        println!("{axis:?} modes (kHz): {}", f.join(" "));
    }
    let s = chain.separation();
    println!("X/Y gap {:.1} kHz (disjoint: {})", s.gap_hz / 1e3, s.disjoint);
    Ok(())
}
