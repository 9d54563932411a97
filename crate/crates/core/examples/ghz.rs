//! Three-qubit GHZ state built from two MS gates on different buses, with the
//! depolarizing rate set so a single gate has fidelity 0.99.

use ionpar::circuit::{NoiseModel, Shots};
use ionpar::experiments::{calibrate_depolarizing, ghz_experiment, GhzConfig};

fn main() -> ionpar::Result<()> {
    let config = GhzConfig::default();
    println!("{}", config.circuit()?.to_text());
    let p = calibrate_depolarizing(0.99)?;
    let r = ghz_experiment(&config, &NoiseModel::depolarizing(p), Shots::Count(1000), 0)?;
    println!("p = {p:.5}");
    println!("P_even = {:.4}, contrast = {:.4}, frequency {}", r.report.even_population, r.report.parity_contrast, r.report.frequency);
    println!("F = {:.4} +- {:.4} (state overlap {:.4})", r.report.fidelity, r.report.fidelity_stderr, r.injected_fidelity);
    Ok(())
}
