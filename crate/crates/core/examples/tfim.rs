//! Trotterized transverse-field Ising chain against exact evolution.

use ionpar::circuit::{NoiseModel, Shots};
use ionpar::experiments::{exact_reference, tfim_trotter, TfimConfig, TrotterMode};

fn main() -> ionpar::Result<()> {
    let config = TfimConfig::default();
    println!("one step:\n{}", config.step_circuit(TrotterMode::Parallel)?.to_text());
    let trotter = tfim_trotter(&config, TrotterMode::Parallel, &NoiseModel::noiseless(), Shots::Exact, 0)?;
    let exact = exact_reference(&config)?;
    println!("{:>6} {:>10} {:>10}", "Jt", "trotter", "exact");
    for ((t, m), e) in trotter.times.iter().zip(&trotter.magnetization).zip(&exact.magnetization) {
        println!("{t:6.2} {m:10.5} {e:10.5}");
    }
    Ok(())
}
