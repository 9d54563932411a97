//! Magnetization error under dephasing for sequential and parallel Trotter
//! circuits; the parallel circuit is shorter and decoheres less.

use ionpar::circuit::NoiseModel;
use ionpar::experiments::{runtime_error_comparison, TfimConfig};

fn main() -> ionpar::Result<()> {
    let r = runtime_error_comparison(&TfimConfig::default(), &NoiseModel::dephasing(0.5))?;
    println!("{:>6} {:>9} {:>9} {:>9} {:>6}", "Jt", "m", "err par", "err seq", "ratio");
    for p in &r.points {
        let ratio = p.ratio.map_or("-".to_string(), |x| format!("{x:.3}"));
        println!("{:6.2} {:9.4} {:9.5} {:9.5} {ratio:>6}{}", p.time, p.m_noiseless, p.error_parallel, p.error_sequential, if p.high_magnetization { " *" } else { "" });
    }
    println!("max error {:.4}; * marks |m| above half the chain", r.max_error);
    Ok(())
}
