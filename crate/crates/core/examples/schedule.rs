//! Packs a list of commuting XX gates onto the X and Y buses.

use ionpar::circuit::Timing;
use ionpar::scheduler::{depth_report, schedule, DependencyMode, GateList, Policy, ScheduleOptions, XxGate};

fn main() -> ionpar::Result<()> {
    let pairs = [(0, 1), (2, 3), (4, 5), (1, 2), (3, 4), (0, 5)];
    let gates = pairs.iter().map(|&pair| XxGate { pair, angle: 0.3 }).collect();
    let list = GateList::new(6, gates, DependencyMode::CommutingXx)?;
    let opts = ScheduleOptions { forbid_shared_ion: true };
    for policy in [Policy::Greedy, Policy::Exhaustive] {
        let s = schedule(&list, policy, &opts)?;
        let d = depth_report(&s, &Timing::default(), 0.0);
        println!("{policy:?}: {} layers, {:.0} us vs {:.0} us sequential", d.layers, d.t_parallel_s * 1e6, d.t_sequential_s * 1e6);
        print!("{}", s.annotated_text());
    }
    Ok(())
}
