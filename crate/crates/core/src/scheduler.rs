//! Packs two-qubit XX gates into layers of at most one gate per bus (X and Y
//! mode sets).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chain::Axis;
use crate::circuit::{Circuit, Gate, Moment, Timing};
use crate::error::{Error, Result};
use crate::pulse::{summed_drive, GateSpec, PulseSchedule};

/// Largest gate list accepted by [`Policy::Exhaustive`].
pub const EXHAUSTIVE_LIMIT: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DependencyMode {
    /// Gates keep their order; only neighbours may share a layer.
    StrictOrder,
    /// All gates commute and may be reordered freely.
    CommutingXx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Greedy,
    Exhaustive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XxGate {
    pub pair: (usize, usize),
    pub angle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateList {
    pub qubit_count: usize,
    pub gates: Vec<XxGate>,
    pub mode: DependencyMode,
}

impl GateList {
    pub fn new(qubit_count: usize, gates: Vec<XxGate>, mode: DependencyMode) -> Result<Self> {
        for g in &gates {
            for q in [g.pair.0, g.pair.1] {
                if q >= qubit_count {
                    return Err(Error::QubitOutOfRange { index: q, count: qubit_count });
                }
            }
            if g.pair.0 == g.pair.1 {
                return Err(Error::InvalidCircuit(format!("XX gate on a single qubit {}", g.pair.0 + 1)));
            }
        }
        Ok(GateList { qubit_count, gates, mode })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOptions {
    /// Never place two gates sharing a qubit in one layer.
    pub forbid_shared_ion: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub x_gate: Option<GateSpec>,
    pub y_gate: Option<GateSpec>,
    /// Input positions of the gates, X first.
    pub sources: Vec<usize>,
}

impl Layer {
    pub fn gates(&self) -> impl Iterator<Item = &GateSpec> {
        self.x_gate.iter().chain(self.y_gate.iter())
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn shares_qubit(&self) -> bool {
        matches!((&self.x_gate, &self.y_gate), (Some(a), Some(b)) if a.shares_qubit_with(b))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub qubit_count: usize,
    pub mode: DependencyMode,
    pub policy: Policy,
    pub layers: Vec<Layer>,
    pub depth: usize,
}

fn compatible(a: &XxGate, b: &XxGate, opts: &ScheduleOptions) -> bool {
    let shared = [a.pair.0, a.pair.1].iter().filter(|q| **q == b.pair.0 || **q == b.pair.1).count();
    shared == 0 || (shared == 1 && !opts.forbid_shared_ion)
}

fn layer(list: &GateList, first: usize, second: Option<usize>) -> Layer {
    let spec = |k: usize, axis| GateSpec { pair: list.gates[k].pair, axis, angle: list.gates[k].angle };
    Layer {
        x_gate: Some(spec(first, Axis::X)),
        y_gate: second.map(|k| spec(k, Axis::Y)),
        sources: std::iter::once(first).chain(second).collect(),
    }
}

/// Groups of input positions, one per layer, in execution order.
fn greedy_groups(list: &GateList, opts: &ScheduleOptions) -> Vec<(usize, Option<usize>)> {
    let n = list.gates.len();
    let mut used = vec![false; n];
    let mut out = Vec::new();
    for i in 0..n {
        if used[i] {
            continue;
        }
        used[i] = true;
        let partner = match list.mode {
            DependencyMode::StrictOrder => (i + 1 < n && compatible(&list.gates[i], &list.gates[i + 1], opts)).then_some(i + 1),
            DependencyMode::CommutingXx => (i + 1..n).find(|&j| !used[j] && compatible(&list.gates[i], &list.gates[j], opts)),
        };
        if let Some(j) = partner {
            used[j] = true;
        }
        out.push((i, partner));
    }
    out
}

fn exhaustive_groups(list: &GateList, opts: &ScheduleOptions) -> Vec<(usize, Option<usize>)> {
    let n = list.gates.len();
    match list.mode {
        DependencyMode::StrictOrder => {
            // best[i]: fewest layers for gates i..n
            let mut best = vec![0usize; n + 2];
            let mut pair_here = vec![false; n + 1];
            for i in (0..n).rev() {
                best[i] = best[i + 1] + 1;
                if i + 1 < n && compatible(&list.gates[i], &list.gates[i + 1], opts) && best[i + 2] < best[i] {
                    best[i] = best[i + 2] + 1;
                    pair_here[i] = true;
                }
            }
            let mut out = Vec::new();
            let mut i = 0;
            while i < n {
                if pair_here[i] {
                    out.push((i, Some(i + 1)));
                    i += 2;
                } else {
                    out.push((i, None));
                    i += 1;
                }
            }
            out
        }
        DependencyMode::CommutingXx => {
            let full = (1u32 << n) - 1;
            let mut memo: HashMap<u32, (usize, Option<usize>)> = HashMap::new();
            fn solve(
                mask: u32,
                list: &GateList,
                opts: &ScheduleOptions,
                memo: &mut HashMap<u32, (usize, Option<usize>)>,
            ) -> usize {
                if mask == 0 {
                    return 0;
                }
                if let Some(&(d, _)) = memo.get(&mask) {
                    return d;
                }
                let i = mask.trailing_zeros() as usize;
                let rest = mask & !(1 << i);
                // pairings first so ties favour the earliest partner
                let mut best = (usize::MAX, None);
                let mut m = rest;
                while m != 0 {
                    let j = m.trailing_zeros() as usize;
                    m &= m - 1;
                    if compatible(&list.gates[i], &list.gates[j], opts) {
                        let d = 1 + solve(rest & !(1 << j), list, opts, memo);
                        if d < best.0 {
                            best = (d, Some(j));
                        }
                    }
                }
                let alone = 1 + solve(rest, list, opts, memo);
                if alone < best.0 {
                    best = (alone, None);
                }
                memo.insert(mask, best);
                best.0
            }
            solve(full, list, opts, &mut memo);
            let mut out = Vec::new();
            let mut mask = full;
            while mask != 0 {
                let i = mask.trailing_zeros() as usize;
                let partner = memo[&mask].1;
                mask &= !(1 << i);
                if let Some(j) = partner {
                    mask &= !(1 << j);
                }
                out.push((i, partner));
            }
            out
        }
    }
}

/// Packs `list` into layers. The earlier gate of each layer takes the X bus.
pub fn schedule(list: &GateList, policy: Policy, opts: &ScheduleOptions) -> Result<Schedule> {
    if policy == Policy::Exhaustive && list.gates.len() > EXHAUSTIVE_LIMIT {
        return Err(Error::SizeLimit(format!(
            "exhaustive scheduling of {} gates (limit {EXHAUSTIVE_LIMIT})",
            list.gates.len()
        )));
    }
    let groups = match policy {
        Policy::Greedy => greedy_groups(list, opts),
        Policy::Exhaustive => exhaustive_groups(list, opts),
    };
    let layers: Vec<Layer> = groups.into_iter().map(|(i, j)| layer(list, i, j)).collect();
    Ok(Schedule { qubit_count: list.qubit_count, mode: list.mode, policy, depth: layers.len(), layers })
}

impl Schedule {
    /// One moment per layer.
    pub fn to_circuit(&self, timing: Timing) -> Circuit {
        let mut c = Circuit::new(self.qubit_count).with_timing(timing);
        for l in &self.layers {
            c.push(l.gates().map(|g| Gate::ms(g.pair.0, g.pair.1, g.angle, g.axis)).collect());
        }
        c
    }

    /// Circuit text with a comment per layer naming the source gates.
    pub fn annotated_text(&self) -> String {
        let mut out = format!("QUBITS {}\n", self.qubit_count);
        for (k, l) in self.layers.iter().enumerate() {
            let src: Vec<String> = l.sources.iter().map(|s| (s + 1).to_string()).collect();
            let shared = if l.shares_qubit() { ", shared ion" } else { "" };
            out.push_str(&format!("# layer {}: input gates {}{shared}\n", k + 1, src.join(", ")));
            let gates: Vec<String> = l.gates().map(|g| Gate::ms(g.pair.0, g.pair.1, g.angle, g.axis).to_string()).collect();
            out.push_str(&gates.join(" | "));
            out.push('\n');
        }
        out
    }
}

/// Wall time of a gate list run one gate per moment versus as scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub gates: usize,
    pub layers: usize,
    pub t_sequential_s: f64,
    pub t_parallel_s: f64,
    pub ratio: f64,
}

/// `extra_per_layer` is the time of non-MS moments accompanying each layer
/// (zero when they are free RZ rotations).
pub fn depth_report(schedule: &Schedule, timing: &Timing, extra_per_layer: f64) -> DepthReport {
    let gates: usize = schedule.layers.iter().map(Layer::len).sum();
    let layers = schedule.layers.len();
    let t_sequential_s = gates as f64 * timing.ms_s + layers as f64 * extra_per_layer;
    let t_parallel_s = layers as f64 * (timing.ms_s + extra_per_layer);
    let ratio = if t_parallel_s > 0.0 { t_sequential_s / t_parallel_s } else { 1.0 };
    DepthReport { gates, layers, t_sequential_s, t_parallel_s, ratio }
}

/// Peak summed drive on the ions of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPower {
    pub layer: usize,
    /// (ion, peak summed |Ω| in rad/s).
    pub ions: Vec<(usize, f64)>,
    pub peak: f64,
    pub exceeds_limit: bool,
}

/// Per-layer power check. `pulses[k]` drives input gate `k` (ion indices).
pub fn power_report(schedule: &Schedule, pulses: &[PulseSchedule], limit: f64) -> Result<Vec<LayerPower>> {
    let gates: usize = schedule.layers.iter().map(Layer::len).sum();
    if pulses.len() != gates {
        return Err(Error::InvalidConfig(format!("{} pulses for {gates} scheduled gates", pulses.len())));
    }
    schedule
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let drives: Vec<PulseSchedule> = l.sources.iter().map(|&s| pulses[s].clone()).collect();
            let mut ions: Vec<usize> = drives.iter().flat_map(|p| [p.pair.0, p.pair.1]).collect();
            ions.sort_unstable();
            ions.dedup();
            let per_ion = ions
                .iter()
                .map(|&i| Ok((i, summed_drive(&drives, i)?.max)))
                .collect::<Result<Vec<_>>>()?;
            let peak = per_ion.iter().map(|p| p.1).fold(0.0, f64::max);
            if peak > limit {
                log::warn!("layer {}: summed drive {peak:.4e} rad/s exceeds limit {limit:.4e} rad/s", k + 1);
            }
            Ok(LayerPower { layer: k, ions: per_ion, peak, exceeds_limit: peak > limit })
        })
        .collect()
}

/// Reschedules every run of MS-only moments of `circuit`. Other moments are
/// kept in place and act as barriers.
pub fn schedule_circuit(circuit: &Circuit, mode: DependencyMode, policy: Policy, opts: &ScheduleOptions) -> Result<(Circuit, Vec<Schedule>)> {
    circuit.validate()?;
    let mut out = Circuit::new(circuit.qubit_count).with_timing(circuit.timing);
    let mut schedules = Vec::new();
    let mut run: Vec<XxGate> = Vec::new();
    let flush = |run: &mut Vec<XxGate>, out: &mut Circuit, schedules: &mut Vec<Schedule>| -> Result<()> {
        if run.is_empty() {
            return Ok(());
        }
        let list = GateList::new(circuit.qubit_count, std::mem::take(run), mode)?;
        let s = schedule(&list, policy, opts)?;
        out.append(&s.to_circuit(circuit.timing))?;
        schedules.push(s);
        Ok(())
    };
    for m in &circuit.moments {
        if !m.gates.is_empty() && m.duration_s.is_none() && m.gates.iter().all(Gate::is_ms) {
            run.extend(m.gates.iter().map(|g| match *g {
                Gate::Ms { pair, angle, .. } => XxGate { pair, angle },
                _ => unreachable!(),
            }));
        } else {
            flush(&mut run, &mut out, &mut schedules)?;
            out.push_moment(Moment::clone(m));
        }
    }
    flush(&mut run, &mut out, &mut schedules)?;
    Ok((out, schedules))
}
