//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the terminal.

mod common;

use std::f64::consts::{FRAC_PI_4, PI};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ionpar::chain::{self, IonChain};
use ionpar::circuit::{Circuit, Gate, NoiseModel, Shots};
use ionpar::dynamics::{self, CrossCheckOptions, Representation};
use ionpar::experiments::{self, GhzConfig, TfimConfig, TrotterMode};
use ionpar::pulse::{self, DesignOptions, PulseSchedule};
use ionpar::scheduler::{schedule, DependencyMode, GateList, Policy, ScheduleOptions, XxGate};
use ionpar::{Axis, ModeSet, TrapConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Ion of a 1-based register label on the default chain (end ions unused).
fn ion(label: usize) -> usize {
    label
}

fn design(modes: &ModeSet, labels: (usize, usize), offset_hz: f64) -> PulseSchedule {
    let det = modes.max_frequency() + 2.0 * PI * offset_hz;
    let segs = pulse::default_segments(modes);
    pulse::design_amplitude_modulated((ion(labels.0), ion(labels.1)), modes, 200e-6, segs, det, FRAC_PI_4, &DesignOptions::default())
        .expect("design succeeds")
}

fn chain_oracles() -> Outcome {
    let start = Instant::now();
    let cfg = TrapConfig::default().with_ion_count(2);
    let c = IonChain::new(cfg.clone()).unwrap();
    let mut z = c.z.frequencies.clone();
    z.sort_by(f64::total_cmp);
    let ratio_err = (z[1] / z[0] - 3f64.sqrt()).abs();
    let wz = cfg.axial_freq;
    let mut rocking_err: f64 = 0.0;
    for (axis, w) in [(Axis::X, cfg.radial_freq_x), (Axis::Y, cfg.radial_freq_y)] {
        let expected = (w * w - wz * wz).sqrt();
        let got = c.modes(axis).frequencies.iter().fold(f64::INFINITY, |m, f| m.min((f - expected).abs() / expected));
        rocking_err = rocking_err.max(got);
    }
    let solved: Vec<_> = (1..=10).map(|n| chain::solve_equilibrium(&TrapConfig::default().with_ion_count(n)).unwrap()).collect();
    // library time only; the gradient-descent oracle is slow by design
    let t = start.elapsed().as_secs_f64();
    let mut eq_err: f64 = 0.0;
    for (n, lib) in (1..=10).zip(&solved) {
        let oracle = common::equilibrium_gradient_descent(n);
        eq_err = lib.positions.iter().zip(&oracle).fold(eq_err, |m, (a, b)| m.max((a - b).abs()));
    }
    check(
        ratio_err < 1e-10 && rocking_err < 1e-10 && eq_err < 1e-9 && t < 1.0,
        format!("axial ratio err {ratio_err:.1e}, rocking rel err {rocking_err:.1e}, equilibrium err {eq_err:.1e} (N<=10), {t:.2} s"),
    )
}

fn pulse_closure() -> Outcome {
    let start = Instant::now();
    let c = IonChain::new(TrapConfig::default()).unwrap();
    let (mut worst_alpha, mut worst_chi, mut worst_lib_alpha): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut designs = Vec::new();
    for pair in [(3, 5), (2, 4), (1, 2), (3, 4)] {
        for axis in [Axis::X, Axis::Y] {
            let modes = c.modes(axis);
            let p = design(modes, pair, pulse::DEFAULT_DETUNING_OFFSET / (2.0 * PI));
            worst_lib_alpha = worst_lib_alpha.max(pulse::max_residual(&p, modes).unwrap());
            designs.push((p, axis));
        }
    }
    let t_design = start.elapsed().as_secs_f64();
    for (p, axis) in &designs {
        let modes = c.modes(*axis);
        for ion in [p.pair.0, p.pair.1] {
            for k in 0..modes.mode_count() {
                worst_alpha = worst_alpha.max(common::alpha_quadrature(p, modes, ion, k).norm());
            }
        }
        worst_chi = worst_chi.max((common::chi_quadrature(p, modes) - FRAC_PI_4).abs());
    }
    let t = start.elapsed().as_secs_f64();
    check(
        worst_alpha < 1e-10 && worst_lib_alpha < 1e-10 && worst_chi < 1e-8 && t < 10.0,
        format!(
            "8 designs: max|alpha| {worst_lib_alpha:.1e} (closed form) {worst_alpha:.1e} (quadrature), |chi-pi/4| {worst_chi:.1e}; design {t_design:.2} s, with oracles {t:.2} s"
        ),
    )
}

fn cross_coupling() -> Outcome {
    let start = Instant::now();
    let c = IonChain::new(TrapConfig::default()).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    let offset = 40e3;
    for (keep, label) in [(Some(vec![0usize, 1]), "2 modes/axis"), (None, "7 modes/axis")] {
        let mx = keep.as_ref().map_or(c.x.clone(), |k| c.x.restrict(k).unwrap());
        let my = keep.as_ref().map_or(c.y.clone(), |k| c.y.restrict(k).unwrap());
        for (px, py) in [((3, 5), (2, 4)), ((3, 5), (2, 5))] {
            let sx = design(&mx, px, offset);
            let sy = design(&my, py, offset);
            let opts = CrossCheckOptions { cutoff: 12, representation: Representation::Auto, ..Default::default() };
            match dynamics::cross_coupling_residual(&sx, &sy, &mx, &my, &opts) {
                Ok(r) => {
                    let infid = 1.0 - r.min_fidelity;
                    let angles_ok = r.angles.iter().all(|a| (a.chi - FRAC_PI_4).abs() < 1e-8);
                    ok &= r.distance < 1e-8 && infid <= 1e-6 && angles_ok;
                    parts.push(format!(
                        "{label} {px:?}/{py:?}: D {:.1e}, 1-F {:.1e} ({:?})",
                        r.distance,
                        infid,
                        r.representation
                    ));
                }
                Err(e) => {
                    ok = false;
                    parts.push(format!("{label} {px:?}/{py:?}: {e}"));
                }
            }
        }
    }
    let t = start.elapsed().as_secs_f64();
    check(ok, format!("cutoff 12, mu = max w + 40 kHz; {}; {t:.1} s", parts.join("; ")))
}

fn cross_pair_null() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut gate_f: f64 = 1.0;
    for (a, b) in [((3, 5), (2, 4)), ((1, 2), (3, 4))] {
        let zero = |p: (usize, usize)| (p.0 - 1, p.1 - 1);
        let r = experiments::parallel_layer_experiment(5, zero(a), zero(b), &NoiseModel::noiseless(), Shots::Exact, 0).unwrap();
        worst = r.cross.iter().fold(worst, |m, x| m.max(x.report.parity_contrast));
        gate_f = r.gates.iter().fold(gate_f, |m, x| m.min(x.report.fidelity));
    }
    check(worst < 1e-6, format!("max cross-pair contrast {worst:.1e} over 8 cross pairs; gated pairs F >= {gate_f:.12}"))
}

fn ghz() -> Outcome {
    let cfg = GhzConfig::default();
    let clean = experiments::ghz_experiment(&cfg, &NoiseModel::noiseless(), Shots::Exact, 0).unwrap();
    let clean_ok = (clean.report.fidelity - 1.0).abs() < 1e-10 && clean.report.frequency == 3;
    let p = experiments::calibrate_depolarizing(0.99).unwrap();
    let noise = NoiseModel::depolarizing(p);
    let exact = experiments::ghz_experiment(&cfg, &noise, Shots::Exact, 0).unwrap();
    let exact_gap = (exact.report.fidelity - exact.injected_fidelity).abs();
    let sampled = experiments::ghz_experiment(&cfg, &noise, Shots::Count(1000), 0).unwrap();
    let gap = (sampled.report.fidelity - sampled.injected_fidelity).abs();
    let within = gap <= sampled.report.fidelity_stderr;
    check(
        clean_ok && exact_gap < 1e-10 && within,
        format!(
            "noiseless F {:.12}, period 2pi/{}; p = {p:.5} gives single-MS F 0.99; injected {:.6}, exact estimate gap {exact_gap:.1e}, 1000 shots F {:.6} +- {:.6}",
            clean.report.fidelity, clean.report.frequency, sampled.injected_fidelity, sampled.report.fidelity, sampled.report.fidelity_stderr
        ),
    )
}

fn tfim() -> Outcome {
    let start = Instant::now();
    let cfg = TfimConfig::default();
    let clean = NoiseModel::noiseless();
    let par = experiments::tfim_trotter(&cfg, TrotterMode::Parallel, &clean, Shots::Exact, 0).unwrap();
    let seq = experiments::tfim_trotter(&cfg, TrotterMode::Sequential, &clean, Shots::Exact, 0).unwrap();
    let equiv = par.max_deviation(&seq);
    let errors: Vec<f64> = [1, 2, 4, 8]
        .iter()
        .map(|&k| {
            let c = cfg.refined(k);
            let t = experiments::tfim_trotter(&c, TrotterMode::Parallel, &clean, Shots::Exact, 0).unwrap();
            let e = experiments::exact_reference(&c).unwrap();
            t.max_deviation(&e)
        })
        .collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    // "halves within 20%": each halving divides the error by at least 2·0.8
    let converges = ratios.iter().all(|&r| r >= 1.6);
    let report = experiments::runtime_error_comparison(&cfg, &NoiseModel::dephasing(0.5)).unwrap();
    let high = report.high_magnetization_ratios();
    let small = report.max_error < 0.5;
    let in_band = !high.is_empty() && high.iter().all(|r| (1.6..=2.1).contains(r));
    let (lo, hi) = high.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &r| (l.min(r), h.max(r)));
    let t = start.elapsed().as_secs_f64();
    check(
        equiv < 1e-12 && converges && small && in_band && t < 60.0,
        format!(
            "parallel vs sequential {equiv:.1e}; max|m-m_exact| {} (ratios {}); T2 0.5 s: max error {:.3}, seq/par {lo:.3}..{hi:.3} at {} high-|m| points; {t:.2} s",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", "),
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", "),
            report.max_error,
            high.len()
        ),
    )
}

fn scheduler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(2..=6);
        let len = rng.gen_range(1..=12);
        let gates: Vec<XxGate> = (0..len)
            .map(|_| {
                let p = rng.gen_range(0..n);
                let q = (p + rng.gen_range(1..n)) % n;
                XxGate { pair: (p, q), angle: rng.gen_range(-PI..PI) }
            })
            .collect();
        let mut sequential = Circuit::new(n);
        for g in &gates {
            sequential.push(vec![Gate::ms(g.pair.0, g.pair.1, g.angle, Axis::X)]);
        }
        let list = GateList::new(n, gates, DependencyMode::CommutingXx).unwrap();
        let policy = if len <= 8 { Policy::Exhaustive } else { Policy::Greedy };
        let s = schedule(&list, policy, &ScheduleOptions::default()).unwrap();
        let d = common::max_entry_diff(&s.to_circuit(Default::default()).unitary().unwrap(), &sequential.unitary().unwrap());
        worst = worst.max(d);
    }
    let bonds: Vec<XxGate> = (0..4).map(|i| XxGate { pair: (i, i + 1), angle: 0.1 * PI }).collect();
    let list = GateList::new(5, bonds, DependencyMode::CommutingXx).unwrap();
    let opts = ScheduleOptions { forbid_shared_ion: true };
    let g = schedule(&list, Policy::Greedy, &opts).unwrap().depth;
    let e = schedule(&list, Policy::Exhaustive, &opts).unwrap().depth;
    check(
        worst < 1e-12 && g == e && g == 2,
        format!("100 random commuting-XX lists: max distance {worst:.1e}; TFIM step depth greedy {g}, exhaustive {e}"),
    )
}

fn run_cli(dir: &Path, out: &str, threads: Option<&str>, args: &[&str]) -> bool {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ionpar"));
    cmd.current_dir(dir).arg("--out").arg(out).args(args);
    if let Some(t) = threads {
        cmd.env("IONPAR_THREADS", t);
    }
    cmd.output().map(|o| o.status.success()).unwrap_or(false)
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("c.circ"), "QUBITS 4\nMS 1 2 0.4 X\nMS 3 4 0.4 X\nMS 2 3 0.2 X\nH 1\nRX 4 0.3\n").unwrap();
    let pre = run_cli(dir, "px", None, &["design", "--pair", "3", "5", "--axis", "x", "--offset-hz", "40000"])
        && run_cli(dir, "py", None, &["design", "--pair", "2", "4", "--axis", "y", "--offset-hz", "40000"]);
    let commands: Vec<Vec<&str>> = vec![
        vec!["modes"],
        vec!["--format", "csv", "modes"],
        vec!["design", "--pair", "1", "2", "--axis", "y"],
        vec!["verify", "px/pulse_x_3_5.json", "py/pulse_y_2_4.json"],
        vec!["schedule", "c.circ", "--power"],
        vec!["--seed", "5", "run", "c.circ", "--shots", "400"],
        vec!["--seed", "3", "ghz", "--shots", "500"],
        vec!["--format", "csv", "--seed", "11", "tfim", "--shots", "200", "--mode", "sequential"],
        vec!["compare"],
    ];
    let mut failures = Vec::new();
    for (k, args) in commands.iter().enumerate() {
        let (a, b, c) = (format!("a{k}"), format!("b{k}"), format!("c{k}"));
        // second run with a different worker count, third replayed from the manifest
        let ran = pre
            && run_cli(dir, &a, None, args)
            && run_cli(dir, &b, Some("1"), args)
            && (!replayable(args) || run_cli(dir, &c, None, &replay_args(&format!("{a}/manifest.json"), args)));
        let (ta, tb, tc) = (tree(&dir.join(&a)), tree(&dir.join(&b)), tree(&dir.join(&c)));
        let strip = |t: &[(String, Vec<u8>)]| t.iter().filter(|f| f.0 != "manifest.json").cloned().collect::<Vec<_>>();
        let replay_ok = !replayable(args) || strip(&ta) == strip(&tc);
        if !(ran && !ta.is_empty() && ta == tb && replay_ok) {
            failures.push(args.join(" "));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} commands: reruns byte-identical (incl. manifest, 1 vs default threads); manifest replays identical", commands.len())
        } else {
            format!("differing outputs: {}", failures.join("; "))
        },
    )
}

/// Commands whose outputs depend on positional inputs or per-run flags that
/// the config snapshot does not hold are only compared between reruns.
fn replayable(args: &[&str]) -> bool {
    !matches!(args_command(args), "verify" | "schedule" | "run")
}

/// `--config <manifest>` plus the output format, the command and the
/// TFIM evolution mode, which select what runs rather than how.
fn replay_args<'a>(manifest: &'a str, args: &[&'a str]) -> Vec<&'a str> {
    let mut out = vec!["--config", manifest];
    let flag = |name: &str| args.iter().position(|a| *a == name).map(|i| &args[i..i + 2]);
    if let Some(f) = flag("--format") {
        out.extend_from_slice(f);
    }
    out.push(args_command(args));
    if let Some(m) = flag("--mode") {
        out.extend_from_slice(m);
    }
    out
}

fn args_command<'a>(args: &[&'a str]) -> &'a str {
    const NAMES: [&str; 8] = ["modes", "design", "verify", "schedule", "run", "ghz", "tfim", "compare"];
    args.iter().copied().find(|a| NAMES.contains(a)).unwrap_or("modes")
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("chain oracles", chain_oracles),
        ("pulse closure", pulse_closure),
        ("cross-coupling cancellation", cross_coupling),
        ("cross-pair null entanglement", cross_pair_null),
        ("GHZ fidelity", ghz),
        ("TFIM", tfim),
        ("scheduler", scheduler),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        println!("{} {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, k + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
