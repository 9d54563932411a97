//! Configuration files, output files and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{Axis, TrapConfig, TrapConfigFile};
use crate::circuit::{NoiseModel, Timing};
use crate::dynamics::{Representation, DEFAULT_CUTOFF, DEFAULT_LEAKAGE_BOUND};
use crate::error::{Error, Result};
use crate::experiments::{GhzConfig, TfimConfig};
use crate::scheduler::{DependencyMode, Policy};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Output encoding for tabular results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    /// 1-based qubit labels.
    pub pair: (usize, usize),
    pub axis: Axis,
    pub angle: f64,
    pub duration_s: f64,
    /// Defaults to 2N + 1 for the retained modes.
    pub segments: Option<usize>,
    /// μ − max ω_k over 2π.
    pub detuning_offset_hz: f64,
    /// Peak Rabi frequency over 2π; `None` disables the check.
    pub omega_max_hz: Option<f64>,
    /// Retained mode indices (descending frequency order); all when absent.
    pub modes: Option<Vec<usize>>,
}

impl Default for DesignSection {
    fn default() -> Self {
        DesignSection {
            pair: (3, 5),
            axis: Axis::X,
            angle: std::f64::consts::FRAC_PI_4,
            duration_s: 200e-6,
            segments: None,
            detuning_offset_hz: crate::units::angular_to_hz(crate::pulse::DEFAULT_DETUNING_OFFSET),
            omega_max_hz: Some(2.0e6),
            modes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub cutoff: usize,
    pub dt_max_s: f64,
    pub leakage_bound: f64,
    pub representation: Representation,
    /// Largest accepted cross-coupling distance D.
    pub max_distance: f64,
    /// Largest accepted 1 − F against the ideal parallel MS unitary.
    pub max_infidelity: f64,
    pub modes_x: Option<Vec<usize>>,
    pub modes_y: Option<Vec<usize>>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            cutoff: DEFAULT_CUTOFF,
            dt_max_s: 50e-6,
            leakage_bound: DEFAULT_LEAKAGE_BOUND,
            representation: Representation::Auto,
            max_distance: 1e-8,
            max_infidelity: 1e-6,
            modes_x: None,
            modes_y: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub mode: DependencyMode,
    pub policy: Policy,
    pub forbid_shared_ion: bool,
    /// Per-ion summed drive limit over 2π for the power report.
    pub power_limit_hz: f64,
    /// Design a pulse per gate and report summed drive per layer.
    pub power_report: bool,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            mode: DependencyMode::CommutingXx,
            policy: Policy::Greedy,
            forbid_shared_ion: false,
            power_limit_hz: 1.0e6,
            power_report: false,
        }
    }
}

/// GHZ settings with 1-based qubit labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GhzSection {
    pub register: usize,
    /// (a, b, c): MS(a, b) on X and MS(b, c) on Y.
    pub qubits: [usize; 3],
    pub swap_buses: bool,
    pub scan_points: usize,
    /// Single-MS fidelity the depolarizing strength is calibrated to when the
    /// configured noise has none.
    pub target_gate_fidelity: f64,
}

impl Default for GhzSection {
    fn default() -> Self {
        let base = GhzConfig::default();
        GhzSection {
            register: base.register,
            qubits: base.qubits.map(|q| q + 1),
            swap_buses: base.swap_buses,
            scan_points: base.scan_points,
            target_gate_fidelity: 0.99,
        }
    }
}

impl GhzSection {
    pub fn to_config(&self) -> Result<GhzConfig> {
        let mut qubits = [0; 3];
        for (slot, &label) in qubits.iter_mut().zip(&self.qubits) {
            *slot = label
                .checked_sub(1)
                .filter(|&q| q < self.register)
                .ok_or(Error::QubitOutOfRange { index: label, count: self.register })?;
        }
        let cfg = GhzConfig { register: self.register, qubits, swap_buses: self.swap_buses, scan_points: self.scan_points };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub t2_s: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection { t2_s: 0.5 }
    }
}

/// Everything a command reads besides its positional inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub trap: TrapConfigFile,
    /// Ion index of each qubit label (label k uses entry k − 1). Defaults to
    /// the chain without its two end ions when it has at least three ions.
    pub qubit_ions: Option<Vec<usize>>,
    /// Shots for sampled outputs; 0 means exact probabilities.
    pub shots: u64,
    pub timing: Timing,
    pub noise: NoiseModel,
    pub design: DesignSection,
    pub verify: VerifySection,
    pub schedule: ScheduleSection,
    pub ghz: GhzSection,
    pub tfim: TfimConfig,
    pub compare: CompareSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            trap: TrapConfigFile::from(&TrapConfig::default()),
            qubit_ions: None,
            shots: 0,
            timing: Timing::default(),
            noise: NoiseModel::default(),
            design: DesignSection::default(),
            verify: VerifySection::default(),
            schedule: ScheduleSection::default(),
            ghz: GhzSection::default(),
            tfim: TfimConfig::default(),
            compare: CompareSection::default(),
        }
    }
}

impl RunConfig {
    pub fn trap_config(&self) -> Result<TrapConfig> {
        TrapConfig::try_from(self.trap.clone())
    }

    pub fn qubit_ions(&self) -> Vec<usize> {
        self.qubit_ions.clone().unwrap_or_else(|| {
            let n = self.trap.ion_count;
            if n >= 3 {
                (1..n - 1).collect()
            } else {
                (0..n).collect()
            }
        })
    }

    /// Ion index of a 1-based qubit label.
    pub fn ion_of_label(&self, label: usize) -> Result<usize> {
        let map = self.qubit_ions();
        let ion = label
            .checked_sub(1)
            .and_then(|k| map.get(k).copied())
            .ok_or(Error::QubitOutOfRange { index: label, count: map.len() })?;
        if ion >= self.trap.ion_count {
            return Err(Error::InvalidConfig(format!("qubit {label} maps to ion {ion} of a {}-ion chain", self.trap.ion_count)));
        }
        Ok(ion)
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

/// Loads a TOML or JSON [`RunConfig`]. A run manifest is accepted too, in
/// which case its config snapshot is used.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = read_text(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        let body = match value.get("config") {
            Some(c) if value.get("tool").is_some() => c.clone(),
            _ => value,
        };
        serde_json::from_value(body).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record written next to every command's outputs. It holds
/// no timestamps, so identical runs give identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Command arguments after the subcommand name, global flags removed.
    pub args: Vec<String>,
    pub seed: u64,
    pub format: Format,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Output directory that records a digest of every file written.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<FileDigest>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutputDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.written.retain(|d| d.path != name);
        self.written.push(FileDigest { path: name.to_string(), sha256: sha256_hex(contents.as_bytes()) });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, &to_json_string(value)?)
    }

    /// Writes the manifest with the recorded outputs, sorted by name.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<PathBuf> {
        self.written.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.outputs = self.written.clone();
        let path = self.root.join(MANIFEST_FILE);
        let text = to_json_string(&manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Digest of an input file as named on the command line.
pub fn input_digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml_and_json() {
        let cfg = RunConfig::default();
        let toml_text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&toml_text).unwrap(), cfg);
        let json = to_json_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 4\n[trap]\nion_count = 2\naxial_freq_hz = 4e5\nradial_freq_x_hz = 3e6\nradial_freq_y_hz = 2.9e6\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.trap.ion_count, 2);
        assert_eq!(cfg.qubit_ions(), vec![0, 1]);
        assert_eq!(cfg.verify, VerifySection::default());
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }

    #[test]
    fn qubit_labels_map_to_inner_ions() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.ion_of_label(1).unwrap(), 1);
        assert_eq!(cfg.ion_of_label(5).unwrap(), 5);
        assert!(cfg.ion_of_label(6).is_err());
        assert!(cfg.ion_of_label(0).is_err());
    }

    #[test]
    fn manifest_is_accepted_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("b.csv", "x\n").unwrap();
        out.write("a.csv", "y\n").unwrap();
        let cfg = RunConfig { seed: 11, ..Default::default() };
        let manifest = RunManifest {
            tool: "ionpar".into(),
            version: "0".into(),
            command: "tfim".into(),
            args: vec![],
            seed: 11,
            format: Format::Csv,
            config: cfg.clone(),
            inputs: vec![],
            outputs: vec![],
        };
        let path = out.finish(manifest).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
        let m: RunManifest = read_json(&path).unwrap();
        assert_eq!(m.outputs.iter().map(|d| d.path.as_str()).collect::<Vec<_>>(), ["a.csv", "b.csv"]);
        assert_eq!(m.outputs[0].sha256, sha256_hex(b"y\n"));
    }
}
