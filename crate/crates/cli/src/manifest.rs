//! Run manifest: scenario loading with `--set` overrides, seed splitting and
//! the provenance hash stamped on every output.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use movnet::scenario::{NetworkConfiguration, Scenario, ScenarioError, ScenarioFile};
use movnet::simulator::{InterferenceMode, SimSettings};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Errors that map to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Evaluate,
    Simulate,
    Optimize,
    Sweep,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: Command,
    pub scenario_path: PathBuf,
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub seed: u64,
    pub overrides: Vec<(String, String)>,
    pub grid: Vec<(String, Vec<String>)>,
    pub replications: Option<usize>,
    pub mode: Option<InterferenceMode>,
    pub config_path: Option<PathBuf>,
}

/// Identifies the inputs of a run: the manifest (minus the output
/// directory) and the bytes of every file it reads.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub manifest_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn csv_comment(&self) -> String {
        format!("# manifest_hash={} seed={}", self.manifest_hash, self.seed)
    }
}

impl RunManifest {
    pub fn provenance(&self, inputs: &[&str]) -> Provenance {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("manifest serializes"));
        for text in inputs {
            h.update(Sha256::digest(text.as_bytes()));
        }
        let digest = h.finalize();
        Provenance {
            manifest_hash: digest[..8].iter().map(|b| format!("{b:02x}")).collect(),
            seed: self.seed,
        }
    }
}

/// SplitMix64 finalizer applied to `seed + stream * golden`; distinct streams
/// give decorrelated sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const SIM_STREAM: u64 = 0;
pub const OPT_STREAM: u64 = 1;
pub const SWEEP_STREAM_BASE: u64 = 1000;

/// A scenario document after overrides, split into its parts.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub configuration: Option<NetworkConfiguration>,
    pub simulation: SimSettings,
}

pub fn read_scenario_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(ScenarioError::NotFound(path.display().to_string()).into());
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// The document with every defaulted field written out, used to decide
/// which override keys exist.
fn expanded(raw: &Value) -> Result<Value> {
    let file: ScenarioFile =
        serde_json::from_value(raw.clone()).map_err(ScenarioError::Parse)?;
    let mut full = serde_json::to_value(&file)?;
    let sim: SimSettings = match raw.get("simulation") {
        Some(v) => serde_json::from_value(v.clone()).context("parsing simulation block")?,
        None => SimSettings::default(),
    };
    full["simulation"] = serde_json::to_value(sim)?;
    if let Some(c) = raw.get("configuration") {
        full["configuration"] = c.clone();
    }
    Ok(full)
}

fn step<'a>(v: &'a Value, seg: &str) -> Option<&'a Value> {
    match v {
        Value::Object(m) => m.get(seg),
        Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    }
}

fn parse_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

/// Sets `path` (dot-separated, array indices as numbers) in `raw`. The key
/// must exist in the expanded document `full`.
pub fn apply_override(raw: &mut Value, full: &Value, path: &str, value: &str) -> Result<()> {
    let segs: Vec<&str> = path.split('.').collect();
    let mut probe = full;
    for s in &segs {
        probe = step(probe, s).ok_or_else(|| usage(format!("unknown scenario key `{path}`")))?;
    }
    let mut cur = raw;
    let mut model = full;
    for (i, s) in segs.iter().enumerate() {
        model = step(model, s).expect("checked above");
        let last = i + 1 == segs.len();
        cur = match cur {
            Value::Object(m) => {
                let entry = m.entry(s.to_string()).or_insert_with(|| match model {
                    Value::Object(_) => Value::Object(Default::default()),
                    other => other.clone(),
                });
                entry
            }
            Value::Array(a) => {
                let i: usize = s.parse().expect("checked above");
                a.get_mut(i)
                    .ok_or_else(|| usage(format!("index out of range in `{path}`")))?
            }
            _ => return Err(usage(format!("`{path}` does not name a field"))),
        };
        if last {
            *cur = parse_value(value);
        }
    }
    Ok(())
}

pub fn parse_assignment(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| usage(format!("expected key=value, got `{text}`")))?;
    if k.trim().is_empty() {
        return Err(usage(format!("empty key in `{text}`")));
    }
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Applies overrides to the raw document and splits it into typed parts.
/// Keys joined by `+` receive the same value.
pub fn load_document(text: &str, overrides: &[(String, String)]) -> Result<Loaded> {
    let mut raw: Value = serde_json::from_str(text).map_err(ScenarioError::Parse)?;
    let full = expanded(&raw)?;
    for (k, v) in overrides {
        for key in k.split('+') {
            apply_override(&mut raw, &full, key.trim(), v)?;
        }
    }
    let file: ScenarioFile = serde_json::from_value(raw.clone()).map_err(ScenarioError::Parse)?;
    let scenario = file.into_scenario()?;
    let simulation: SimSettings = match raw.get("simulation") {
        Some(v) => serde_json::from_value(v.clone()).context("parsing simulation block")?,
        None => SimSettings::default(),
    };
    let configuration = match raw.get("configuration") {
        Some(v) => {
            let c: NetworkConfiguration =
                serde_json::from_value(v.clone()).context("parsing configuration block")?;
            Some(c)
        }
        None => None,
    };
    Ok(Loaded {
        scenario,
        configuration,
        simulation,
    })
}

impl Loaded {
    /// Applies the manifest seed and simulator flags.
    pub fn seeded(mut self, seed: u64, m: &RunManifest) -> Self {
        self.scenario.optimizer.metaheuristic.rng_seed = derive_seed(seed, OPT_STREAM);
        self.simulation.rng_seed = derive_seed(seed, SIM_STREAM);
        if let Some(r) = m.replications {
            self.simulation.replications = r;
        }
        if let Some(mode) = m.mode {
            self.simulation.interference = mode;
        }
        self
    }
}

/// Reads an explicit configuration file, accepting either a bare
/// configuration or the `config.json` written by `optimize`.
pub fn read_configuration(path: &Path) -> Result<(NetworkConfiguration, String)> {
    if !path.exists() {
        return Err(usage(format!("configuration not found: {}", path.display())));
    }
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).context("parsing configuration")?;
    let body = v.get("configuration").cloned().unwrap_or(v);
    Ok((serde_json::from_value(body).context("parsing configuration")?, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
        "schema_version": 1, "num_slots": 1,
        "radio": {"bandwidth_hz": 1e7, "reuse_factor_k": 3, "path_loss_alpha": 3.0,
                  "power_static_w": 3.0, "power_mobile_w": 3.0,
                  "target_delay_tau0_s": 1e-5, "violation_target_delta": 0.05},
        "regions": [{"area_m2": 1e4, "user_density_per_slot": [0.01]}]
    }"#;

    #[test]
    fn overrides_reach_defaulted_and_indexed_keys() {
        let l = load_document(
            DOC,
            &[
                ("optimizer.metaheuristic.max_iters".into(), "7".into()),
                ("regions.0.area_m2".into(), "2e4".into()),
                ("simulation.replications".into(), "3".into()),
            ],
        )
        .unwrap();
        assert_eq!(l.scenario.optimizer.metaheuristic.max_iters, 7);
        assert_eq!(l.scenario.regions[0].area_m2, 2e4);
        assert_eq!(l.simulation.replications, 3);
    }

    #[test]
    fn unknown_key_is_usage_error() {
        let e = load_document(DOC, &[("radio.nope".into(), "1".into())]).unwrap_err();
        assert!(e.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn seeds_split() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(9, 4), derive_seed(9, 4));
    }
}
