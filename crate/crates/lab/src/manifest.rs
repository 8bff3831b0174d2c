//! Run bookkeeping: output naming, `manifest.json`, and reruns.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{ConfigFile, ScenarioKind, SCHEMA_VERSION};
use crate::error::{LabError, LabResult};
use crate::output::json;
use crate::scenarios::{resolve_only, run_scenario};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub run_id: String,
    pub rng: String,
    /// Fully resolved configuration; feeding it back reproduces the run.
    pub config: ConfigFile,
    pub outputs: Vec<OutputFile>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First 16 hex digits of the SHA-256 of the scenario, resolved parameters
/// and seed. Object keys serialize sorted, so the id is stable.
pub fn run_id(kind: ScenarioKind, resolved: &Value, seed: u64) -> String {
    let key = json!({
        "scenario": kind,
        "version": SCHEMA_VERSION,
        "params": resolved,
        "seed": seed,
    });
    sha256_hex(&serde_json::to_vec(&key).expect("json value serializes"))[..16].to_string()
}

/// Runs a scenario and writes its outputs plus `manifest.json` into `out`.
pub fn execute(kind: ScenarioKind, cfg: &ConfigFile, seed: u64, out: &Path) -> LabResult<Manifest> {
    // Validate before creating anything on disk.
    resolve_only(kind, &cfg.params)?;
    let run = run_scenario(kind, &cfg.params, seed)?;
    let id = run_id(kind, &run.resolved, seed);
    fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    for a in &run.artifacts {
        let file = a.file_name(kind.name(), &id);
        fs::write(out.join(&file), &a.contents)?;
        outputs.push(OutputFile {
            file,
            sha256: sha256_hex(a.contents.as_bytes()),
        });
    }
    let manifest = Manifest {
        tool: "issl-lab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: kind,
        seed,
        run_id: id,
        rng: issl_core::rng::ALGORITHM.into(),
        config: ConfigFile::new(run.resolved),
        outputs,
    };
    fs::write(out.join(MANIFEST_FILE), json(&manifest))?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> LabResult<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| LabError::validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| LabError::validation(format!("manifest {}: {e}", path.display())))
}

/// Re-executes a recorded run into `out` (default: the manifest's directory)
/// and checks every output against its recorded hash.
pub fn rerun(manifest_path: &Path, out: Option<&Path>) -> LabResult<Manifest> {
    let recorded = load_manifest(manifest_path)?;
    let dir: PathBuf = match out {
        Some(d) => d.to_path_buf(),
        None => manifest_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let fresh = execute(recorded.scenario, &recorded.config, recorded.seed, &dir)?;
    if fresh.run_id != recorded.run_id {
        return Err(LabError::Mismatch(format!("run id {} != recorded {}", fresh.run_id, recorded.run_id)));
    }
    if fresh.outputs != recorded.outputs {
        let differing: Vec<&str> = recorded
            .outputs
            .iter()
            .filter(|o| !fresh.outputs.contains(o))
            .map(|o| o.file.as_str())
            .collect();
        return Err(LabError::Mismatch(format!("outputs differ: {}", differing.join(", "))));
    }
    Ok(fresh)
}
