//! Machine-readable run summary: which checks ran, their statistics and
//! verdicts, which files were written and their content hashes. The
//! manifest is a pure function of the run's inputs — no timestamps, no
//! absolute paths — so identical configurations produce identical bytes.

use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, EXIT_IO};

/// One executed check: a named statistic against its threshold.
#[derive(Clone, Debug, Serialize)]
pub struct CheckRecord {
    /// Stable identifier, e.g. `value-vs-oracle`.
    pub id: String,
    /// What identity or property the statistic instantiates.
    pub description: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckRecord {
    pub fn new(
        id: &str,
        description: &str,
        statistic: f64,
        threshold: f64,
    ) -> Self {
        CheckRecord {
            id: id.into(),
            description: description.into(),
            statistic,
            threshold,
            passed: statistic <= threshold,
        }
    }
}

/// One file written under the output directory.
#[derive(Clone, Debug, Serialize)]
pub struct ArtifactRecord {
    /// File name relative to the output directory.
    pub name: String,
    pub bytes: u64,
    /// FNV-1a hash of the content, hex.
    pub content_hash: String,
}

/// Effective numerical settings after merging defaults, file and flags.
#[derive(Clone, Debug, Serialize)]
pub struct EffectiveSettings {
    pub paths: usize,
    pub steps: usize,
    pub grid_t_steps: usize,
    pub grid_nodes: usize,
    pub beta: Option<f64>,
    pub tol: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub scenario: String,
    pub stages: Vec<String>,
    pub seed: u64,
    /// FNV-1a hash over version, scenario, stages, seed, every numerical
    /// setting and the raw config-file bytes.
    pub inputs_hash: String,
    pub settings: EffectiveSettings,
    pub checks: Vec<CheckRecord>,
    pub artifacts: Vec<ArtifactRecord>,
    pub all_checks_passed: bool,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn fnv1a_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a(bytes))
}

/// Hash a just-written artifact into its record.
pub fn artifact_record(out_dir: &Path, name: &str) -> Result<ArtifactRecord, CliError> {
    let path = out_dir.join(name);
    let bytes = std::fs::read(&path)
        .map_err(|e| CliError::new(EXIT_IO, format!("re-reading {}: {e}", path.display())))?;
    Ok(ArtifactRecord {
        name: name.to_string(),
        bytes: bytes.len() as u64,
        content_hash: fnv1a_hex(&bytes),
    })
}
