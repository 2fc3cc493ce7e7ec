//! Run configuration: scenario selection, stage list, output location and
//! numerical overrides, merged from an optional TOML file and command-line
//! flags (flags win). The raw bytes that went into the decision are kept so
//! the manifest can carry one hash covering every input.

use std::path::PathBuf;

use serde::Deserialize;

use crate::error::{CliError, EXIT_CONFIG, EXIT_USAGE};
use crate::stages::Stage;

pub const OUT_DIR_ENV: &str = "RDHEDGE_OUT";
pub const DEFAULT_OUT_DIR: &str = "rdhedge_out";
pub const SUPPORTED_SCHEMA: u32 = 1;

/// On-disk run configuration. Every field except the schema tag is
/// optional; unknown keys are rejected so typos fail loudly.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    schema_version: u32,
    scenario: Option<String>,
    stages: Option<Vec<String>>,
    out: Option<PathBuf>,
    #[serde(default)]
    overrides: FileOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOverrides {
    seed: Option<u64>,
    paths: Option<usize>,
    steps: Option<usize>,
    /// `"TSTEPSxNODES"`, e.g. `"200x200"`.
    grid: Option<String>,
    beta: Option<f64>,
    tol: Option<f64>,
}

/// Command-line inputs prior to merging, as collected by the parser.
#[derive(Clone, Debug, Default)]
pub struct CliInputs {
    pub scenario: Option<String>,
    pub config: Option<PathBuf>,
    pub stages: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub grid: Option<String>,
    pub beta: Option<f64>,
    pub tol: Option<f64>,
}

/// Fully resolved run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub scenario: String,
    pub stages: Vec<Stage>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Simulation paths for the simulate, hedge and check stages.
    pub paths: usize,
    /// Time steps per simulated path.
    pub steps: usize,
    /// Marching grid override as (time steps, space nodes per axis).
    pub grid: Option<(usize, usize)>,
    /// Weight of the exponential norm for the fixed-point solve.
    pub beta: Option<f64>,
    /// Convergence tolerance for the fixed-point solve.
    pub tol: f64,
    /// Raw bytes of the config file, when one was given.
    pub config_bytes: Vec<u8>,
}

pub const DEFAULT_STAGES: &str = "validate,solve-pde,check";
pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_STEPS: usize = 64;
pub const DEFAULT_TOL: f64 = 1.5e-3;

fn parse_grid(text: &str) -> Result<(usize, usize), CliError> {
    let err = || {
        CliError::new(
            EXIT_USAGE,
            format!("grid must look like 200x200 (time steps x space nodes), got '{text}'"),
        )
    };
    let (t, x) = text.split_once(['x', 'X']).ok_or_else(err)?;
    let t: usize = t.trim().parse().map_err(|_| err())?;
    let x: usize = x.trim().parse().map_err(|_| err())?;
    if t < 2 || x < 4 {
        return Err(CliError::new(
            EXIT_USAGE,
            format!("grid {t}x{x} is too small: need at least 2 time steps and 4 nodes"),
        ));
    }
    Ok((t, x))
}

fn parse_stage_list(text: &str) -> Result<Vec<Stage>, CliError> {
    let mut stages = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        stages.push(Stage::parse(part)?);
    }
    if stages.is_empty() {
        return Err(CliError::new(EXIT_USAGE, "no stages requested".to_string()));
    }
    // Duplicates keep their first occurrence.
    let mut seen = Vec::new();
    stages.retain(|s| {
        if seen.contains(s) {
            false
        } else {
            seen.push(*s);
            true
        }
    });
    Ok(stages)
}

/// Merge the command line with an optional config file into one resolved
/// configuration. Flags override file values, which override defaults; the
/// output directory falls back to the environment and then to a fixed name.
pub fn resolve(inputs: &CliInputs) -> Result<RunConfig, CliError> {
    if inputs.scenario.is_some() && inputs.config.is_some() {
        return Err(CliError::new(
            EXIT_USAGE,
            "--scenario and --config are mutually exclusive; the config file names its scenario",
        ));
    }

    let mut file: Option<FileConfig> = None;
    let mut config_bytes = Vec::new();
    if let Some(path) = &inputs.config {
        config_bytes = std::fs::read(path).map_err(|e| {
            CliError::new(EXIT_CONFIG, format!("cannot read {}: {e}", path.display()))
        })?;
        let text = std::str::from_utf8(&config_bytes).map_err(|_| {
            CliError::new(EXIT_CONFIG, format!("{} is not UTF-8", path.display()))
        })?;
        let parsed: FileConfig = toml::from_str(text).map_err(|e| {
            CliError::new(EXIT_CONFIG, format!("{}: {e}", path.display()))
        })?;
        if parsed.schema_version != SUPPORTED_SCHEMA {
            return Err(CliError::new(
                EXIT_CONFIG,
                format!(
                    "unsupported schema_version {} (this build reads {SUPPORTED_SCHEMA})",
                    parsed.schema_version
                ),
            ));
        }
        file = Some(parsed);
    }

    let scenario = inputs
        .scenario
        .clone()
        .or_else(|| file.as_ref().and_then(|f| f.scenario.clone()))
        .ok_or_else(|| {
            CliError::new(
                EXIT_USAGE,
                "no scenario: pass --scenario NAME or --config FILE with a scenario entry",
            )
        })?;

    let stages = match (&inputs.stages, file.as_ref().and_then(|f| f.stages.as_ref())) {
        (Some(text), _) => parse_stage_list(text)?,
        (None, Some(list)) => parse_stage_list(&list.join(","))?,
        (None, None) => parse_stage_list(DEFAULT_STAGES)?,
    };

    let out_dir = inputs
        .out
        .clone()
        .or_else(|| file.as_ref().and_then(|f| f.out.clone()))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));

    let file_over = file.map(|f| f.overrides).unwrap_or_default();
    let grid_text = inputs.grid.clone().or(file_over.grid);
    let grid = grid_text.as_deref().map(parse_grid).transpose()?;
    let tol = inputs.tol.or(file_over.tol).unwrap_or(DEFAULT_TOL);
    if !(tol.is_finite() && tol > 0.0) {
        return Err(CliError::new(
            EXIT_USAGE,
            format!("tolerance must be positive, got {tol}"),
        ));
    }
    let beta = inputs.beta.or(file_over.beta);
    if let Some(b) = beta {
        if !(b.is_finite() && b > 0.0) {
            return Err(CliError::new(
                EXIT_USAGE,
                format!("beta must be positive, got {b}"),
            ));
        }
    }
    let paths = inputs.paths.or(file_over.paths).unwrap_or(DEFAULT_PATHS);
    let steps = inputs.steps.or(file_over.steps).unwrap_or(DEFAULT_STEPS);
    if paths == 0 || steps == 0 {
        return Err(CliError::new(
            EXIT_USAGE,
            "paths and steps must both be positive",
        ));
    }

    Ok(RunConfig {
        scenario,
        stages,
        out_dir,
        seed: inputs.seed.or(file_over.seed).unwrap_or(1),
        paths,
        steps,
        grid,
        beta,
        tol,
        config_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_strings_parse_or_reject() {
        assert_eq!(parse_grid("200x200").unwrap(), (200, 200));
        assert_eq!(parse_grid("64X31").unwrap(), (64, 31));
        assert!(parse_grid("200").is_err());
        assert!(parse_grid("0x10").is_err());
        assert!(parse_grid("axb").is_err());
    }

    #[test]
    fn flags_override_defaults() {
        let cfg = resolve(&CliInputs {
            scenario: Some("defaultable_bond_treasury".into()),
            seed: Some(9),
            ..CliInputs::default()
        })
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.paths, DEFAULT_PATHS);
        assert_eq!(cfg.stages.len(), 3);
    }

    #[test]
    fn scenario_and_config_conflict() {
        let err = resolve(&CliInputs {
            scenario: Some("a".into()),
            config: Some(PathBuf::from("b.toml")),
            ..CliInputs::default()
        })
        .unwrap_err();
        assert_eq!(err.exit_code, EXIT_USAGE);
    }

    #[test]
    fn stage_lists_deduplicate_and_reject_unknowns() {
        let stages = parse_stage_list("validate,validate,solve-pde").unwrap();
        assert_eq!(stages.len(), 2);
        assert!(parse_stage_list("validate,warp").is_err());
        assert!(parse_stage_list(" ,").is_err());
    }
}
