//! Run manifests: what was run, with which resolved settings, and what it wrote.
//!
//! `dyncov replay <manifest>` re-runs the recorded arguments with the
//! recorded environment overrides, which reproduces every output file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::files::{check_schema, SCHEMA_VERSION};
use crate::io::{file_name, read_config_json, sibling, write_json};

pub const SEED_ENV: &str = "DYNCOV_SEED";
pub const THREADS_ENV: &str = "DYNCOV_THREADS";

/// Values taken from the environment. Explicit flags take precedence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn from_env() -> CliResult<Self> {
        fn var<T: std::str::FromStr>(name: &str) -> CliResult<Option<T>> {
            match std::env::var(name) {
                Ok(v) if !v.trim().is_empty() => v
                    .trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| CliError::config(format!("{name}='{v}' is not a non-negative integer"))),
                _ => Ok(None),
            }
        }
        Ok(Self {
            seed: var(SEED_ENV)?,
            threads: var(THREADS_ENV)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub overrides: Overrides,
    pub threads: usize,
    /// Every setting the run used, defaults included.
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub software_version: String,
    pub wall_time_seconds: f64,
}

impl RunManifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let m: Self = read_config_json(path)?;
        check_schema(m.schema_version, "manifest")?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }
}

/// Where a run's manifest goes, and the name outputs use to refer to it.
#[derive(Clone, Debug)]
pub struct ManifestRef {
    pub path: PathBuf,
    pub name: String,
}

impl ManifestRef {
    pub fn new(explicit: Option<&Path>, primary_output: &Path) -> Self {
        let path = explicit.map_or_else(|| sibling(primary_output, ".manifest.json"), Path::to_path_buf);
        let name = file_name(&path);
        Self { path, name }
    }
}

pub fn manifest_for(
    command: &str,
    args: Vec<String>,
    overrides: Overrides,
    threads: usize,
    config: serde_json::Value,
    outputs: &[PathBuf],
    wall_time_seconds: f64,
) -> RunManifest {
    RunManifest {
        schema_version: SCHEMA_VERSION,
        command: command.to_string(),
        args,
        overrides,
        threads,
        config,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds,
    }
}
