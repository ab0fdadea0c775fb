//! `dyncov simulate`: draw a model from a config file and write one data set.

use std::path::PathBuf;

use clap::Args;
use dyncov::sim::{generate_repeated_replicate, generate_replicate, true_cov, SimConfig, VcmSimConfig};
use dyncov::{linspace, ObservationSet};
use serde::Serialize;

use super::{to_value, Context, Outcome};
use crate::error::{CliError, CliResult, LibContext};
use crate::files::{check_schema, MatrixCurveFile, SimFile, SimulateConfig, SCHEMA_VERSION};
use crate::io::{read_config_json, sibling, write_json, write_observations, write_outcomes};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// JSON model config (p, n, seed, optional repeat_design and vcm blocks).
    #[arg(long)]
    pub config: PathBuf,
    /// Observation CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config replicate index.
    #[arg(long)]
    pub replicate: Option<u64>,
    /// Model sidecar JSON [default: <out>.sim.json].
    #[arg(long)]
    pub sim_out: Option<PathBuf>,
    /// Also write the true covariance curve on [0, 1] as matrix-curve JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 101)]
    pub truth_points: usize,
    /// Outcome CSV when the config has a vcm block [default: <out>.outcomes.csv].
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    config_file: String,
    seed: u64,
    replicate: u64,
    model: &'a SimConfig,
    vcm: Option<&'a crate::files::VcmSpec>,
    truth_points: Option<usize>,
}

pub fn truth_file(sim: &SimConfig, points: usize, manifest: &str) -> CliResult<MatrixCurveFile> {
    if points < 2 {
        return Err(CliError::config("--truth-points must be at least 2"));
    }
    let grid = linspace(0.0, 1.0, points);
    let matrices = grid.iter().map(|&x| true_cov(sim, x)).collect::<dyncov::Result<Vec<_>>>().data_err()?;
    Ok(MatrixCurveFile {
        schema_version: SCHEMA_VERSION,
        manifest: manifest.to_string(),
        estimator: None,
        kernel: None,
        domain_end: 1.0,
        h_mean: None,
        h_cov: None,
        bandwidth_selection: None,
        psd: vec![true; grid.len()],
        matrices: matrices.iter().map(|m| m.to_rows()).collect(),
        grid,
        correlations: None,
    })
}

pub fn run(args: &SimulateArgs, ctx: &Context) -> CliResult<Outcome> {
    let cfg: SimulateConfig = read_config_json(&args.config)?;
    check_schema(cfg.schema_version, "simulation config")?;
    let seed = ctx.seed(args.seed, cfg.seed);
    let replicate = args.replicate.unwrap_or(cfg.replicate);
    let mut sim = SimConfig::draw(cfg.p, cfg.n, seed, cfg.spread).config_err()?;
    if let Some(design) = &cfg.repeat_design {
        sim = sim.with_repeat_design(design.clone()).config_err()?;
    }
    if args.outcomes.is_some() && cfg.vcm.is_none() {
        return Err(CliError::config("--outcomes needs a vcm block in the simulation config"));
    }

    let mut outputs = vec![args.out.clone()];
    let (data, scores): (ObservationSet, Option<Vec<f64>>) = match &cfg.vcm {
        Some(spec) => {
            if cfg.repeat_design.is_some() {
                return Err(CliError::config("vcm outcomes need the single-observation design"));
            }
            if !(spec.noise_sd >= 0.0 && spec.noise_sd.is_finite()) {
                return Err(CliError::config("vcm.noise_sd must be a nonnegative number"));
            }
            let mut vsim = VcmSimConfig::new(sim.clone(), spec.noise_sd);
            vsim.baseline = spec.baseline;
            let (data, outcomes) = vsim.generate_replicate(replicate).config_err()?;
            (data, Some(outcomes.scores().to_vec()))
        }
        None if sim.repeat_design.is_some() => (generate_repeated_replicate(&sim, replicate).config_err()?, None),
        None => (generate_replicate(&sim, replicate).config_err()?, None),
    };
    write_observations(&args.out, &data)?;
    if let Some(scores) = &scores {
        let path = args.outcomes.clone().unwrap_or_else(|| sibling(&args.out, ".outcomes.csv"));
        write_outcomes(&path, &data, scores)?;
        outputs.push(path);
    }

    let sim_path = args.sim_out.clone().unwrap_or_else(|| sibling(&args.out, ".sim.json"));
    let sidecar = SimFile {
        schema_version: SCHEMA_VERSION,
        manifest: ctx.manifest.name.clone(),
        replicate,
        sim: sim.clone(),
        vcm: cfg.vcm.clone(),
    };
    write_json(&sim_path, &sidecar)?;
    outputs.push(sim_path);

    if let Some(path) = &args.truth {
        write_json(path, &truth_file(&sim, args.truth_points, &ctx.manifest.name)?)?;
        outputs.push(path.clone());
    }

    let resolved = Resolved {
        config_file: args.config.display().to_string(),
        seed,
        replicate,
        model: &sim,
        vcm: cfg.vcm.as_ref(),
        truth_points: args.truth.as_ref().map(|_| args.truth_points),
    };
    Ok(Outcome {
        config: to_value(&resolved),
        outputs,
    })
}
