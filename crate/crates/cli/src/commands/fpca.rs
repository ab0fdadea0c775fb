//! `dyncov fpca`: principal components of correlation curves or a curve CSV.

use std::path::PathBuf;

use clap::Args;
use dyncov::fpca::{fpca, pointwise_band, CurveCollection};
use dyncov::matrix::cov_to_corr;

use super::{to_value, Context, Outcome};
use crate::error::{CliError, CliResult, LibContext};
use crate::files::{check_schema, Band, FpcaFile, MatrixCurveFile, SCHEMA_VERSION};
use crate::io::{read_curves, read_data_json, write_curves, write_json};

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("input").required(true))]
pub struct FpcaArgs {
    /// Matrix-curve JSON; its pairwise correlation curves are analysed.
    #[arg(long, group = "input")]
    pub fit: Option<PathBuf>,
    /// Curve CSV with header label,t1,...,tm.
    #[arg(long, group = "input")]
    pub curves: Option<PathBuf>,
    #[arg(long)]
    pub components: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Pointwise quantile levels to export, e.g. 0.1,0.5,0.9.
    #[arg(long, value_delimiter = ',')]
    pub quantiles: Vec<f64>,
    /// Also write the analysed curves as CSV.
    #[arg(long)]
    pub curves_out: Option<PathBuf>,
}

fn collection_from_fit(path: &PathBuf) -> CliResult<CurveCollection> {
    let file: MatrixCurveFile = read_data_json(path)?;
    check_schema(file.schema_version, "matrix-curve file")?;
    let corr = file
        .sym_matrices()?
        .iter()
        .map(cov_to_corr)
        .collect::<dyncov::Result<Vec<_>>>()
        .data_err()?;
    CurveCollection::from_correlation_matrices(file.grid.clone(), &corr).data_err()
}

pub fn run(args: &FpcaArgs, ctx: &Context) -> CliResult<Outcome> {
    let (source, collection) = match (&args.fit, &args.curves) {
        (Some(fit), _) => (fit.display().to_string(), collection_from_fit(fit)?),
        (None, Some(csv)) => (csv.display().to_string(), read_curves(csv)?),
        (None, None) => unreachable!("clap requires one input"),
    };
    let limit = (collection.len() - 1).min(collection.grid().len());
    if args.components == 0 || args.components > limit {
        return Err(CliError::config(format!(
            "--components must be between 1 and {limit} for {} curves on {} points",
            collection.len(),
            collection.grid().len()
        )));
    }
    let result = fpca(&collection, args.components).data_err()?;
    let bands = pointwise_band(&collection, &args.quantiles)
        .config_err()?
        .into_iter()
        .zip(&args.quantiles)
        .map(|(c, &prob)| Band {
            prob,
            values: c.values().to_vec(),
        })
        .collect();
    let file = FpcaFile {
        schema_version: SCHEMA_VERSION,
        manifest: ctx.manifest.name.clone(),
        source: source.clone(),
        labels: collection.labels().to_vec(),
        grid: collection.grid().to_vec(),
        mean: result.mean_curve.values().to_vec(),
        eigenfunctions: result.eigenfunctions.iter().map(|f| f.values().to_vec()).collect(),
        eigenvalues: result.eigenvalues.clone(),
        fve: result.fve.clone(),
        scores: result.scores.clone(),
        total_variance: result.total_variance,
        bands,
    };
    write_json(&args.out, &file)?;
    let mut outputs = vec![args.out.clone()];
    if let Some(path) = &args.curves_out {
        write_curves(path, &collection)?;
        outputs.push(path.clone());
    }
    Ok(Outcome {
        config: to_value(&serde_json::json!({
            "source": source,
            "components": args.components,
            "quantiles": args.quantiles,
        })),
        outputs,
    })
}
