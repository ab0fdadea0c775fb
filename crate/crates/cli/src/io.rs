//! CSV and JSON files. Floats are written in shortest round-trip form, so
//! reading a file back reproduces every value exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dyncov::fpca::CurveCollection;
use dyncov::{MeanCurves, ObservationSet};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult, LibContext};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// `dir/stem<suffix>` next to `path`, e.g. `fit.json` -> `fit.means.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::write(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::write(path, e))?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| CliError::write(path, e))
}

fn read_json_as<T: DeserializeOwned>(path: &Path, wrap: fn(String) -> CliError) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| wrap(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| wrap(format!("{}: {e}", path.display())))
}

/// A JSON input that describes how to run (config files, manifests).
pub fn read_config_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    read_json_as(path, CliError::config)
}

/// A JSON input produced by an earlier run (fits, simulation sidecars).
pub fn read_data_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    read_json_as(path, CliError::data)
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::write(path, e))
}

fn csv_reader(path: &Path) -> CliResult<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::read(path, e))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_field<T: std::str::FromStr>(path: &Path, record: &csv::StringRecord, col: usize, name: &str) -> CliResult<T> {
    let raw = record.get(col).unwrap_or("");
    raw.parse().map_err(|_| {
        CliError::data(format!(
            "{} line {}: column '{name}' has unparseable value '{raw}'",
            path.display(),
            line_of(record)
        ))
    })
}

fn finish<W: Write>(path: &Path, w: csv::Writer<W>) -> CliResult<()> {
    w.into_inner()
        .map_err(|e| CliError::write(path, e.error()))?
        .flush()
        .map_err(|e| CliError::write(path, e))
}

/// Observations as `subject,time,y1..yp`, one row per observation.
pub fn write_observations(path: &Path, data: &ObservationSet) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["subject".to_string(), "time".to_string()];
    header.extend((1..=data.p()).map(|j| format!("y{j}")));
    w.write_record(&header).map_err(|e| CliError::write(path, e))?;
    for i in 0..data.n() {
        let mut row = vec![data.subjects()[i].to_string(), fmt_f64(data.times()[i])];
        row.extend(data.response(i).iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).map_err(|e| CliError::write(path, e))?;
    }
    finish(path, w)
}

/// Reads `subject,time,y1..yp`. The domain end defaults to the largest time.
pub fn read_observations(path: &Path, domain_end: Option<f64>) -> CliResult<ObservationSet> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| CliError::read(path, e))?.clone();
    let p = header.len().saturating_sub(2);
    let expected: Vec<String> = ["subject", "time"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=p).map(|j| format!("y{j}")))
        .collect();
    if p == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(CliError::data(format!(
            "{}: header must be 'subject,time,y1,...,yp', found '{}'",
            path.display(),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut subjects = Vec::new();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| CliError::read(path, e))?;
        if record.len() != p + 2 {
            return Err(CliError::data(format!(
                "{} line {}: expected {} fields, found {}",
                path.display(),
                line_of(&record),
                p + 2,
                record.len()
            )));
        }
        subjects.push(parse_field::<u64>(path, &record, 0, "subject")?);
        times.push(parse_field::<f64>(path, &record, 1, "time")?);
        for j in 0..p {
            values.push(parse_field::<f64>(path, &record, j + 2, &expected[j + 2])?);
        }
    }
    let n = times.len();
    let end = match domain_end {
        Some(t) => t,
        None => times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let responses = DMatrix::from_row_slice(n, p, &values);
    ObservationSet::with_subjects(times, responses, end, subjects)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Outcomes as `subject,time,outcome`, aligned row by row with the data.
pub fn write_outcomes(path: &Path, data: &ObservationSet, scores: &[f64]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["subject", "time", "outcome"]).map_err(|e| CliError::write(path, e))?;
    for (i, s) in scores.iter().enumerate() {
        w.write_record([data.subjects()[i].to_string(), fmt_f64(data.times()[i]), fmt_f64(*s)])
            .map_err(|e| CliError::write(path, e))?;
    }
    finish(path, w)
}

pub fn read_outcomes(path: &Path, data: &ObservationSet) -> CliResult<Vec<f64>> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| CliError::read(path, e))?.clone();
    if header.iter().ne(["subject", "time", "outcome"]) {
        return Err(CliError::data(format!(
            "{}: header must be 'subject,time,outcome'",
            path.display()
        )));
    }
    let mut scores = Vec::with_capacity(data.n());
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| CliError::read(path, e))?;
        let subject: u64 = parse_field(path, &record, 0, "subject")?;
        let time: f64 = parse_field(path, &record, 1, "time")?;
        if i >= data.n() || subject != data.subjects()[i] || time != data.times()[i] {
            return Err(CliError::data(format!(
                "{} line {}: outcome row does not match observation row {} of the data file",
                path.display(),
                line_of(&record),
                i + 1
            )));
        }
        scores.push(parse_field(path, &record, 2, "outcome")?);
    }
    if scores.len() != data.n() {
        return Err(CliError::data(format!(
            "{}: {} outcomes for {} observations",
            path.display(),
            scores.len(),
            data.n()
        )));
    }
    Ok(scores)
}

/// Mean curves as `time,y1..yp` on their evaluation grid.
pub fn write_means(path: &Path, means: &MeanCurves) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["time".to_string()];
    header.extend((1..=means.p()).map(|j| format!("y{j}")));
    w.write_record(&header).map_err(|e| CliError::write(path, e))?;
    for (t, x) in means.grid().iter().enumerate() {
        let mut row = vec![fmt_f64(*x)];
        row.extend(means.curves().iter().map(|c| fmt_f64(c.values()[t])));
        w.write_record(&row).map_err(|e| CliError::write(path, e))?;
    }
    finish(path, w)
}

/// Curves as `label,t_1,...,t_m`: the header carries the grid, each row one curve.
pub fn read_curves(path: &Path) -> CliResult<CurveCollection> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| CliError::read(path, e))?.clone();
    if header.get(0) != Some("label") || header.len() < 3 {
        return Err(CliError::data(format!(
            "{}: header must be 'label,t1,...,tm' with at least two grid points",
            path.display()
        )));
    }
    let grid = header
        .iter()
        .skip(1)
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::data(format!("{}: grid value '{s}' in header is not a number", path.display())))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| CliError::read(path, e))?;
        if record.len() != grid.len() + 1 {
            return Err(CliError::data(format!(
                "{} line {}: expected {} fields, found {}",
                path.display(),
                line_of(&record),
                grid.len() + 1,
                record.len()
            )));
        }
        labels.push(record[0].to_string());
        for (t, x) in grid.iter().enumerate() {
            values.push(parse_field::<f64>(path, &record, t + 1, &x.to_string())?);
        }
    }
    let curves = DMatrix::from_row_slice(labels.len(), grid.len(), &values);
    CurveCollection::new(grid, curves, labels).data_err()
}

pub fn write_curves(path: &Path, collection: &CurveCollection) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["label".to_string()];
    header.extend(collection.grid().iter().map(|x| fmt_f64(*x)));
    w.write_record(&header).map_err(|e| CliError::write(path, e))?;
    for (i, label) in collection.labels().iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(collection.curves().row(i).iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).map_err(|e| CliError::write(path, e))?;
    }
    finish(path, w)
}

/// Writes plain rows of strings under `header`.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| CliError::write(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| CliError::write(path, e))?;
    }
    finish(path, w)
}
