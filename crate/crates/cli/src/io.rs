use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use vdf_gmm::codec::{decode_histogram, decode_model, decode_model_json, GridSidecar, ModelMeta};
use vdf_gmm::{GmmModel, Histogram2D};

use crate::config::ReportFormat;
use crate::error::CliError;

/// Reads a whole file; a missing file is an [`CliError::InputNotFound`].
pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::InputNotFound(path.into()),
        _ => CliError::io(path, e),
    })
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read_file(path)?).map_err(|e| CliError::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
}

/// Writes an artifact, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    write_file(path, to_json(value).as_bytes())
}

/// Rows that can be written as CSV.
pub trait CsvRow {
    fn header() -> String;
    fn csv_row(&self) -> String;
}

pub fn csv_text<R: CsvRow>(rows: &[R]) -> String {
    let mut s = R::header();
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Writes `dir/stem.json` or `dir/stem.csv`; returns the path.
pub fn write_report<R: CsvRow + Serialize>(
    dir: &Path,
    stem: &str,
    format: ReportFormat,
    rows: &[R],
) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{stem}.{}", format.extension()));
    match format {
        ReportFormat::Json => write_json(&path, rows)?,
        ReportFormat::Csv => write_file(&path, csv_text(rows).as_bytes())?,
    }
    Ok(path)
}

pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Loads a `.gmmc` or `.gmm.json` model, picked by file name.
pub fn load_model(path: &Path) -> Result<(GmmModel, ModelMeta), CliError> {
    let name = path.to_string_lossy();
    if name.ends_with(".json") {
        Ok(decode_model_json(&read_text(path)?)?)
    } else {
        Ok(decode_model(&read_file(path)?)?)
    }
}

/// Sidecar path of a grid file: `x.h2d` -> `x.h2d.json`.
pub fn sidecar_path(grid: &Path) -> PathBuf {
    let mut s = grid.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn load_histogram(path: &Path) -> Result<Histogram2D, CliError> {
    let bytes = read_file(path)?;
    let sidecar = GridSidecar::from_json(&read_text(&sidecar_path(path))?)?;
    Ok(decode_histogram(&bytes, &sidecar)?)
}

/// Writes `bytes` to `path` `repeat` times and returns the median seconds.
pub fn timed_write(path: &Path, bytes: &[u8], repeat: usize) -> Result<f64, CliError> {
    let mut times = Vec::with_capacity(repeat);
    for _ in 0..repeat {
        let start = std::time::Instant::now();
        write_file(path, bytes)?;
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
