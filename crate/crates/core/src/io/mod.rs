//! File formats: dataset directories, experiment configs and result files.
//!
//! All CSV output is UTF-8 with LF line endings and floats written with 17
//! significant digits, so a value read back parses to the same `f64`.

mod config;
mod results;

pub use config::{ExperimentConfig, SimulateSettings, Task, VbSettings};
pub use results::{
    chain_csv, estimate_csv, json_bytes, read_selection_csv, selection_csv, study_csv, summarize_chain,
    summarize_vb, summary_csv, timings_csv, vb_json, Manifest, OutputDir, SummaryRow, VbExport,
};

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{LsapcError, Result};
use crate::model::Dataset;

pub const Y_FILE: &str = "y.csv";
pub const X_FILE: &str = "X.csv";
pub const META_FILE: &str = "meta.csv";

/// Float cell with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub(crate) fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(buf)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path)?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(file))
}

fn expect_header(path: &Path, found: &csv::StringRecord, expected: &[String]) -> Result<()> {
    if found.iter().ne(expected.iter().map(String::as_str)) {
        return Err(LsapcError::Format(format!(
            "{}: header {:?}, expected {:?}",
            path.display(),
            found.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    Ok(())
}

fn parse_cell<T: std::str::FromStr>(path: &Path, row: usize, col: usize, cell: &str) -> Result<T> {
    cell.parse().map_err(|_| {
        LsapcError::Format(format!(
            "{}: row {}, column {}: cannot parse {cell:?}",
            path.display(),
            row + 2,
            col + 1
        ))
    })
}

/// Reads a dataset directory (`y.csv`, `X.csv`, optional `meta.csv`).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let y_path = dir.join(Y_FILE);
    let mut rdr = csv_reader(&y_path)?;
    expect_header(&y_path, rdr.headers()?, &["y".to_string()])?;
    let mut y = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        y.push(parse_cell::<f64>(&y_path, r, 0, &rec[0])?);
    }

    let x_path = dir.join(X_FILE);
    let mut rdr = csv_reader(&x_path)?;
    let header = rdr.headers()?.clone();
    let p = header.len();
    let expected: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    expect_header(&x_path, &header, &expected)?;
    let mut rows: Vec<f64> = Vec::new();
    let mut n_x = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (c, cell) in rec.iter().enumerate() {
            rows.push(parse_cell::<f64>(&x_path, r, c, cell)?);
        }
        n_x += 1;
    }
    if n_x != y.len() {
        return Err(LsapcError::DimensionMismatch(format!(
            "{} has {} rows but {} has {}",
            X_FILE,
            n_x,
            Y_FILE,
            y.len()
        )));
    }
    let x = DMatrix::from_row_slice(n_x, p, &rows);

    let meta_path = dir.join(META_FILE);
    let (site_id, time_index) = if meta_path.exists() {
        let mut rdr = csv_reader(&meta_path)?;
        let header = rdr.headers()?.clone();
        if header.iter().any(|h| h == "site_id") && !header.iter().any(|h| h == "time_index") {
            return Err(LsapcError::Format(format!(
                "{}: site_id given without time_index",
                meta_path.display()
            )));
        }
        expect_header(&meta_path, &header, &["site_id".to_string(), "time_index".to_string()])?;
        let mut sites = Vec::new();
        let mut times = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            sites.push(parse_cell::<i64>(&meta_path, r, 0, &rec[0])?);
            times.push(parse_cell::<i64>(&meta_path, r, 1, &rec[1])?);
        }
        (Some(sites), Some(times))
    } else {
        (None, None)
    };
    Dataset::with_metadata(DVector::from_vec(y), x, site_id, time_index)
}

/// Writes `data` in the format read by [`load_dataset`]; returns the file
/// names written.
pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let files = dataset_files(data)?;
    let mut names = Vec::new();
    for (name, bytes) in files {
        fs::write(dir.join(name), bytes)?;
        names.push(name.to_string());
    }
    Ok(names)
}

/// Serialized dataset files as `(name, bytes)`.
pub fn dataset_files(data: &Dataset) -> Result<Vec<(&'static str, Vec<u8>)>> {
    data.validate()?;
    let mut out = Vec::new();

    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["y"])?;
        for v in data.y.iter() {
            w.write_record([fmt_f64(*v)])?;
        }
        w.flush()?;
    }
    out.push((Y_FILE, buf));

    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record((1..=data.p()).map(|j| format!("x{j}")))?;
        for row in data.x.row_iter() {
            w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
        }
        w.flush()?;
    }
    out.push((X_FILE, buf));

    if let (Some(s), Some(t)) = (&data.site_id, &data.time_index) {
        let mut buf = Vec::new();
        {
            let mut w = csv_writer(&mut buf);
            w.write_record(["site_id", "time_index"])?;
            for (a, b) in s.iter().zip(t) {
                w.write_record([a.to_string(), b.to_string()])?;
            }
            w.flush()?;
        }
        out.push((META_FILE, buf));
    }
    Ok(out)
}
