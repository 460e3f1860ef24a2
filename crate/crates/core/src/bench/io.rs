use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetSource, Diagnostics, EvaluationGrid, Observed, ScalerKind};
use crate::error::{Error, Result};

/// JSON metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub source: DatasetSource,
    pub scaling: ScalerKind,
    pub n: usize,
    pub v_dim: usize,
    /// SHA-256 of the hidden draws, hex encoded.
    pub diagnostics_sha256: String,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn diagnostics_checksum(d: &Diagnostics) -> String {
    let mut h = Sha256::new();
    for column in [&d.u, &d.eps, &d.t] {
        h.update((column.len() as u64).to_le_bytes());
        for v in column {
            h.update(v.to_le_bytes());
        }
    }
    h.update((d.s.len() as u64).to_le_bytes());
    h.update(&d.s);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest representation that parses back to the same value.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn write_rows(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(&header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.into_iter().map(fmt_f64)).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a CSV of numbers and checks its header against `expected`.
fn read_rows(path: &Path, expected: &[String]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    if header != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected header {}, found {}", expected.join(","), header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("row {}: {e}", line + 1),
            })?;
        rows.push(row);
    }
    Ok(rows)
}

fn v_header(v_dim: usize) -> impl Iterator<Item = String> {
    (0..v_dim).map(|j| format!("v_{j}"))
}

/// Writes `x,y,w,v_0..` to `path` and the sidecar to `path.json`.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let o = &dataset.observed;
    o.validate()?;
    let header = ["x", "y", "w"].into_iter().map(String::from).chain(v_header(o.v_dim)).collect();
    let rows = (0..o.n()).map(|i| {
        let mut row = vec![o.x[i], o.y[i], o.w[i]];
        row.extend_from_slice(o.v_row(i));
        row
    });
    write_rows(path, header, rows)?;
    let sidecar = DatasetSidecar {
        source: dataset.source,
        scaling: dataset.scaling,
        n: o.n(),
        v_dim: o.v_dim,
        diagnostics_sha256: diagnostics_checksum(&dataset.diagnostics),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    let side = sidecar_path(path);
    std::fs::write(&side, json + "\n").map_err(io_err(&side))
}

pub fn read_dataset(path: &Path) -> Result<(Observed, DatasetSidecar)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(io_err(&side))?;
    let sidecar: DatasetSidecar = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: side.clone(),
        reason: e.to_string(),
    })?;
    let header: Vec<String> =
        ["x", "y", "w"].into_iter().map(String::from).chain(v_header(sidecar.v_dim)).collect();
    let rows = read_rows(path, &header)?;
    let mut o = Observed {
        x: Vec::with_capacity(rows.len()),
        y: Vec::with_capacity(rows.len()),
        w: Vec::with_capacity(rows.len()),
        v: Vec::with_capacity(rows.len() * sidecar.v_dim),
        v_dim: sidecar.v_dim,
    };
    for row in rows {
        o.x.push(row[0]);
        o.y.push(row[1]);
        o.w.push(row[2]);
        o.v.extend_from_slice(&row[3..]);
    }
    if o.n() != sidecar.n {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("sidecar lists {} rows, file has {}", sidecar.n, o.n()),
        });
    }
    Ok((o, sidecar))
}

/// Writes `x,g0,v_0..`.
pub fn write_grid(path: &Path, grid: &EvaluationGrid) -> Result<()> {
    let header = ["x", "g0"].into_iter().map(String::from).chain(v_header(grid.v_dim)).collect();
    let rows = (0..grid.len()).map(|i| {
        let mut row = vec![grid.x[i], grid.g0[i]];
        row.extend_from_slice(grid.v_row(i));
        row
    });
    write_rows(path, header, rows)
}

pub fn read_grid(path: &Path) -> Result<EvaluationGrid> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let width = r.headers().map_err(csv_err(path))?.len();
    if width < 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "grid needs columns x,g0".into(),
        });
    }
    let v_dim = width - 2;
    let header: Vec<String> = ["x", "g0"].into_iter().map(String::from).chain(v_header(v_dim)).collect();
    let rows = read_rows(path, &header)?;
    let mut grid = EvaluationGrid {
        x: Vec::with_capacity(rows.len()),
        v: Vec::with_capacity(rows.len() * v_dim),
        v_dim,
        g0: Vec::with_capacity(rows.len()),
    };
    for row in rows {
        grid.x.push(row[0]);
        grid.g0.push(row[1]);
        grid.v.extend_from_slice(&row[2..]);
    }
    Ok(grid)
}

/// Writes `text` to `path`, mapping the error to the path.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}
