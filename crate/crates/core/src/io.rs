//! Text output helpers.
//!
//! Reals in CSV files use 17 significant digits, enough to round-trip any
//! double. JSON documents go through `serde_json`, which writes the shortest
//! representation that parses back to the same double.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// A real formatted for CSV output.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `rows` under `header` to a CSV file.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[String]>,
{
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.as_ref().join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Parses a CSV of reals, skipping a header line if it does not parse.
pub fn read_points(text: &str, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match vals {
            Ok(v) if v.len() == dim => out.push(v),
            Ok(v) => {
                return Err(crate::Error::Validation(format!(
                    "line {}: expected {dim} values, found {}",
                    n + 1,
                    v.len()
                )))
            }
            Err(_) if n == 0 => continue,
            Err(e) => return Err(crate::Error::Validation(format!("line {}: {e}", n + 1))),
        }
    }
    Ok(out)
}
