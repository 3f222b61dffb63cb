//! CSV and JSON output.
//!
//! Numbers are written with Rust's shortest round-trip formatting, which is
//! locale independent.

use crate::error::Result;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub fn format_number(x: f64) -> String {
    format!("{x:?}")
}

/// Write a header and numeric rows.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        w.write_record(row.iter().map(|x| format_number(*x)))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a numeric CSV back: header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| crate::Error::Validation(format!("bad number {s:?} in {}: {e}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let rows = vec![vec![1.0, 0.1, 1e-300], vec![-2.5, f64::MAX, 3.0e20]];
        write_csv(&p, &["a", "b", "c"], rows.clone()).unwrap();
        let (h, back) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["a", "b", "c"]);
        assert_eq!(back, rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("a,b,c\n1.0,0.1,1e-300\n"), "{text}");
    }
}
