//! Named numeric tables (draws, pointwise log likelihood) stored as CSV or
//! as a compact little-endian binary file.
//!
//! Binary layout: the 8-byte magic `MLNMRMAT`, a `u32` format version, `u64`
//! row and column counts, then each column name as a `u32` byte length plus
//! UTF-8 bytes, then the values as row-major `f64`.

use crate::error::{io_error, CliError};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"MLNMRMAT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// File name for a table stored in `format`.
pub fn path_for(dir: &Path, stem: &str, binary: bool) -> PathBuf {
    dir.join(format!("{stem}.{}", if binary { "bin" } else { "csv" }))
}

/// Finds `stem.csv` or `stem.bin` in `dir`.
pub fn find(dir: &Path, stem: &str) -> Result<PathBuf, CliError> {
    [path_for(dir, stem, false), path_for(dir, stem, true)]
        .into_iter()
        .find(|p| p.exists())
        .ok_or_else(|| CliError::usage("io", format!("{}: no {stem}.csv or {stem}.bin", dir.display())))
}

pub fn write(path: &Path, m: &Matrix) -> Result<(), CliError> {
    if path.extension().is_some_and(|e| e == "bin") {
        write_binary(path, m)
    } else {
        write_csv(path, m)
    }
}

pub fn read(path: &Path) -> Result<Matrix, CliError> {
    if path.extension().is_some_and(|e| e == "bin") {
        read_binary(path)
    } else {
        read_csv(path)
    }
}

fn write_csv(path: &Path, m: &Matrix) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    w.write_record(&m.names).map_err(|e| io_error(path, e))?;
    let mut buf = Vec::with_capacity(m.names.len());
    for row in &m.rows {
        buf.clear();
        buf.extend(row.iter().map(f64::to_string));
        w.write_record(&buf).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn read_csv(path: &Path) -> Result<Matrix, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_error(path, e))?;
    let names: Vec<String> = r.headers().map_err(|e| io_error(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io_error(path, e))?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| io_error(path, format!("cannot parse '{v}' as a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Matrix { names, rows })
}

fn write_binary(path: &Path, m: &Matrix) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_error(path, e));
    put(MAGIC)?;
    put(&VERSION.to_le_bytes())?;
    put(&(m.rows.len() as u64).to_le_bytes())?;
    put(&(m.names.len() as u64).to_le_bytes())?;
    for n in &m.names {
        put(&(n.len() as u32).to_le_bytes())?;
        put(n.as_bytes())?;
    }
    for row in &m.rows {
        for v in row {
            put(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn read_binary(path: &Path) -> Result<Matrix, CliError> {
    let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    let mut r = BufReader::new(file);
    let mut take = |n: usize| -> Result<Vec<u8>, CliError> {
        let mut b = vec![0u8; n];
        r.read_exact(&mut b).map_err(|e| io_error(path, e))?;
        Ok(b)
    };
    if take(8)? != MAGIC {
        return Err(io_error(path, "not a binary table (bad magic)"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(io_error(path, format!("unsupported binary table version {version}")));
    }
    let n_rows = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let n_cols = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let mut names = Vec::with_capacity(n_cols);
    for _ in 0..n_cols {
        let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        names.push(String::from_utf8(take(len)?).map_err(|e| io_error(path, e))?);
    }
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let bytes = take(8 * n_cols)?;
        rows.push(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
    }
    Ok(Matrix { names, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix {
            names: vec!["a".into(), "b[x]".into()],
            rows: vec![vec![1.0, -0.1], vec![f64::MIN_POSITIVE, 1e300]],
        };
        for binary in [false, true] {
            let p = path_for(dir.path(), "t", binary);
            write(&p, &m).unwrap();
            assert_eq!(read(&p).unwrap(), m);
        }
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, b"nonsense").unwrap();
        assert!(read(&bad).is_err());
    }
}
