//! Result export.
//!
//! An [`OutputDir`] is the only writer for its directory. Every file goes
//! through it, and it keeps the list of files written with their SHA-256
//! digests for the manifest. Floats in CSV files carry 17 significant
//! digits, so equal values always give equal bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One CSV field.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::I(x)
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::S(s)
    }
}

/// `{:.16e}`, i.e. 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Floats joined by `;`, for list-valued CSV columns.
pub fn float_list(xs: &[f64]) -> Cell {
    Cell::S(xs.iter().map(|&x| fmt_float(x)).collect::<Vec<_>>().join(";"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Mutex<Vec<FileRecord>>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| Error::Io { path: root.display().to_string(), source })?;
        Ok(Self { root, written: Mutex::new(Vec::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn put(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        let mut written = self.written.lock().unwrap_or_else(|p| p.into_inner());
        fs::write(&path, bytes).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        let rec = FileRecord { name: name.to_string(), bytes: bytes.len(), sha256: sha256_hex(bytes) };
        match written.iter_mut().find(|r| r.name == name) {
            Some(r) => *r = rec,
            None => written.push(rec),
        }
        Ok(path)
    }

    pub fn csv<I>(&self, name: &str, header: &[&str], rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = Vec<Cell>>,
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            if row.len() != header.len() {
                return Err(Error::Precondition(format!(
                    "{name}: row of {} fields under a header of {}",
                    row.len(),
                    header.len()
                )));
            }
            w.write_record(row.iter().map(|c| match c {
                Cell::F(x) => fmt_float(*x),
                Cell::I(i) => i.to_string(),
                Cell::S(s) => s.clone(),
            }))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io { path: name.into(), source: e.into_error() })?;
        self.put(name, &bytes)
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put(name, &bytes)
    }

    pub fn text(&self, name: &str, text: &str) -> Result<PathBuf> {
        self.put(name, text.as_bytes())
    }

    /// Files written so far, in write order.
    pub fn files(&self) -> Vec<FileRecord> {
        self.written.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub parallel: bool,
    pub status: String,
    pub stages: Vec<StageTime>,
    pub total_seconds: f64,
    pub files: Vec<FileRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(-2.0), "-2.0000000000000000e0");
        let back: f64 = fmt_float(std::f64::consts::PI).parse().unwrap();
        assert_eq!(back, std::f64::consts::PI);
    }

    #[test]
    fn csv_records_digest() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path()).unwrap();
        out.csv("a.csv", &["x", "n"], vec![vec![Cell::F(1.5), Cell::from(3usize)]]).unwrap();
        let text = fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert_eq!(text, "x,n\n1.5000000000000000e0,3\n");
        let files = out.files();
        assert_eq!(files[0].sha256, sha256_hex(text.as_bytes()));
        assert!(out.csv("b.csv", &["x"], vec![vec![Cell::F(1.0), Cell::F(2.0)]]).is_err());
    }
}
