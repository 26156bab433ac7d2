//! Output directory handling. Files are staged in `<out>/.partial` and moved
//! into `<out>` once the experiment succeeds; on failure the staging
//! directory becomes `<out>/quarantine`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
const STAGING: &str = ".partial";
pub const QUARANTINE: &str = "quarantine";

pub struct OutputDir {
    root: PathBuf,
    staging: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", root.display())))?;
        let staging = root.join(STAGING);
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging).map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", root.display())))?;
        Ok(OutputDir { root: root.to_path_buf(), staging, files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        fs::write(self.staging.join(name), contents)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        let mut out = Vec::with_capacity(self.files.len());
        for f in &self.files {
            let dest = self.root.join(f);
            fs::rename(self.staging.join(f), &dest)?;
            out.push(dest);
        }
        fs::remove_dir_all(&self.staging)?;
        Ok(out)
    }

    /// Moves whatever was written so far into the quarantine directory.
    pub fn quarantine(self) -> Result<PathBuf, CliError> {
        let q = self.root.join(QUARANTINE);
        if q.exists() {
            fs::remove_dir_all(&q)?;
        }
        fs::rename(&self.staging, &q)?;
        Ok(q)
    }
}

/// Minimal CSV builder. Numbers use Rust's shortest round-trip formatting,
/// which never depends on locale.
pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv { text: format!("{}\n", header.join(",")), width: header.len() }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        assert_eq!(cells.len(), self.width, "csv row width");
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::Int(v) => write!(self.text, "{v}").unwrap(),
                Cell::Num(v) => write!(self.text, "{v:e}").unwrap(),
                Cell::Text(s) => self.text.push_str(s),
                Cell::Empty => {}
            }
        }
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

pub enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
    Empty,
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// JSON number, with non-finite values as `null`.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_formats_without_locale() {
        let mut c = Csv::new(&["n", "x", "y"]);
        c.row(&[10usize.into(), 0.5.into(), Cell::Empty]);
        c.row(&[2usize.into(), 1234.5.into(), "ok".into()]);
        assert_eq!(c.finish(), "n,x,y\n10,5e-1,\n2,1.2345e3,ok\n");
    }

    #[test]
    fn staging_commit_and_quarantine() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = OutputDir::create(dir.path()).unwrap();
        o.write("a.csv", "x\n").unwrap();
        o.commit().unwrap();
        assert!(dir.path().join("a.csv").exists());
        assert!(!dir.path().join(STAGING).exists());

        let mut o = OutputDir::create(dir.path()).unwrap();
        o.write("b.csv", "y\n").unwrap();
        let q = o.quarantine().unwrap();
        assert!(q.join("b.csv").exists());
        assert!(!dir.path().join("b.csv").exists());
    }

    #[test]
    fn non_finite_json_is_null() {
        assert_eq!(num(f64::INFINITY), Value::Null);
        assert_eq!(num(1.5), serde_json::json!(1.5));
    }
}
