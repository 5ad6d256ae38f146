//! Artifact files. Each starts with `# config_hash=<sha256> version=<ver>`;
//! CSV floats carry 17 significant digits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One CSV cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(usize),
    Float(f64),
}

impl Cell {
    pub fn render(self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format!("{x:.16e}"),
        }
    }
}

pub struct ArtifactDir {
    dir: PathBuf,
    header: String,
    written: Vec<PathBuf>,
}

impl ArtifactDir {
    pub fn create(dir: &Path, config_hash: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
        Ok(ArtifactDir {
            dir: dir.to_path_buf(),
            header: format!("# config_hash={config_hash} version={VERSION}\n"),
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn write(&mut self, name: &str, body: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let io = |e| CliError::Io(path.clone(), e);
        let mut f = fs::File::create(&path).map_err(io)?;
        f.write_all(self.header.as_bytes()).map_err(io)?;
        f.write_all(body).map_err(io)?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut body = serde_json::to_vec_pretty(value).expect("artifact serializes");
        body.push(b'\n');
        self.write(name, &body)
    }

    pub fn csv<I>(&mut self, name: &str, columns: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<Cell>>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        let path = self.dir.join(name);
        let err = |e: csv::Error| CliError::Io(path.clone(), std::io::Error::other(e));
        w.write_record(columns).map_err(err)?;
        for row in rows {
            debug_assert_eq!(row.len(), columns.len());
            w.write_record(row.into_iter().map(Cell::render)).map_err(err)?;
        }
        let body = w.into_inner().map_err(|e| CliError::Io(path.clone(), e.into_error()))?;
        self.write(name, &body)
    }
}

/// Reads a JSON artifact, skipping leading `#` header lines.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    let body: String = text.lines().skip_while(|l| l.starts_with('#')).collect::<Vec<_>>().join("\n");
    serde_json::from_str(&body).map_err(|e| CliError::Input(path.to_path_buf(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_render_with_17_significant_digits() {
        assert_eq!(Cell::Float(0.1).render(), "1.0000000000000001e-1");
        assert_eq!(Cell::Float(-2.5).render(), "-2.5000000000000000e0");
        assert_eq!(Cell::Int(42).render(), "42");
        let x = 1.0 / 3.0;
        assert_eq!(Cell::Float(x).render().parse::<f64>().unwrap(), x);
    }

    #[test]
    fn files_carry_the_header_and_json_reads_back() {
        let tmp = tempfile::tempdir().unwrap();
        let mut dir = ArtifactDir::create(tmp.path(), "abc").unwrap();
        dir.json("v.json", &vec![1.5, 2.0]).unwrap();
        dir.csv("t.csv", &["k", "x"], vec![vec![Cell::Int(0), Cell::Float(1.0)]]).unwrap();
        let csv_text = fs::read_to_string(tmp.path().join("t.csv")).unwrap();
        let header = format!("# config_hash=abc version={VERSION}");
        assert_eq!(csv_text, format!("{header}\nk,x\n0,1.0000000000000000e0\n"));
        assert!(fs::read_to_string(tmp.path().join("v.json")).unwrap().starts_with(&header));
        let back: Vec<f64> = read_json(&tmp.path().join("v.json")).unwrap();
        assert_eq!(back, vec![1.5, 2.0]);
        assert_eq!(dir.written().len(), 2);
    }

    #[test]
    fn malformed_json_is_an_input_error() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("bad.json");
        fs::write(&p, "# header\n{not json").unwrap();
        assert!(matches!(read_json::<Vec<f64>>(&p), Err(CliError::Input(..))));
        assert!(matches!(read_json::<Vec<f64>>(&tmp.path().join("none.json")), Err(CliError::Io(..))));
    }
}
