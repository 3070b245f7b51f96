use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use modci_core::record::RunRecord;
use tempfile::NamedTempFile;

/// Config problems exit with 2, everything else with 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<modci_core::Error> for CliError {
    fn from(e: modci_core::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

pub fn runtime(context: impl fmt::Display) -> impl FnOnce(std::io::Error) -> CliError {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv: {e}"))
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(runtime(dir.display()))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(runtime(dir.display()))?;
    tmp.write_all(bytes).map_err(runtime(path.display()))?;
    tmp.persist(path).map_err(|e| runtime(path.display())(e.error))?;
    Ok(())
}

/// Expands directories to the `.json` files directly inside them, sorted.
pub fn record_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(runtime(p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::Runtime("no record files given".into()));
    }
    Ok(out)
}

pub fn load_records(inputs: &[PathBuf]) -> Result<Vec<RunRecord>, CliError> {
    record_paths(inputs)?
        .iter()
        .map(|p| RunRecord::load(p).map_err(CliError::from))
        .collect()
}

pub fn csv_bytes(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<(), CliError>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w)?;
    w.into_inner().map_err(|e| CliError::Runtime(format!("csv: {e}")))
}
