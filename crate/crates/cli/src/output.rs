use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dhym::torus::{write_potential, Potential, TorusGrid};
use serde::Serialize;

use crate::error::{CliError, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DHYM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "dhym-out";

/// Flag, then config, then environment, then `dhym-out`.
pub fn resolve_dir(flag: Option<&Path>, config: Option<&Path>) -> Result<PathBuf> {
    let dir = flag
        .or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub fn to_json<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    std::fs::write(path, to_json(value)).map_err(|e| CliError::io(path, e))
}

/// Numbers print in shortest round-trip form; `-0` prints as `0`.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let io = |e| CliError::io(path, e);
    let mut out = create(path)?;
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|&v| (v + 0.0).to_string()).collect();
        writeln!(out, "{}", line.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_snapshot(path: &Path, grid: &TorusGrid<f64>, phi: &Potential<f64>) -> Result<()> {
    let mut out = create(path)?;
    write_potential(&mut out, grid, phi)?;
    out.flush().map_err(|e| CliError::io(path, e))
}

/// File name relative to the output directory, as recorded in reports.
pub fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
