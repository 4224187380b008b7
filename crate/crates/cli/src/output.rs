//! Atomic artifact writers.

use std::io::Write;
use std::path::Path;

use harlstm::{Error, Result};
use serde::Serialize;
use tempfile::NamedTempFile;

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// `# `-prefixed copy of `toml`, for the top of CSV files.
pub fn comment_block(toml: &str) -> String {
    toml.lines().map(|l| format!("# {l}\n")).collect()
}

/// CSV with a leading comment block; rows are written as given.
pub fn write_csv(path: &Path, comment: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = comment.as_bytes().to_vec();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    write_atomic(path, &buf)
}

/// Shortest round-trip decimal rendering.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
