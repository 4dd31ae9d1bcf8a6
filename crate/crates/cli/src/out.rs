use std::fs;
use std::path::{Path, PathBuf};

use griffin::io::write_atomic;
use griffin::Result;
use serde::Serialize;

pub fn prepare(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

pub fn json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_atomic(path, text.as_bytes())
}

pub fn text(path: &Path, body: &str) -> Result<()> {
    write_atomic(path, body.as_bytes())
}
