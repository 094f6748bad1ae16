//! Output plumbing: atomic file writes and run-metadata sidecars.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ResolvedConfig, RunConfig};
use crate::error::CliError;

/// Write `path` through a same-directory temp file and a rename, so readers
/// never observe a half-written artifact. The closure produces the temp file.
pub fn atomic_via<F>(path: &Path, write: F) -> Result<(), CliError>
where
    F: FnOnce(&Path) -> Result<(), CliError>,
{
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = with_suffix(path, ".tmp");
    write(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Atomically write literal bytes to `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    atomic_via(path, |tmp| {
        let mut file = fs::File::create(tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        Ok(())
    })
}

/// `model.bin` + `.trace.json` -> `model.bin.trace.json`.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

/// What every sidecar records about the run that produced its artifact.
#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    config_digest: &'a str,
    config: &'a RunConfig,
}

/// Write `<out>.meta.json` (or `meta.json` inside `out` when it is a
/// directory) describing the resolved configuration behind `out`.
pub fn write_meta(out: &Path, command: &str, resolved: &ResolvedConfig) -> Result<(), CliError> {
    let meta = RunMeta {
        command,
        config_digest: &resolved.digest,
        config: &resolved.config,
    };
    let mut bytes = serde_json::to_vec_pretty(&meta)?;
    bytes.push(b'\n');
    atomic_write(&meta_path_for(out), &bytes)
}

/// Sidecar path convention for an output at `out`.
pub fn meta_path_for(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("meta.json")
    } else {
        with_suffix(out, ".meta.json")
    }
}
