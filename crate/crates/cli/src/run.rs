//! Output-directory bookkeeping: exclusive lock, overwrite protection and
//! the `run.json` record.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use chrono_field::{Error, Result};
use serde::Serialize;

const LOCK: &str = ".lock";
pub const RUN_RECORD: &str = "run.json";

/// Held while a command writes into its output directory.
pub struct RunDir {
    pub path: PathBuf,
    lock: PathBuf,
    started: Instant,
    started_unix: u64,
}

impl RunDir {
    /// Creates (or, with `force`, reuses) `path` and takes its lock.
    pub fn open(path: &Path, force: bool) -> Result<Self> {
        if path.join(RUN_RECORD).exists() && !force {
            return Err(Error::Config(format!(
                "{} already holds a run; pass --force to overwrite",
                path.display()
            )));
        }
        std::fs::create_dir_all(path).map_err(|e| io_err(path, e))?;
        let lock = path.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(f) => drop::<File>(f),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::Config(format!(
                    "{} is locked by another run (remove {} if stale)",
                    path.display(),
                    lock.display()
                )))
            }
            Err(e) => return Err(io_err(&lock, e)),
        }
        Ok(Self {
            path: path.to_path_buf(),
            lock,
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<()> {
        write_json(&self.file(name), value)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let p = self.file(name);
        std::fs::write(&p, text).map_err(|e| io_err(&p, e))
    }

    /// Writes `run.json`; the last thing a successful command does.
    pub fn finish<S: Serialize>(self, command: &str, seed: u64, digest: &str, result: &S) -> Result<()> {
        #[derive(Serialize)]
        struct Record<'a, S> {
            command: &'a str,
            version: &'a str,
            seed: u64,
            config_digest: &'a str,
            started_unix: u64,
            wall_seconds: f64,
            result: &'a S,
        }
        self.write_json(
            RUN_RECORD,
            &Record {
                command,
                version: env!("CARGO_PKG_VERSION"),
                seed,
                config_digest: digest,
                started_unix: self.started_unix,
                wall_seconds: self.started.elapsed().as_secs_f64(),
                result,
            },
        )
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunDir::open(dir.path(), false).unwrap();
        assert!(matches!(RunDir::open(dir.path(), true), Err(Error::Config(_))));
        drop(a);
        RunDir::open(dir.path(), false).unwrap();
    }

    #[test]
    fn finished_run_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        RunDir::open(dir.path(), false).unwrap().finish("x", 0, "d", &()).unwrap();
        assert!(matches!(RunDir::open(dir.path(), false), Err(Error::Config(_))));
        RunDir::open(dir.path(), true).unwrap();
    }
}
