//! Run directories: exclusive lock plus a manifest describing the run.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use serde::Serialize;

pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub args: Vec<String>,
    pub seed: u64,
    pub config_hash: Option<String>,
    pub config: Option<serde_json::Value>,
}

/// An output directory owned by one process until dropped.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub fn acquire(path: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("{} is locked by another run (remove {} if stale)", path.display(), lock.display())
            }
            Err(e) => return Err(e).with_context(|| format!("locking {}", path.display())),
        }
        Ok(RunDir { path, lock })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn create(&self, name: &str) -> anyhow::Result<File> {
        let p = self.file(name);
        File::create(&p).with_context(|| format!("creating {}", p.display()))
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let p = self.file(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_manifest(&self, manifest: &Manifest<'_>) -> anyhow::Result<()> {
        self.write(MANIFEST_FILE, serde_json::to_string_pretty(manifest)? + "\n")
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_acquire_fails_until_release() {
        let tmp = tempfile::tempdir().unwrap();
        let a = RunDir::acquire(tmp.path().join("r")).unwrap();
        assert!(RunDir::acquire(tmp.path().join("r")).is_err());
        drop(a);
        assert!(RunDir::acquire(tmp.path().join("r")).is_ok());
    }
}
