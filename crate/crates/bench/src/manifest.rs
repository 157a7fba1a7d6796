//! Run manifest and work-directory lock.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, BenchResult};
use crate::formats::write_file;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the work directory.
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seconds: f64,
    pub files: Vec<FileRecord>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_name: String,
    pub config_hash: String,
    pub problem: String,
    pub versions: BTreeMap<String, String>,
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn path(workdir: &Path) -> PathBuf {
        workdir.join(MANIFEST_FILE)
    }

    /// The manifest of `workdir`, or an empty one if none exists yet.
    pub fn load_or_default(workdir: &Path) -> BenchResult<Self> {
        let path = Self::path(workdir);
        match fs::read_to_string(&path) {
            Ok(text) => toml::from_str(&text).map_err(|e| BenchError::Format { path, msg: e.to_string() }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(BenchError::io(path, e)),
        }
    }

    pub fn save(&self, workdir: &Path) -> BenchResult<()> {
        let text = toml::to_string(self).expect("manifest serializes");
        write_file(&Self::path(workdir), text.as_bytes())
    }

    /// Files of a completed stage, checked against their recorded sizes.
    pub fn require_stage(&self, workdir: &Path, stage: &str) -> BenchResult<&StageRecord> {
        let rec = self.stages.get(stage).ok_or_else(|| {
            BenchError::Dependency(format!("stage `{stage}` has not run in {}", workdir.display()))
        })?;
        for f in &rec.files {
            let p = workdir.join(&f.path);
            let len = fs::metadata(&p)
                .map_err(|_| BenchError::Dependency(format!("{} is missing", p.display())))?
                .len();
            if len != f.bytes {
                return Err(BenchError::Dependency(format!(
                    "{} has {len} bytes, manifest records {}",
                    p.display(),
                    f.bytes
                )));
            }
        }
        Ok(rec)
    }

    /// Fails unless `rel` was produced by `stage`.
    pub fn require_file(&self, workdir: &Path, stage: &str, rel: &str) -> BenchResult<PathBuf> {
        let rec = self.require_stage(workdir, stage)?;
        if !rec.files.iter().any(|f| f.path == rel) {
            return Err(BenchError::Dependency(format!("{rel} was not produced by stage `{stage}`")));
        }
        Ok(workdir.join(rel))
    }
}

pub fn file_record(workdir: &Path, rel: &str) -> BenchResult<FileRecord> {
    let p = workdir.join(rel);
    let bytes = fs::metadata(&p).map_err(|e| BenchError::io(&p, e))?.len();
    Ok(FileRecord { path: rel.to_string(), bytes })
}

/// Exclusive ownership of a work directory for the lifetime of the value.
#[derive(Debug)]
pub struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    pub fn acquire(workdir: &Path) -> BenchResult<Self> {
        fs::create_dir_all(workdir).map_err(|e| BenchError::io(workdir, e))?;
        let path = workdir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let owner = fs::read_to_string(&path).unwrap_or_default();
                Err(BenchError::Config(format!(
                    "{} is locked by process {} (remove {} if that process is gone)",
                    workdir.display(),
                    owner.trim(),
                    path.display()
                )))
            }
            Err(e) => Err(BenchError::io(path, e)),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = WorkdirLock::acquire(dir.path()).unwrap();
        assert!(matches!(WorkdirLock::acquire(dir.path()), Err(BenchError::Config(_))));
        drop(a);
        WorkdirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn manifest_round_trip_and_dependency_checks() {
        let dir = tempfile::tempdir().unwrap();
        let w = dir.path();
        let mut m = RunManifest::load_or_default(w).unwrap();
        assert!(m.stages.is_empty());
        assert!(matches!(m.require_stage(w, "gen-data"), Err(BenchError::Dependency(_))));
        write_file(&w.join("data/a.bin"), b"12345").unwrap();
        let rec = StageRecord {
            config_hash: "abc".into(),
            seconds: 1.5,
            files: vec![file_record(w, "data/a.bin").unwrap()],
            notes: BTreeMap::new(),
        };
        m.stages.insert("gen-data".into(), rec);
        m.save(w).unwrap();
        let back = RunManifest::load_or_default(w).unwrap();
        assert_eq!(back, m);
        assert!(back.require_file(w, "gen-data", "data/a.bin").is_ok());
        assert!(back.require_file(w, "gen-data", "data/b.bin").is_err());
        write_file(&w.join("data/a.bin"), b"1234").unwrap();
        assert!(matches!(back.require_stage(w, "gen-data"), Err(BenchError::Dependency(_))));
    }
}
