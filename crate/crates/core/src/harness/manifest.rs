//! Run manifest: stage lineage with content hashes of every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// SHA-256 of a file's bytes, or for a directory, of its sorted listing
/// where each line is `kind name hash`, recursively.
pub fn content_hash(path: &Path) -> Result<String> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        return Ok(hex::encode(Sha256::digest(&bytes)));
    }
    let mut entries: Vec<(String, PathBuf)> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    entries.sort();
    let mut h = Sha256::new();
    for (name, p) in entries {
        let kind = if p.is_dir() { "tree" } else { "blob" };
        h.update(format!("{kind} {name} {}\n", content_hash(&p)?).as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

/// A file or directory inside the run directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn hash(run_dir: &Path, rel: &str) -> Result<Self> {
        Ok(Self {
            path: rel.to_string(),
            sha256: content_hash(&run_dir.join(rel))?,
        })
    }

    pub fn verify(&self, run_dir: &Path) -> bool {
        content_hash(&run_dir.join(&self.path)).is_ok_and(|h| h == self.sha256)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// Wall-clock time of the stage.
    pub seconds: f64,
    pub error: Option<String>,
}

impl StageRecord {
    /// Completed, and every input and output still hashes as recorded.
    pub fn is_valid(&self, run_dir: &Path) -> bool {
        self.status == StageStatus::Completed
            && self.inputs.iter().chain(&self.outputs).all(|a| a.verify(run_dir))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    /// Relative path of the metric report, once evaluation completed.
    pub report: Option<String>,
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            config_hash,
            seed,
            stages: Vec::new(),
            report: None,
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Replaces the record of the same stage, keeping pipeline order.
    pub fn record(&mut self, rec: StageRecord) {
        match self.stages.iter_mut().find(|s| s.name == rec.name) {
            Some(s) => *s = rec,
            None => self.stages.push(rec),
        }
    }

    /// Drops the named stages' records.
    pub fn invalidate(&mut self, names: &[&str]) {
        self.stages.retain(|s| !names.contains(&s.name.as_str()));
    }

    /// Every completed stage's artifacts exist and hash-verify.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for s in self.stages.iter().filter(|s| s.status == StageStatus::Completed) {
            for a in s.inputs.iter().chain(&s.outputs) {
                if !a.verify(run_dir) {
                    return Err(Error::Integrity {
                        path: run_dir.join(&a.path),
                        message: format!("artifact of stage `{}` is missing or changed", s.name),
                    });
                }
            }
        }
        if let Some(r) = &self.report {
            if !run_dir.join(r).is_file() {
                return Err(Error::Integrity {
                    path: run_dir.join(r),
                    message: "report is missing".into(),
                });
            }
        }
        Ok(())
    }

    /// Same lineage, ignoring timings.
    pub fn same_lineage(&self, other: &Self) -> bool {
        let strip = |m: &Self| {
            let mut m = m.clone();
            for s in &mut m.stages {
                s.seconds = 0.0;
            }
            m
        };
        strip(self) == strip(other)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(&run_dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_tracks_names_and_contents() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [a.path(), b.path()] {
            fs::create_dir(d.join("sub")).unwrap();
            fs::write(d.join("sub/x"), b"1").unwrap();
            fs::write(d.join("y"), b"2").unwrap();
        }
        assert_eq!(content_hash(a.path()).unwrap(), content_hash(b.path()).unwrap());
        fs::write(b.path().join("sub/x"), b"3").unwrap();
        assert_ne!(content_hash(a.path()).unwrap(), content_hash(b.path()).unwrap());
        fs::write(b.path().join("sub/x"), b"1").unwrap();
        fs::rename(b.path().join("y"), b.path().join("z")).unwrap();
        assert_ne!(content_hash(a.path()).unwrap(), content_hash(b.path()).unwrap());
    }

    #[test]
    fn verify_detects_changed_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("w.bin"), b"abc").unwrap();
        let mut m = RunManifest::new("h".into(), 1);
        m.record(StageRecord {
            name: "s".into(),
            status: StageStatus::Completed,
            inputs: vec![],
            outputs: vec![Artifact::hash(dir.path(), "w.bin").unwrap()],
            seconds: 0.5,
            error: None,
        });
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert!(back.verify(dir.path()).is_ok());
        fs::write(dir.path().join("w.bin"), b"abd").unwrap();
        assert!(matches!(back.verify(dir.path()), Err(Error::Integrity { .. })));
        fs::remove_file(dir.path().join("w.bin")).unwrap();
        assert!(!back.stages[0].is_valid(dir.path()));
    }
}
