use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{write_atomic, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::Setup;
use crate::model::Hyperparams;

/// Stepsize scale and SGD iteration count at one particle count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepScale {
    pub n: usize,
    pub gamma_scale: f64,
    pub sgd_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedValues {
    pub scales: Vec<StepScale>,
    pub solver_steps: usize,
    pub solver_dt: f64,
    pub data_dim: usize,
    pub param_dim: usize,
    pub x_max: f64,
}

impl DerivedValues {
    pub fn new(setup: &Setup, hyper: &Hyperparams, ns: &[usize]) -> Result<Self> {
        let scales = ns
            .iter()
            .map(|&n| {
                Ok(StepScale {
                    n,
                    gamma_scale: hyper.gamma_scale(n)?,
                    sgd_iterations: hyper.sgd_iterations(n)?,
                })
            })
            .collect::<Result<_>>()?;
        let (solver_steps, solver_dt) = hyper.time_grid();
        Ok(Self {
            scales,
            solver_steps,
            solver_dt,
            data_dim: setup.pi.dim(),
            param_dim: setup.model.p(),
            x_max: setup.pi.x_max(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory.
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

/// Provenance of one run; its config and seed replay the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub version: String,
    pub git: Option<String>,
    pub started: String,
    pub finished: String,
    pub derived: Option<DerivedValues>,
    pub files: Vec<FileEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = std::fs::read(path)?;
    let hex = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    Ok((bytes.len() as u64, hex))
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    /// Checksums `files` (inside `dir`) and writes `manifest.json` atomically.
    pub fn finish(mut self, dir: &Path, files: &[PathBuf]) -> Result<Self> {
        self.finished = now_rfc3339();
        self.files = files
            .iter()
            .map(|f| {
                let (bytes, sha256) = sha256_file(f)?;
                let path = f.strip_prefix(dir).unwrap_or(f).to_path_buf();
                Ok(FileEntry { path, bytes, sha256 })
            })
            .collect::<Result<_>>()?;
        write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&self)?)?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Recomputes every listed checksum against the files in `dir`.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for entry in &self.files {
            let path = dir.join(&entry.path);
            let (bytes, sha256) = sha256_file(&path)?;
            if bytes != entry.bytes || sha256 != entry.sha256 {
                return Err(Error::Checksum(path));
            }
        }
        Ok(())
    }
}

/// `git describe` of the working directory, when available.
pub fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_owned())
        .filter(|s| !s.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_checksums_match_and_detect_edits() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("table.csv");
        std::fs::write(&file, "n,value\n1,0.5\n").unwrap();
        let setup = Setup::synthetic(1).unwrap();
        let manifest = RunManifest {
            command: "simulate".into(),
            config: RunConfig::default(),
            seed: 3,
            version: env!("CARGO_PKG_VERSION").into(),
            git: None,
            started: now_rfc3339(),
            finished: String::new(),
            derived: Some(DerivedValues::new(&setup, &Hyperparams::default(), &[4, 16]).unwrap()),
            files: Vec::new(),
        }
        .finish(dir.path(), &[file.clone()])
        .unwrap();
        assert_eq!(manifest.files[0].path, PathBuf::from("table.csv"));
        assert_eq!(manifest.derived.as_ref().unwrap().scales[1].sgd_iterations, 5);
        let back = RunManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, manifest);
        back.verify(dir.path()).unwrap();
        std::fs::write(&file, "n,value\n1,0.6\n").unwrap();
        assert!(matches!(back.verify(dir.path()), Err(Error::Checksum(_))));
    }
}
