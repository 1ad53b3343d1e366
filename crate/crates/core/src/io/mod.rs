//! Configuration, datasets, trajectory files and run manifests.

pub mod config;
pub mod dataset;
pub mod manifest;
pub mod trajectory;

pub use config::{in_section, AssumptionConfig, AtomConfig, MetricsConfig, ModelConfig, RunConfig, SimulateConfig};
pub use dataset::load_dataset;
pub use manifest::{sha256_file, DerivedValues, FileEntry, RunManifest, StepScale};
pub use trajectory::{load_trajectory, save_trajectory, write_trajectory_csv};

use std::path::Path;

use crate::error::Result;

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
