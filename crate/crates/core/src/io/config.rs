use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::dataset::load_dataset;
use crate::dynamics::{DiffusionMode, InitLaw, Kind, SnapshotPolicy};
use crate::error::{Error, Result};
use crate::experiments::{
    ChaosRateConfig, ConsistencyConfig, HistogramConfig, RegimeConfig, Setup, StationaryConfig, SweepConfig,
};
use crate::model::{DataAtom, DataDistribution, Hyperparams, ModelSpec};

/// Everything a command needs; each command reads its own section.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub seed: u64,
    /// Output root; run directories are created beneath it.
    pub out: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    pub workers: Option<usize>,
    /// Recorded times of `simulate`, replacing `simulate.snapshots`.
    pub snapshot_times: Option<Vec<f64>>,
    pub simulate: SimulateConfig,
    pub chaos_rate: ChaosRateConfig,
    pub regime: RegimeConfig,
    pub gamma_sweep: SweepConfig,
    pub batch_sweep: SweepConfig,
    pub histograms: HistogramConfig,
    pub consistency: ConsistencyConfig,
    pub stationary: StationaryConfig,
    pub check_assumptions: AssumptionConfig,
    pub metrics: MetricsConfig,
}

/// Builtin model plus data: a CSV dataset, inline atoms, or the synthetic
/// four-atom law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `tanh-dot` or `zero`.
    pub feature: String,
    /// `square` or `logistic`.
    pub loss: String,
    /// Weight of the quadratic penalty.
    pub lambda: f64,
    pub dim: usize,
    /// CSV file, relative to the config file.
    pub dataset: Option<PathBuf>,
    pub atoms: Option<Vec<AtomConfig>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature: "tanh-dot".into(),
            loss: "square".into(),
            lambda: 0.01,
            dim: 1,
            dataset: None,
            atoms: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub x: Vec<f64>,
    pub y: f64,
    /// Relative weight; atoms are normalized. Defaults to 1.
    pub weight: Option<f64>,
}

impl ModelConfig {
    /// Resolves the model and data law; `base_dir` anchors a relative dataset path.
    pub fn build(&self, base_dir: &Path) -> Result<Setup> {
        let field = |name: &str, e: Error| match e {
            Error::Domain(message) | Error::Precondition(message) => Error::Config {
                field: format!("model.{name}"),
                message,
            },
            e @ Error::DimensionMismatch { .. } => Error::Config {
                field: format!("model.{name}"),
                message: e.to_string(),
            },
            other => other,
        };
        let model = ModelSpec::builtin(&self.feature, &self.loss, self.lambda, self.dim).map_err(|e| field("feature", e))?;
        let pi = match (&self.dataset, &self.atoms) {
            (Some(_), Some(_)) => {
                return Err(Error::Config {
                    field: "model.dataset".into(),
                    message: "give either a dataset file or inline atoms, not both".into(),
                })
            }
            (Some(path), None) => load_dataset(&base_dir.join(path))?,
            (None, Some(atoms)) => DataDistribution::normalized(
                atoms
                    .iter()
                    .map(|a| DataAtom::new(a.x.clone(), a.y, a.weight.unwrap_or(1.0)))
                    .collect(),
            )
            .map_err(|e| field("atoms", e))?,
            (None, None) => Setup::synthetic(self.dim).map_err(|e| field("dim", e))?.pi,
        };
        model.check_data(&pi).map_err(|e| field("dim", e))?;
        Ok(Setup { model, pi })
    }
}

/// Engine selectable by `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub engine: Kind,
    pub hyper: Hyperparams,
    pub n: usize,
    pub init: InitLaw,
    pub snapshots: SnapshotPolicy,
    pub diffusion: DiffusionMode,
    pub refine: u32,
    pub moment_ceiling: Option<f64>,
    /// Also export the trajectory as long-format CSV.
    pub csv: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            engine: Kind::Sgd,
            hyper: Hyperparams::default(),
            n: 256,
            init: InitLaw::default(),
            snapshots: SnapshotPolicy::default(),
            diffusion: DiffusionMode::Field,
            refine: 1,
            moment_ceiling: Some(1e12),
            csv: true,
        }
    }
}

/// Probe weights of the hypothesis audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AssumptionConfig {
    /// Explicit probes; otherwise `probe_count` lattice points in the cube
    /// of half width `probe_half_width`.
    pub probes: Option<Vec<Vec<f64>>>,
    pub probe_count: usize,
    pub probe_half_width: f64,
}

impl Default for AssumptionConfig {
    fn default() -> Self {
        Self {
            probes: None,
            probe_count: 16,
            probe_half_width: 2.0,
        }
    }
}

impl AssumptionConfig {
    pub fn probes(&self, p: usize) -> Vec<Vec<f64>> {
        match &self.probes {
            Some(probes) => probes.clone(),
            None => InitLaw::Uniform {
                half_width: self.probe_half_width,
            }
            .stratified(p, self.probe_count)
            .chunks(p)
            .map(<[f64]>::to_vec)
            .collect(),
        }
    }
}

/// Two trajectory files compared snapshot by snapshot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Paths relative to the config file.
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    }
}

impl RunConfig {
    /// Parses JSON; unknown keys and type errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config {
                field: if path == "." { String::new() } else { path },
                message: e.into_inner().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Checks every section's hyperparameters and the global fields.
    pub fn validate(&self) -> Result<()> {
        let sections: [(&str, &Hyperparams); 8] = [
            ("simulate", &self.simulate.hyper),
            ("chaos_rate", &self.chaos_rate.hyper),
            ("regime", &self.regime.hyper),
            ("gamma_sweep", &self.gamma_sweep.hyper),
            ("batch_sweep", &self.batch_sweep.hyper),
            ("histograms", &self.histograms.hyper),
            ("consistency", &self.consistency.hyper),
            ("stationary", &self.stationary.hyper),
        ];
        for (name, hyper) in sections {
            hyper.validate().map_err(|e| prefixed(&format!("{name}.hyper"), e))?;
        }
        if self.workers == Some(0) {
            return Err(Error::Config {
                field: "workers".into(),
                message: "needs at least one worker".into(),
            });
        }
        if let Some(times) = &self.snapshot_times {
            if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
                return Err(Error::Config {
                    field: "snapshot_times".into(),
                    message: format!("{times:?} must be finite nonnegative times"),
                });
            }
        }
        if self.simulate.n == 0 {
            return Err(Error::Config {
                field: "simulate.n".into(),
                message: "needs at least one particle".into(),
            });
        }
        if self.simulate.refine == 0 {
            return Err(Error::Config {
                field: "simulate.refine".into(),
                message: "refinement factor must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// JSON schema of the config file.
    pub fn schema() -> serde_json::Value {
        serde_json::to_value(schemars::schema_for!(RunConfig)).expect("schemas serialize")
    }
}

/// Re-attributes a study's config error to its section.
pub fn in_section(section: &str, e: Error) -> Error {
    prefixed(section, e)
}
