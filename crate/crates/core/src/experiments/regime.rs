use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{mean_stderr, require_grid, sample_sd, Budget, Setup, StudyReport, Table, Verdict};
use crate::dynamics::{msgld_run, sgd_run, EngineOptions, InitLaw, InitialState, SnapshotPolicy};
use crate::error::{Error, Result};
use crate::model::Hyperparams;
use crate::rng::NoisePlan;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeEngine {
    #[default]
    Sgd,
    Msgld,
}

/// Scalar summary of the ensemble at the horizon.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// Mean over particles of one coordinate.
    #[default]
    EnsembleMean,
    /// One coordinate of particle 0.
    FirstParticle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeConfig {
    pub hyper: Hyperparams,
    pub betas: Vec<f64>,
    pub ns: Vec<usize>,
    pub seeds: usize,
    pub init: InitLaw,
    pub engine: RegimeEngine,
    pub statistic: Statistic,
    pub coordinate: usize,
    /// Largest admissible `dev(beta < 1) / dev(beta = 1)` at the largest `N`.
    pub ratio_threshold: f64,
    /// Largest admissible relative change of the `beta = 1` deviation
    /// between the two largest `N`.
    pub stability_tolerance: f64,
    pub budget_seconds: Option<f64>,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            betas: vec![0.75, 1.0],
            ns: vec![1024, 4096, 16384, 65536],
            seeds: 16,
            init: InitLaw::Dirac { at: vec![0.5] },
            engine: RegimeEngine::Sgd,
            statistic: Statistic::EnsembleMean,
            coordinate: 0,
            ratio_threshold: 0.3,
            stability_tolerance: 0.5,
            budget_seconds: None,
        }
    }
}

fn label(beta: f64) -> String {
    format!("beta_{beta}")
}

/// Across-seed spread of a scalar summary at the horizon, per `(beta, N)`.
///
/// Every particle starts at the same point, so all randomness comes from
/// the data draws (and the Langevin noise for mSGLD). Seed `r` drives the
/// same noise streams at every `N` and `beta`.
///
/// Verdicts: `shrink_beta_<b>` for each `b < 1` (deviation at the largest
/// `N` no larger than at the smallest), `stable` for `beta = 1` (relative
/// change between the two largest `N`), and `ratio_beta_<b>` comparing each
/// `b < 1` with `beta = 1` at the largest `N`.
pub fn two_regime_study(setup: &Setup, config: &RegimeConfig, seed: u64) -> Result<StudyReport> {
    let budget = Budget::start(config.budget_seconds);
    let p = setup.model.p();
    if !matches!(config.init, InitLaw::Dirac { .. }) {
        return Err(Error::Config {
            field: "init".into(),
            message: "the two-regime study starts every particle at one point (mode \"dirac\")".into(),
        });
    }
    config.init.validate(p)?;
    if config.seeds < 2 {
        return Err(Error::Config {
            field: "seeds".into(),
            message: format!("an across-seed deviation needs at least 2 seeds, got {}", config.seeds),
        });
    }
    if config.coordinate >= p {
        return Err(Error::Config {
            field: "coordinate".into(),
            message: format!("coordinate {} is out of range for p = {p}", config.coordinate),
        });
    }
    if config.betas.is_empty() {
        return Err(Error::Config {
            field: "betas".into(),
            message: "needs at least one beta".into(),
        });
    }
    require_grid("ns", &config.ns, 1)?;
    for &beta in &config.betas {
        Hyperparams { beta, ..config.hyper }.validate()?;
    }
    let mut report = StudyReport::new("regime", seed, config)?;
    if config.seeds < 8 {
        report
            .warnings
            .push(format!("{} seeds give a coarse deviation estimate; 8 or more are advised", config.seeds));
    }
    let plan = NoisePlan::new(seed);
    let opts = EngineOptions {
        snapshots: SnapshotPolicy::Times(Vec::new()),
        ..EngineOptions::default()
    };

    let mut samples = Table::new("samples", &["beta", "n", "seed", "value"]);
    let mut deviation = Table::new("deviation", &["beta", "n", "mean", "sd"]);
    let mut sd_at = Vec::new();
    for &beta in &config.betas {
        let hyper = Hyperparams { beta, ..config.hyper };
        let mut sds = Vec::new();
        for &n in &config.ns {
            let values: Vec<f64> = (0..config.seeds)
                .into_par_iter()
                .map(|r| -> Result<f64> {
                    let rep = plan.child(r as u64);
                    let init = InitialState::sample(&config.init, p, n, 0, &rep)?;
                    let traj = match config.engine {
                        RegimeEngine::Sgd => sgd_run(&setup.model, &setup.pi, &hyper, &init, &rep, &opts)?,
                        RegimeEngine::Msgld => msgld_run(&setup.model, &setup.pi, &hyper, &init, &rep, &opts)?,
                    };
                    let coords = traj.endpoint_coordinate(config.coordinate);
                    Ok(match config.statistic {
                        Statistic::EnsembleMean => coords.iter().sum::<f64>() / n as f64,
                        Statistic::FirstParticle => coords[0],
                    })
                })
                .collect::<Result<_>>()?;
            for (r, v) in values.iter().enumerate() {
                samples.push(vec![beta, n as f64, r as f64, *v]);
            }
            let sd = sample_sd(&values);
            deviation.push(vec![beta, n as f64, mean_stderr(&values).0, sd]);
            sds.push(sd);
        }
        sd_at.push((beta, sds));
    }

    let critical = sd_at.iter().find(|(b, _)| *b == 1.0).map(|(_, s)| s.clone());
    for (beta, sds) in &sd_at {
        let first = sds[0];
        let last = *sds.last().expect("grid is nonempty");
        if *beta < 1.0 {
            let name = format!("shrink_{}", label(*beta));
            report.verdicts.push(if config.ns.len() < 2 {
                Verdict::not_applicable(&name, "single particle count")
            } else if first == 0.0 {
                Verdict::not_applicable(&name, "no deviation at the smallest N")
            } else {
                Verdict::at_most(&name, last / first, 1.0)
            });
            let name = format!("ratio_{}", label(*beta));
            report.verdicts.push(match &critical {
                None => Verdict::not_applicable(&name, "beta = 1 is not in the grid"),
                Some(c) if *c.last().expect("nonempty") == 0.0 => {
                    Verdict::not_applicable(&name, "no deviation at beta = 1")
                }
                Some(c) => Verdict::at_most(&name, last / c.last().expect("nonempty"), config.ratio_threshold),
            });
        } else {
            let k = sds.len();
            report.verdicts.push(if k < 2 {
                Verdict::not_applicable("stable", "single particle count")
            } else if sds[k - 2] == 0.0 {
                Verdict::not_applicable("stable", "no deviation at beta = 1")
            } else {
                Verdict::at_most("stable", (sds[k - 1] - sds[k - 2]).abs() / sds[k - 2], config.stability_tolerance)
            });
        }
    }
    report.tables.push(deviation);
    report.tables.push(samples);
    budget.finish(&mut report);
    Ok(report)
}
