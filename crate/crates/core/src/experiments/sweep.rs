use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{mean_stderr, Budget, Setup, StudyReport, Table, Verdict};
use crate::dynamics::{meanfield_ode_run, sgd_run, EngineOptions, InitLaw, InitialState, SnapshotPolicy};
use crate::error::{Error, Result};
use crate::metrics::w2_auto;
use crate::model::Hyperparams;
use crate::rng::NoisePlan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub hyper: Hyperparams,
    /// Swept values: decreasing stepsizes or increasing batch sizes.
    /// Defaults to `[1, 0.5, 0.25, 0.125]` and `[1, 4, 16, 64]`.
    pub values: Option<Vec<f64>>,
    pub n: usize,
    pub reps: usize,
    pub init: InitLaw,
    pub budget_seconds: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            values: None,
            n: 1024,
            reps: 8,
            init: InitLaw::default(),
            budget_seconds: None,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Swept {
    Gamma,
    Batch,
}

/// W2 between SGD endpoint laws and the deterministic mean-field limit as
/// the stepsize shrinks.
pub fn gamma_sweep(setup: &Setup, config: &SweepConfig, seed: u64) -> Result<StudyReport> {
    sweep(setup, config, seed, Swept::Gamma)
}

/// W2 between SGD endpoint laws and the deterministic mean-field limit as
/// the batch grows.
pub fn batch_sweep(setup: &Setup, config: &SweepConfig, seed: u64) -> Result<StudyReport> {
    sweep(setup, config, seed, Swept::Batch)
}

/// Each repetition draws one initial ensemble, runs the mean-field ODE from
/// it as the reference and SGD from it at every swept value.
///
/// Verdicts: `monotone` (no step increases by more than twice the larger
/// standard error of the pair) and `halving` (last value at most half the
/// first); both are not applicable on a single-value grid.
fn sweep(setup: &Setup, config: &SweepConfig, seed: u64, swept: Swept) -> Result<StudyReport> {
    let budget = Budget::start(config.budget_seconds);
    let (id, field) = match swept {
        Swept::Gamma => ("gamma-sweep", "values"),
        Swept::Batch => ("batch-sweep", "values"),
    };
    let values = config.values.clone().unwrap_or_else(|| match swept {
        Swept::Gamma => vec![1.0, 0.5, 0.25, 0.125],
        Swept::Batch => vec![1.0, 4.0, 16.0, 64.0],
    });
    let bad = |message: String| Error::Config {
        field: field.into(),
        message,
    };
    if values.is_empty() {
        return Err(bad("needs at least one value".into()));
    }
    match swept {
        Swept::Gamma if values.windows(2).any(|w| w[1] >= w[0]) => {
            return Err(bad(format!("stepsizes {values:?} must be strictly decreasing")))
        }
        Swept::Batch if values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) => {
            return Err(bad(format!("batch sizes {values:?} must be positive integers")))
        }
        Swept::Batch if values.windows(2).any(|w| w[1] <= w[0]) => {
            return Err(bad(format!("batch sizes {values:?} must be strictly increasing")))
        }
        _ => {}
    }
    if config.reps == 0 || config.n == 0 {
        return Err(Error::Config {
            field: "reps".into(),
            message: "needs at least one repetition of at least one particle".into(),
        });
    }
    let hypers: Vec<Hyperparams> = values
        .iter()
        .map(|&v| match swept {
            Swept::Gamma => Hyperparams { gamma: v, ..config.hyper },
            Swept::Batch => Hyperparams {
                batch: v as usize,
                ..config.hyper
            },
        })
        .collect();
    for h in &hypers {
        h.validate()?;
    }
    let mut report = StudyReport::new(id, seed, config)?;
    let p = setup.model.p();
    let plan = NoisePlan::new(seed);
    let opts = EngineOptions {
        snapshots: SnapshotPolicy::Times(Vec::new()),
        ..EngineOptions::default()
    };

    let per_rep: Vec<Vec<f64>> = (0..config.reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let rep = plan.child(r as u64);
            let init = InitialState::sample(&config.init, p, config.n, 0, &rep)?;
            let limit = meanfield_ode_run(&setup.model, &setup.pi, &config.hyper, &init, &rep, &opts)?;
            hypers
                .iter()
                .map(|h| {
                    let traj = sgd_run(&setup.model, &setup.pi, h, &init, &rep, &opts)?;
                    Ok(w2_auto(traj.endpoint(), limit.endpoint(), p, &rep)?.value)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut table = Table::new("w2", &["value", "mean", "stderr"]);
    let mut stats = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let column: Vec<f64> = per_rep.iter().map(|r| r[i]).collect();
        let (mean, se) = mean_stderr(&column);
        table.push(vec![v, mean, se]);
        stats.push((mean, se));
    }
    if values.len() < 2 {
        report.verdicts.push(Verdict::not_applicable("monotone", "single-value grid"));
        report.verdicts.push(Verdict::not_applicable("halving", "single-value grid"));
    } else {
        let excess = stats
            .windows(2)
            .map(|w| w[1].0 - w[0].0 - 2.0 * w[0].1.max(w[1].1))
            .fold(f64::NEG_INFINITY, f64::max);
        report.verdicts.push(Verdict::at_most("monotone", excess, 0.0));
        let (first, last) = (stats[0].0, stats[stats.len() - 1].0);
        report.verdicts.push(Verdict::at_most("halving", last / first, 0.5));
    }
    report.tables.push(table);
    budget.finish(&mut report);
    Ok(report)
}
