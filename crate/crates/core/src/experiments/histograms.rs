use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{require_grid, Budget, Setup, StudyReport, Table, Verdict};
use crate::dynamics::{sgd_run, sgd_sde_gap, EngineOptions, GapOptions, InitLaw, InitialState, SnapshotPolicy};
use crate::error::{Error, Result};
use crate::metrics::{w2_quantile, Histogram};
use crate::model::Hyperparams;
use crate::rng::NoisePlan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramConfig {
    pub hyper: Hyperparams,
    pub betas: Vec<f64>,
    pub ns: Vec<usize>,
    /// Runs pooled into each endpoint law.
    pub reps: usize,
    pub bins: usize,
    /// Histogram window; by default the pooled sample range.
    pub range: Option<[f64; 2]>,
    pub coordinate: usize,
    pub init: InitLaw,
    pub budget_seconds: Option<f64>,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            betas: vec![0.5, 0.75, 1.0],
            ns: vec![256, 1024, 4096],
            reps: 4,
            bins: 50,
            range: None,
            coordinate: 0,
            init: InitLaw::default(),
            budget_seconds: None,
        }
    }
}

fn label(beta: f64) -> String {
    format!("beta_{beta}")
}

/// Endpoint histograms of SGD per `(beta, N)`, pooled over repetitions.
///
/// Verdicts: `consecutive_<beta>` (W2 between the laws at consecutive grid
/// sizes never increases) and, when the grid holds two `beta < 1` and
/// `beta = 1`, `two_regimes`: the ratio of the distance between the two
/// `beta < 1` limits to the distance from the larger one to `beta = 1`,
/// at most one.
pub fn histogram_convergence_study(setup: &Setup, config: &HistogramConfig, seed: u64) -> Result<StudyReport> {
    let budget = Budget::start(config.budget_seconds);
    require_grid("ns", &config.ns, 3)?;
    let p = setup.model.p();
    if config.coordinate >= p {
        return Err(Error::Config {
            field: "coordinate".into(),
            message: format!("coordinate {} is out of range for p = {p}", config.coordinate),
        });
    }
    if config.reps == 0 || config.bins == 0 || config.betas.is_empty() {
        return Err(Error::Config {
            field: "reps".into(),
            message: "needs at least one beta, repetition and bin".into(),
        });
    }
    for &beta in &config.betas {
        Hyperparams { beta, ..config.hyper }.validate()?;
    }
    let mut report = StudyReport::new("histograms", seed, config)?;
    let plan = NoisePlan::new(seed);
    let opts = EngineOptions {
        snapshots: SnapshotPolicy::Times(Vec::new()),
        ..EngineOptions::default()
    };

    let mut laws: Vec<(f64, usize, Vec<f64>)> = Vec::new();
    for &beta in &config.betas {
        let hyper = Hyperparams { beta, ..config.hyper };
        for &n in &config.ns {
            let pooled: Vec<Vec<f64>> = (0..config.reps)
                .into_par_iter()
                .map(|r| -> Result<Vec<f64>> {
                    let rep = plan.child(r as u64);
                    let init = InitialState::sample(&config.init, p, n, 0, &rep)?;
                    Ok(sgd_run(&setup.model, &setup.pi, &hyper, &init, &rep, &opts)?.endpoint_coordinate(config.coordinate))
                })
                .collect::<Result<_>>()?;
            laws.push((beta, n, pooled.concat()));
        }
    }

    let [lo, hi] = config.range.unwrap_or_else(|| {
        let all = laws.iter().flat_map(|l| l.2.iter().copied());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let pad = 0.01 * (hi - lo).max(1e-12);
        [lo - pad, hi + pad]
    });
    for (beta, n, samples) in &laws {
        let hist = Histogram::new(samples, lo, hi, config.bins)?;
        let mut table = Table::new(&format!("hist_{}_n{n}", label(*beta)), &["bin_left", "bin_right", "count", "density"]);
        for ((e, c), d) in hist.edges.windows(2).zip(&hist.counts).zip(hist.density()) {
            table.push(vec![e[0], e[1], *c as f64, d]);
        }
        report.tables.push(table);
    }

    let mut consecutive = Table::new("consecutive", &["beta", "n", "n_next", "w2"]);
    for &beta in &config.betas {
        let rows: Vec<&(f64, usize, Vec<f64>)> = laws.iter().filter(|l| l.0 == beta).collect();
        let mut dists = Vec::new();
        for w in rows.windows(2) {
            let d = w2_quantile(&w[0].2, &w[1].2)?;
            consecutive.push(vec![beta, w[0].1 as f64, w[1].1 as f64, d]);
            dists.push(d);
        }
        let rise = dists.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        report
            .verdicts
            .push(Verdict::at_most(&format!("consecutive_{}", label(beta)), rise, 0.0));
    }
    report.tables.push(consecutive);

    let limit = |beta: f64| laws.iter().rev().find(|l| l.0 == beta).map(|l| &l.2);
    let mut below: Vec<f64> = config.betas.iter().copied().filter(|b| *b < 1.0).collect();
    below.sort_by(f64::total_cmp);
    match (below.len() >= 2, limit(1.0)) {
        (true, Some(critical)) => {
            let a = limit(below[below.len() - 2]).expect("beta is in the grid");
            let b = limit(below[below.len() - 1]).expect("beta is in the grid");
            let within = w2_quantile(a, b)?;
            let across = w2_quantile(b, critical)?;
            let mut t = Table::new("limits", &["beta_a", "beta_b", "w2"]);
            t.push(vec![below[below.len() - 2], below[below.len() - 1], within]);
            t.push(vec![below[below.len() - 1], 1.0, across]);
            report.tables.push(t);
            report.verdicts.push(Verdict::at_most("two_regimes", within / across, 1.0));
        }
        _ => report
            .verdicts
            .push(Verdict::not_applicable("two_regimes", "needs two betas below 1 and beta = 1")),
    }
    budget.finish(&mut report);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ConsistencyConfig {
    pub hyper: Hyperparams,
    pub ns: Vec<usize>,
    pub reps: usize,
    pub groups: usize,
    pub init: InitLaw,
    /// Required shrink factor of the gap per grid step.
    pub factor: f64,
    pub budget_seconds: Option<f64>,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            ns: vec![16, 64, 256],
            reps: 8,
            groups: 4,
            init: InitLaw::default(),
            factor: 0.7,
            budget_seconds: None,
        }
    }
}

/// SGD-to-diffusion endpoint gap across a particle grid.
///
/// Verdict `decreasing`: every grid step satisfies
/// `gap(next) <= factor gap(prev) + 2 stderr(next)`; the measured value is
/// the largest excess over that allowance.
pub fn sgd_sde_consistency_study(setup: &Setup, config: &ConsistencyConfig, seed: u64) -> Result<StudyReport> {
    let budget = Budget::start(config.budget_seconds);
    require_grid("ns", &config.ns, 2)?;
    config.hyper.validate()?;
    let mut report = StudyReport::new("consistency", seed, config)?;
    let plan = NoisePlan::new(seed);
    let opts = GapOptions {
        init: config.init.clone(),
        reps: config.reps,
        groups: config.groups,
    };
    let mut table = Table::new("gap", &["n", "gap", "stderr"]);
    let mut gaps = Vec::new();
    for (i, &n) in config.ns.iter().enumerate() {
        let est = sgd_sde_gap(&setup.model, &setup.pi, &config.hyper, n, &plan.child(i as u64), &opts)?;
        table.push(vec![n as f64, est.value, est.stderr]);
        gaps.push(est);
    }
    let excess = gaps
        .windows(2)
        .map(|w| w[1].value - config.factor * w[0].value - 2.0 * w[1].stderr)
        .fold(f64::NEG_INFINITY, f64::max);
    report.verdicts.push(Verdict::at_most("decreasing", excess, 0.0));
    report.tables.push(table);
    budget.finish(&mut report);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_tables_cover_every_sample() {
        let setup = Setup::synthetic(1).unwrap();
        let config = HistogramConfig {
            hyper: Hyperparams {
                horizon: 1.0,
                ..Hyperparams::default()
            },
            betas: vec![0.5, 1.0],
            ns: vec![8, 16, 32],
            reps: 2,
            bins: 10,
            ..HistogramConfig::default()
        };
        let report = histogram_convergence_study(&setup, &config, 3).unwrap();
        let t = report.table("hist_beta_1_n16").unwrap();
        assert_eq!(t.columns, ["bin_left", "bin_right", "count", "density"]);
        assert_eq!(t.column("count").unwrap().iter().sum::<f64>(), 32.0);
        assert_eq!(report.verdict("two_regimes").unwrap().status, crate::experiments::Status::NotApplicable);
    }

    #[test]
    fn consistency_grid_must_grow() {
        let setup = Setup::synthetic(1).unwrap();
        let config = ConsistencyConfig {
            ns: vec![64, 16],
            ..ConsistencyConfig::default()
        };
        assert!(matches!(sgd_sde_consistency_study(&setup, &config, 0), Err(Error::Config { .. })));
    }
}
