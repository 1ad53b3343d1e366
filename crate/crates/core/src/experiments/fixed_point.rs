use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{Budget, Setup, StudyReport, Table, Verdict};
use crate::error::{Error, Result};
use crate::model::Hyperparams;
use crate::rng::NoisePlan;
use crate::stationary::{fixed_point_iterate, stationarity_check, GridDensity1D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct StationaryConfig {
    pub hyper: Hyperparams,
    /// Constant gradient-noise covariance replacing the field one.
    pub sigma_override: Option<f64>,
    /// Initial density window and resolution.
    pub lo: f64,
    pub hi: f64,
    pub n_cells: usize,
    /// Gaussian initial guess.
    pub initial_mean: f64,
    pub initial_variance: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// Particles of the stationarity check; 0 skips it.
    pub n_ref: usize,
    pub check_horizon: f64,
    pub drift_tolerance: f64,
    pub budget_seconds: Option<f64>,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams {
                eta: 0.1,
                ..Hyperparams::default()
            },
            sigma_override: None,
            lo: -4.0,
            hi: 4.0,
            n_cells: 2048,
            initial_mean: 0.0,
            initial_variance: 1.0,
            tol: 1e-8,
            max_iter: 400,
            damping: 0.2,
            n_ref: 4096,
            check_horizon: 5.0,
            drift_tolerance: 0.05,
            budget_seconds: None,
        }
    }
}

/// Fixed point of the invariant-density map on a 1-D model, then a
/// simulation check that the law it returns does not move.
///
/// Verdicts: `converged` (final residual at most `tol`) and `stationary`:
/// the W2 drift over `check_horizon` exceeds the W2 between the initial
/// samples and the density by at most `drift_tolerance`.
pub fn stationary_study(setup: &Setup, config: &StationaryConfig, seed: u64) -> Result<StudyReport> {
    let budget = Budget::start(config.budget_seconds);
    config.hyper.validate()?;
    if !(config.lo < 0.0 && config.hi > 0.0) || config.n_cells < 2 {
        return Err(Error::Config {
            field: "lo".into(),
            message: format!(
                "window [{}, {}] must contain 0 and hold at least 2 cells",
                config.lo, config.hi
            ),
        });
    }
    let mut report = StudyReport::new("stationary", seed, config)?;
    let mu0 = GridDensity1D::gaussian(
        config.initial_mean,
        config.initial_variance,
        config.lo,
        config.hi,
        config.n_cells,
    )?;
    let fp = fixed_point_iterate(
        &mu0,
        &setup.model,
        &setup.pi,
        &config.hyper,
        config.sigma_override,
        config.tol,
        config.max_iter,
        config.damping,
    )?;

    let mut density = Table::new("density", &["w", "density"]);
    for (w, v) in fp.density.centers().into_iter().zip(&fp.density.values) {
        density.push(vec![w, *v]);
    }
    let mut history = Table::new("history", &["iteration", "residual"]);
    for (i, r) in fp.history.iter().enumerate() {
        history.push(vec![(i + 1) as f64, *r]);
    }
    let converged = Verdict::at_most("converged", fp.residual, config.tol);
    report.verdicts.push(match fp.cycle {
        Some(period) => converged.with_note(format!("iterates cycle with period {period}")),
        None => converged,
    });

    if config.n_ref == 0 {
        report
            .verdicts
            .push(Verdict::not_applicable("stationary", "stationarity check disabled"));
    } else {
        let check = stationarity_check(
            &fp.density,
            &setup.model,
            &setup.pi,
            &config.hyper,
            config.sigma_override,
            config.n_ref,
            config.check_horizon,
            &NoisePlan::new(seed),
        )?;
        let mut t = Table::new("stationarity", &["baseline", "drift"]);
        t.push(vec![check.baseline, check.drift]);
        report.tables.push(t);
        report.verdicts.push(
            Verdict::at_most("stationary", check.drift, check.baseline + config.drift_tolerance)
                .with_note(format!("sampling baseline {:.3e}", check.baseline)),
        );
    }
    report.tables.push(density);
    report.tables.push(history);
    budget.finish(&mut report);
    Ok(report)
}
