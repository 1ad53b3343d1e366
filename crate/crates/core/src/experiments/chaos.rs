use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{require_grid, Budget, Setup, StudyReport, Table, Verdict};
use crate::dynamics::{coupled_chaos_error, coupled_chaos_errors, CouplingOptions, InitLaw, ReferenceInit};
use crate::error::{Error, Result};
use crate::metrics::{fit_rate, RatePoint};
use crate::model::{DataDistribution, Hyperparams};
use crate::rng::NoisePlan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosRateConfig {
    pub hyper: Hyperparams,
    /// Geometric grid of particle counts.
    pub ns: Vec<usize>,
    /// Number of tagged particles whose coupled distance is measured.
    pub m: usize,
    /// Size of the reference ensemble standing in for the limit law.
    pub n_ref: usize,
    pub reps: usize,
    pub init: InitLaw,
    pub reference_init: ReferenceInit,
    pub refine: u32,
    /// Also run the single-atom, Dirac-initialized case.
    pub degenerate_check: bool,
    pub budget_seconds: Option<f64>,
}

impl Default for ChaosRateConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            ns: vec![32, 64, 128, 256, 512],
            m: 4,
            n_ref: 4096,
            reps: 20,
            init: InitLaw::default(),
            reference_init: ReferenceInit::default(),
            refine: 1,
            degenerate_check: true,
            budget_seconds: None,
        }
    }
}

/// Exponent of the slowest term of the particle-count bound.
pub(crate) fn rate_exponent(hyper: &Hyperparams) -> f64 {
    if hyper.beta == 1.0 {
        1.0
    } else {
        ((1.0 - hyper.beta) / (1.0 - hyper.alpha)).min(1.0)
    }
}

/// The two terms `N^{-(1-beta)/(1-alpha)} / M` and `1 / N`; the first
/// vanishes in the `beta = 1` regime.
fn bound_terms(hyper: &Hyperparams, n: usize) -> (f64, f64) {
    let n = n as f64;
    let noise = if hyper.beta == 1.0 {
        0.0
    } else {
        n.powf(-(1.0 - hyper.beta) / (1.0 - hyper.alpha)) / hyper.batch as f64
    };
    (noise, 1.0 / n)
}

fn check_geometric(ns: &[usize]) -> Result<()> {
    let ratio = ns[1] as f64 / ns[0] as f64;
    if ns.windows(2).any(|w| ((w[1] as f64 / w[0] as f64) / ratio - 1.0).abs() > 0.01) {
        return Err(Error::Config {
            field: "ns".into(),
            message: format!("particle counts {ns:?} are not geometrically spaced"),
        });
    }
    Ok(())
}

/// Coupled chaos error over a particle grid, with rate and bound verdicts.
///
/// Verdicts:
/// - `slope`: fitted log-log slope at most `-0.7 e`, with `e` the exponent
///   of the slowest bound term;
/// - `decay`: `error(N_max) <= error(N_min) / (N_max / N_min)^{0.75 e}`;
/// - `bound`: `error(N) <= C bound(N)` on the grid, with `C` calibrated at
///   the smallest `N` from the upper confidence value there times the
///   largest factor by which either bound term's share can grow;
/// - `degenerate`: single-atom data with a Dirac start stays within
///   `10 dt^2` of its companion.
pub fn chaos_rate_study(setup: &Setup, config: &ChaosRateConfig, seed: u64) -> Result<StudyReport> {
    let budget = Budget::start(config.budget_seconds);
    let hyper = &config.hyper;
    hyper.validate()?;
    require_grid("ns", &config.ns, 4)?;
    check_geometric(&config.ns)?;
    let mut report = StudyReport::new("chaos-rate", seed, config)?;
    let plan = NoisePlan::new(seed);
    let opts = CouplingOptions {
        init: config.init.clone(),
        reference_init: config.reference_init,
        refine: config.refine,
    };
    let estimates = coupled_chaos_errors(
        &setup.model,
        &setup.pi,
        hyper,
        &config.ns,
        config.m,
        config.n_ref,
        config.reps,
        &plan,
        &opts,
    )?;

    let n0 = config.ns[0];
    let bound = |n: usize| {
        let (a, b) = bound_terms(hyper, n);
        a + b
    };
    let (a0, b0) = bound_terms(hyper, n0);
    let share_growth = config
        .ns
        .iter()
        .map(|&n| {
            let (a, b) = bound_terms(hyper, n);
            let total = a + b;
            let first = if a0 > 0.0 { (a / total) / (a0 / bound(n0)) } else { 0.0 };
            first.max((b / total) / (b0 / bound(n0)))
        })
        .fold(1.0, f64::max);
    let e0 = &estimates[0];
    let constant = (e0.mean + 2.0 * e0.stderr) / bound(n0) * share_growth;

    let mut table = Table::new("errors", &["n", "mean", "stderr", "bound", "ratio_to_bound", "reference_bias"]);
    for est in &estimates {
        table.push(vec![
            est.n as f64,
            est.mean,
            est.stderr,
            bound(est.n),
            est.mean / (constant * bound(est.n)),
            est.reference_bias,
        ]);
    }
    let mut reps = Table::new("per_rep", &["n", "rep", "error"]);
    for est in &estimates {
        for (r, v) in est.per_rep.iter().enumerate() {
            reps.push(vec![est.n as f64, r as f64, *v]);
        }
    }

    let e = rate_exponent(hyper);
    let points: Vec<RatePoint> = estimates
        .iter()
        .map(|est| RatePoint {
            n: est.n as f64,
            error: est.mean,
            stderr: est.stderr,
        })
        .collect();
    match fit_rate(&points) {
        Ok(fit) => {
            let mut t = Table::new("fit", &["slope", "intercept", "r2", "exponent"]);
            t.push(vec![fit.slope, fit.intercept, fit.r2, e]);
            report.tables.push(t);
            report.verdicts.push(Verdict::at_most("slope", fit.slope, -0.7 * e));
        }
        Err(err) => report
            .verdicts
            .push(Verdict::at_most("slope", f64::NAN, -0.7 * e).with_note(err.to_string())),
    }
    let last = estimates.last().expect("grid has at least four sizes");
    let span = last.n as f64 / n0 as f64;
    report
        .verdicts
        .push(Verdict::at_most("decay", last.mean / e0.mean, span.powf(-0.75 * e)));
    let worst = table
        .column("ratio_to_bound")
        .expect("column exists")
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    report.verdicts.push(Verdict::at_most("bound", worst, 1.0));
    report.tables.push(table);
    report.tables.push(reps);

    if config.degenerate_check {
        let atom = &setup.pi.atoms()[0];
        let single = DataDistribution::dirac(atom.x.clone(), atom.y);
        let start = match &config.init {
            InitLaw::Dirac { at } => at.clone(),
            InitLaw::Uniform { .. } => vec![0.0; setup.model.p()],
        };
        let degenerate = CouplingOptions {
            init: InitLaw::Dirac { at: start },
            ..opts
        };
        let est = coupled_chaos_error(&setup.model, &single, hyper, n0, config.m, n0, 2, &plan.child(1), &degenerate)?;
        let (_, dt) = hyper.time_grid();
        report.verdicts.push(Verdict::at_most("degenerate", est.mean, 10.0 * dt * dt));
    }
    budget.finish(&mut report);
    Ok(report)
}
