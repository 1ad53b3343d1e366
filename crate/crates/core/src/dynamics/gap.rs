use rayon::prelude::*;

use super::{interacting_sde_run, sgd_run, EngineOptions, InitLaw, InitialState, SnapshotPolicy};
use crate::error::{Error, Result};
use crate::metrics::{w2_auto, Estimate};
use crate::model::{DataDistribution, Hyperparams, ModelSpec};
use crate::rng::NoisePlan;

#[derive(Clone, Debug, PartialEq)]
pub struct GapOptions {
    pub init: InitLaw,
    /// Independent repetitions pooled into each law.
    pub reps: usize,
    /// Groups of repetitions used for the standard error.
    pub groups: usize,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            init: InitLaw::default(),
            reps: 8,
            groups: 4,
        }
    }
}

/// W2 at time `T` between the endpoint law of SGD and that of the
/// interacting diffusion, with independent noise for the two engines.
///
/// Each law is the pool of endpoint particles over `reps` repetitions; the
/// standard error comes from the spread of the same distance computed on
/// disjoint groups of repetitions.
pub fn sgd_sde_gap(
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    n: usize,
    plan: &NoisePlan,
    opts: &GapOptions,
) -> Result<Estimate> {
    if opts.reps == 0 || opts.groups == 0 || opts.groups > opts.reps {
        return Err(Error::Precondition(format!(
            "gap needs 1 <= groups <= reps, got {} groups over {} reps",
            opts.groups, opts.reps
        )));
    }
    let p = model.p();
    let engine = EngineOptions {
        snapshots: SnapshotPolicy::Times(Vec::new()),
        ..EngineOptions::default()
    };
    let ends: Vec<(Vec<f64>, Vec<f64>)> = (0..opts.reps)
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, Vec<f64>)> {
            let sgd_plan = plan.child(2 * r as u64);
            let sde_plan = plan.child(2 * r as u64 + 1);
            let sgd_init = InitialState::sample(&opts.init, p, n, 0, &sgd_plan)?;
            let sde_init = InitialState::sample(&opts.init, p, n, 0, &sde_plan)?;
            let a = sgd_run(model, pi, hyper, &sgd_init, &sgd_plan, &engine)?;
            let b = interacting_sde_run(model, pi, hyper, &sde_init, &sde_plan, &engine)?;
            Ok((a.endpoint().to_vec(), b.endpoint().to_vec()))
        })
        .collect::<Result<_>>()?;
    let pooled = |range: std::ops::Range<usize>| -> Result<f64> {
        let a: Vec<f64> = ends[range.clone()].iter().flat_map(|e| e.0.iter().copied()).collect();
        let b: Vec<f64> = ends[range].iter().flat_map(|e| e.1.iter().copied()).collect();
        Ok(w2_auto(&a, &b, p, &plan.child(u64::MAX))?.value)
    };
    let value = pooled(0..opts.reps)?;
    let stderr = if opts.groups > 1 {
        let size = opts.reps / opts.groups;
        let parts: Vec<f64> = (0..opts.groups)
            .map(|g| pooled(g * size..(g + 1) * size))
            .collect::<Result<_>>()?;
        let mean = parts.iter().sum::<f64>() / parts.len() as f64;
        let var = parts.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (parts.len() - 1) as f64;
        (var / parts.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(Estimate { value, stderr })
}
