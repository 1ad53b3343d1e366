use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sde::{meanfield_noise_scale, Euler};
use super::{DiffusionMode, InitLaw, InitialState, REFERENCE_ID_BASE};
use crate::error::{Error, Result};
use crate::meanfield::FieldCache;
use crate::model::{DataDistribution, Hyperparams, ModelSpec};
use crate::rng::NoisePlan;

/// How the reference ensemble's initial positions are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceInit {
    /// Deterministic low-discrepancy sample of the initial law.
    #[default]
    Stratified,
    /// Independent draws with ids disjoint from the test system.
    Iid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingOptions {
    pub init: InitLaw,
    pub reference_init: ReferenceInit,
    pub refine: u32,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            init: InitLaw::default(),
            reference_init: ReferenceInit::default(),
            refine: 1,
        }
    }
}

/// Monte Carlo estimate of `E[sup_t sum_{k<=m} |W^k_t - W^{k,*}_t|^2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosEstimate {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub per_rep: Vec<f64>,
    /// Size of the error a reference of `N_ref` particles carries itself,
    /// extrapolated from this estimate with the `1/N` rate.
    pub reference_bias: f64,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Coupled chaos error for one particle count.
#[allow(clippy::too_many_arguments)]
pub fn coupled_chaos_error(
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    n: usize,
    m: usize,
    n_ref: usize,
    reps: usize,
    plan: &NoisePlan,
    opts: &CouplingOptions,
) -> Result<ChaosEstimate> {
    Ok(coupled_chaos_errors(model, pi, hyper, &[n], m, n_ref, reps, plan, opts)?.remove(0))
}

/// Coupled chaos errors over a grid of particle counts.
///
/// Each repetition evolves one reference ensemble (ids disjoint from the
/// test system) and reuses its per-step law for every `N`. For each `N`,
/// test particles `0..N` follow the interacting diffusion and companions
/// `0..m` follow the limit dynamics against the reference law, sharing the
/// test particles' initial positions and Gaussian draws. Repetition `r`
/// uses the same seed for every `N`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_chaos_errors(
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    ns: &[usize],
    m: usize,
    n_ref: usize,
    reps: usize,
    plan: &NoisePlan,
    opts: &CouplingOptions,
) -> Result<Vec<ChaosEstimate>> {
    hyper.validate()?;
    model.check_data(pi)?;
    let p = model.p();
    opts.init.validate(p)?;
    if ns.is_empty() || reps == 0 || m == 0 {
        return Err(Error::Precondition("coupling needs a particle grid, m >= 1 and reps >= 1".into()));
    }
    let n_min = *ns.iter().min().expect("nonempty");
    let n_max = *ns.iter().max().expect("nonempty");
    if m > n_min {
        return Err(Error::Precondition(format!("m = {m} exceeds the smallest particle count {n_min}")));
    }
    if n_ref < n_max {
        return Err(Error::Precondition(format!(
            "reference size {n_ref} must be at least the largest particle count {n_max}"
        )));
    }
    if opts.refine == 0 {
        return Err(Error::Domain("Brownian refinement must be at least 1".into()));
    }

    let limit_scale = if hyper.beta == 1.0 { meanfield_noise_scale(hyper)? } else { 0.0 };
    fn limit<'a>(
        model: &'a ModelSpec,
        pi: &'a DataDistribution,
        plan: &'a NoisePlan,
        hyper: &Hyperparams,
        noise_scale: f64,
        refine: u32,
    ) -> Euler<'a> {
        Euler {
            model,
            pi,
            plan,
            alpha: hyper.alpha,
            eta: hyper.eta,
            noise_scale,
            diffusion: DiffusionMode::Field,
            refine,
        }
    }
    let (steps, dt) = hyper.time_grid();
    let deterministic_reference =
        limit_scale == 0.0 && hyper.eta == 0.0 && opts.reference_init == ReferenceInit::Stratified;

    let reference_caches = |rep_plan: &NoisePlan| -> Result<Vec<FieldCache>> {
        let ids: Vec<u64> = (0..n_ref as u64).map(|k| REFERENCE_ID_BASE + k).collect();
        let mut positions = match opts.reference_init {
            ReferenceInit::Stratified => opts.init.stratified(p, n_ref),
            ReferenceInit::Iid => InitialState::sample_ids(&opts.init, p, ids.clone(), rep_plan)?.positions,
        };
        let euler = limit(model, pi, rep_plan, hyper, limit_scale, opts.refine);
        let mut caches = Vec::with_capacity(steps + 1);
        for n in 0..steps {
            let cache = euler.cache(&positions);
            euler.step(&mut positions, &ids, &cache, n, n as f64 * dt, dt)?;
            caches.push(cache);
        }
        caches.push(euler.cache(&positions));
        Ok(caches)
    };
    let shared = if deterministic_reference {
        Some(reference_caches(plan)?)
    } else {
        None
    };

    let run_rep = |r: usize| -> Result<Vec<f64>> {
        let rep_plan = plan.child(r as u64);
        let owned;
        let caches = match &shared {
            Some(c) => c,
            None => {
                owned = reference_caches(&rep_plan)?;
                &owned
            }
        };
        let companion = limit(model, pi, &rep_plan, hyper, limit_scale, opts.refine);
        let mut out = Vec::with_capacity(ns.len());
        for &n in ns {
            let test = limit(model, pi, &rep_plan, hyper, hyper.gamma_scale(n)? / hyper.batch as f64, opts.refine);
            let init = InitialState::sample(&opts.init, p, n, 0, &rep_plan)?;
            let mut positions = init.positions.clone();
            let mut comp = init.positions[..m * p].to_vec();
            let comp_ids = &init.ids[..m];
            let mut sup: f64 = 0.0;
            for step in 0..steps {
                let t = step as f64 * dt;
                let cache = test.cache(&positions);
                test.step(&mut positions, &init.ids, &cache, step, t, dt)?;
                companion.step(&mut comp, comp_ids, &caches[step], step, t, dt)?;
                let d: f64 = comp.iter().zip(&positions[..m * p]).map(|(a, b)| (a - b) * (a - b)).sum();
                sup = sup.max(d);
            }
            out.push(sup);
        }
        Ok(out)
    };
    let per_rep: Vec<Vec<f64>> = (0..reps).into_par_iter().map(run_rep).collect::<Result<_>>()?;

    Ok(ns
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let values: Vec<f64> = per_rep.iter().map(|r| r[i]).collect();
            let (mean, stderr) = mean_stderr(&values);
            ChaosEstimate {
                n,
                mean,
                stderr,
                per_rep: values,
                reference_bias: mean * n as f64 / n_ref as f64,
            }
        })
        .collect())
}
