use rayon::prelude::*;

use super::{EngineOptions, InitialState, Kind, Recorder, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::meanfield::chunked_sum;
use crate::model::{stepsize_schedule, DataDistribution, Hyperparams, ModelSpec};
use crate::rng::{NoisePlan, Stream, SHARED_ID};

const PAR_MIN: usize = 512;

/// Online SGD with `N`-dependent stepsize and batch size `M`; iteration `n`
/// is recorded at time `n * gamma_{alpha,beta}(N)`.
pub fn sgd_run(
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    init: &InitialState,
    plan: &NoisePlan,
    opts: &EngineOptions,
) -> Result<Trajectory> {
    run(Kind::Sgd, model, pi, hyper, 0.0, init, plan, opts)
}

/// SGD plus Gaussian noise of variance `2 eta` times the per-particle step.
pub fn msgld_run(
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    init: &InitialState,
    plan: &NoisePlan,
    opts: &EngineOptions,
) -> Result<Trajectory> {
    if !(hyper.eta >= 0.0) {
        return Err(Error::Domain(format!("temperature {} must be nonnegative", hyper.eta)));
    }
    run(Kind::Msgld, model, pi, hyper, hyper.eta, init, plan, opts)
}

#[allow(clippy::too_many_arguments)]
fn run(
    kind: Kind,
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    eta: f64,
    init: &InitialState,
    plan: &NoisePlan,
    opts: &EngineOptions,
) -> Result<Trajectory> {
    hyper.validate()?;
    model.check_data(pi)?;
    let p = model.p();
    check_dim("initial state dimension", p, init.p)?;
    let n = init.len();
    let step_time = hyper.gamma_scale(n)?;
    let iterations = hyper.sgd_iterations(n)?;
    if iterations == 0 {
        return Err(Error::HorizonTooShort {
            horizon: hyper.horizon,
            step: step_time,
        });
    }
    let batch = hyper.batch;
    let mut positions = init.positions.clone();
    let mut recorder = Recorder::new(&opts.snapshots, iterations, step_time, opts.moment_ceiling, p);
    recorder.observe(0, 0.0, &positions)?;

    let mut sampled = vec![0usize; batch];
    let mut derivs = vec![0.0; batch];
    for it in 0..iterations {
        for (i, s) in sampled.iter_mut().enumerate() {
            *s = pi.sample_index(plan.uniform(Stream::Data, SHARED_ID, it as u64, i));
        }
        for (i, &a) in sampled.iter().enumerate() {
            let atom = &pi.atoms()[a];
            let pos = &positions;
            let pred = chunked_sum(n, |k| model.feature.value(&pos[k * p..(k + 1) * p], &atom.x)) / n as f64;
            derivs[i] = model.loss.d1(pred, atom.y);
        }
        let step = stepsize_schedule(hyper, n, it)? / n as f64;
        let noise = if eta > 0.0 { (2.0 * eta * step).sqrt() } else { 0.0 };
        let update = |(w, &id): (&mut [f64], &u64), buf: &mut (Vec<f64>, Vec<f64>, Vec<f64>)| {
            let (grad, acc, z) = buf;
            acc.iter_mut().for_each(|v| *v = 0.0);
            for (i, &a) in sampled.iter().enumerate() {
                model.feature.grad(w, &pi.atoms()[a].x, grad);
                for (s, g) in acc.iter_mut().zip(grad.iter()) {
                    *s -= derivs[i] * g;
                }
            }
            model.penalty.grad(w, grad);
            for c in 0..p {
                w[c] += step * (acc[c] / batch as f64 - grad[c]);
            }
            if noise > 0.0 {
                plan.normals(Stream::Langevin, id, it as u64, z);
                for c in 0..p {
                    w[c] += noise * z[c];
                }
            }
        };
        let scratch = || (vec![0.0; p], vec![0.0; p], vec![0.0; p]);
        if n >= PAR_MIN {
            positions
                .par_chunks_mut(p)
                .zip(init.ids.par_iter())
                .with_min_len(PAR_MIN / 2)
                .for_each_init(scratch, |buf, item| update(item, buf));
        } else {
            let mut buf = scratch();
            positions.chunks_mut(p).zip(init.ids.iter()).for_each(|item| update(item, &mut buf));
        }
        recorder.observe(it + 1, (it + 1) as f64 * step_time, &positions)?;
    }
    Ok(recorder.finish(kind, hyper, p, init.ids.clone(), step_time, iterations, super::DiffusionMode::Field))
}
