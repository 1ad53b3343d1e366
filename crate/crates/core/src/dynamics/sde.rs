use rayon::prelude::*;

use super::{add_scaled_matvec, DiffusionMode, EngineOptions, InitialState, Kind, Recorder, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::linalg::sqrt_psd;
use crate::meanfield::{chunked_sum, h_and_sigma_scalar, h_and_sigma_with, h_with, FieldCache, Scratch};
use crate::model::{time_weight, DataDistribution, Hyperparams, ModelSpec};
use crate::rng::{NoisePlan, Stream};

const PAR_MIN: usize = 256;

/// One explicit Euler-Maruyama step rule:
/// `dW = (t+1)^{-alpha} [h dt + sqrt(dt) (sqrt(c) S Z + sqrt(2 eta) Z')]`
/// with `S` the root of `Sigma` (or of `s2 I`) and `c` the noise scale.
pub(crate) struct Euler<'a> {
    pub model: &'a ModelSpec,
    pub pi: &'a DataDistribution,
    pub plan: &'a NoisePlan,
    pub alpha: f64,
    pub eta: f64,
    pub noise_scale: f64,
    pub diffusion: DiffusionMode,
    pub refine: u32,
}

impl Euler<'_> {
    pub(crate) fn p(&self) -> usize {
        self.model.p()
    }

    /// Per-atom predictions of the uniform law on `positions`.
    pub(crate) fn cache(&self, positions: &[f64]) -> FieldCache {
        let p = self.p();
        let n = positions.len() / p;
        let predictions = self
            .pi
            .atoms()
            .iter()
            .map(|atom| chunked_sum(n, |k| self.model.feature.value(&positions[k * p..(k + 1) * p], &atom.x)) / n as f64)
            .collect();
        FieldCache::from_predictions(predictions, self.model, self.pi)
    }

    fn gradient_noise(&self) -> bool {
        self.noise_scale > 0.0 && self.diffusion != DiffusionMode::Off
    }

    /// Advances every particle by one step of length `dt` from time `t`,
    /// with the law argument fixed by `cache`.
    pub(crate) fn step(&self, positions: &mut [f64], ids: &[u64], cache: &FieldCache, n: usize, t: f64, dt: f64) -> Result<()> {
        let p = self.p();
        let weight = time_weight(t, self.alpha)?;
        let sqdt = dt.sqrt();
        let grad_noise = self.gradient_noise();
        let diff_coeff = weight * sqdt * self.noise_scale.sqrt();
        let lang_coeff = weight * sqdt * (2.0 * self.eta).sqrt();
        let step_idx = n as u64;

        if p == 1 {
            let update = |(w, &id): (&mut f64, &u64)| {
                let mut dw;
                if grad_noise {
                    let (h, sigma) = match self.diffusion {
                        DiffusionMode::Constant(s2) => (h_and_sigma_scalar(*w, cache, self.model, self.pi).0, s2),
                        _ => h_and_sigma_scalar(*w, cache, self.model, self.pi),
                    };
                    let mut z = [0.0];
                    self.plan.brownian(Stream::Diffusion, id, step_idx, self.refine, &mut z);
                    dw = weight * h * dt + diff_coeff * sigma.max(0.0).sqrt() * z[0];
                } else {
                    let (h, _) = h_and_sigma_scalar(*w, cache, self.model, self.pi);
                    dw = weight * h * dt;
                }
                if self.eta > 0.0 {
                    let mut z = [0.0];
                    self.plan.brownian(Stream::Langevin, id, step_idx, self.refine, &mut z);
                    dw += lang_coeff * z[0];
                }
                *w += dw;
            };
            if positions.len() >= PAR_MIN {
                positions.par_iter_mut().zip(ids.par_iter()).with_min_len(PAR_MIN / 2).for_each(update);
            } else {
                positions.iter_mut().zip(ids.iter()).for_each(update);
            }
            return Ok(());
        }

        let update = |scratch: &mut (Scratch, Vec<f64>, Vec<f64>), (k, (w, &id)): (usize, (&mut [f64], &u64))| -> Result<()> {
            let (sc, h, z) = scratch;
            if grad_noise {
                let root = match self.diffusion {
                    DiffusionMode::Constant(s2) => {
                        h_with(w, cache, self.model, self.pi, sc, h);
                        nalgebra::DMatrix::identity(p, p) * s2.max(0.0).sqrt()
                    }
                    _ => {
                        let sigma = h_and_sigma_with(w, cache, self.model, self.pi, sc, h);
                        sqrt_psd(&sigma).map_err(|e| Error::Diffusion {
                            step: n,
                            particle: k,
                            source: Box::new(e),
                        })?
                    }
                };
                self.plan.brownian(Stream::Diffusion, id, step_idx, self.refine, z);
                for c in 0..p {
                    w[c] += weight * h[c] * dt;
                }
                add_scaled_matvec(w, diff_coeff, &root, z);
            } else {
                h_with(w, cache, self.model, self.pi, sc, h);
                for c in 0..p {
                    w[c] += weight * h[c] * dt;
                }
            }
            if self.eta > 0.0 {
                self.plan.brownian(Stream::Langevin, id, step_idx, self.refine, z);
                for c in 0..p {
                    w[c] += lang_coeff * z[c];
                }
            }
            Ok(())
        };
        let atoms = self.pi.len();
        let init = || (Scratch::new(p, atoms), vec![0.0; p], vec![0.0; p]);
        if ids.len() >= PAR_MIN {
            positions
                .par_chunks_mut(p)
                .zip(ids.par_iter())
                .enumerate()
                .with_min_len(PAR_MIN / 2)
                .try_for_each_init(init, update)
        } else {
            let mut scratch = init();
            positions
                .chunks_mut(p)
                .zip(ids.iter())
                .enumerate()
                .try_for_each(|item| update(&mut scratch, item))
        }
    }
}

fn run(
    kind: Kind,
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    init: &InitialState,
    plan: &NoisePlan,
    opts: &EngineOptions,
    noise_scale: f64,
) -> Result<Trajectory> {
    hyper.validate()?;
    model.check_data(pi)?;
    let p = model.p();
    check_dim("initial state dimension", p, init.p)?;
    if opts.refine == 0 {
        return Err(Error::Domain("Brownian refinement must be at least 1".into()));
    }
    let diffusion = if kind == Kind::MeanfieldOde {
        DiffusionMode::Off
    } else {
        opts.diffusion.clone()
    };
    let euler = Euler {
        model,
        pi,
        plan,
        alpha: hyper.alpha,
        eta: hyper.eta,
        noise_scale,
        diffusion: diffusion.clone(),
        refine: opts.refine,
    };
    let (steps, dt) = hyper.time_grid();
    let mut positions = init.positions.clone();
    let mut recorder = Recorder::new(&opts.snapshots, steps, dt, opts.moment_ceiling, p);
    recorder.observe(0, 0.0, &positions)?;
    for n in 0..steps {
        let cache = euler.cache(&positions);
        euler.step(&mut positions, &init.ids, &cache, n, n as f64 * dt, dt)?;
        recorder.observe(n + 1, (n + 1) as f64 * dt, &positions)?;
    }
    Ok(recorder.finish(kind, hyper, p, init.ids.clone(), dt, steps, diffusion))
}

/// `N`-particle diffusion whose gradient-noise covariance is
/// `gamma_{alpha,beta}(N) Sigma / M`, driven by the system's own empirical law.
pub fn interacting_sde_run(
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    init: &InitialState,
    plan: &NoisePlan,
    opts: &EngineOptions,
) -> Result<Trajectory> {
    let scale = hyper.gamma_scale(init.len())? / hyper.batch as f64;
    run(Kind::InteractingSde, model, pi, hyper, init, plan, opts, scale)
}

/// Mean-field ODE (plus Langevin noise when `eta > 0`) for a reference
/// ensemble whose empirical law stands in for the limit law.
pub fn meanfield_ode_run(
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    init: &InitialState,
    plan: &NoisePlan,
    opts: &EngineOptions,
) -> Result<Trajectory> {
    run(Kind::MeanfieldOde, model, pi, hyper, init, plan, opts, 0.0)
}

/// Mean-field SDE with gradient-noise covariance `gamma^{1/(1-alpha)} Sigma / M`.
pub fn meanfield_sde_run(
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    init: &InitialState,
    plan: &NoisePlan,
    opts: &EngineOptions,
) -> Result<Trajectory> {
    let scale = meanfield_noise_scale(hyper)?;
    run(Kind::MeanfieldSde, model, pi, hyper, init, plan, opts, scale)
}

pub(crate) fn meanfield_noise_scale(hyper: &Hyperparams) -> Result<f64> {
    Ok(crate::model::gamma_scale(hyper.alpha, 1.0, hyper.gamma, 1)? / hyper.batch as f64)
}
