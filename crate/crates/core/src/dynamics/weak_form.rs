use nalgebra::DMatrix;

use super::sde::meanfield_noise_scale;
use super::{DiffusionMode, Kind, Trajectory};
use crate::error::{Error, Result};
use crate::meanfield::{h_and_sigma_with, h_with, FieldCache, Scratch};
use crate::model::{time_weight, DataDistribution, ModelSpec};

/// Scalar observable with gradient and, optionally, Hessian.
pub trait TestFunction: Sync {
    fn value(&self, w: &[f64]) -> f64;
    fn grad(&self, w: &[f64], out: &mut [f64]);
    fn hessian(&self, _w: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// `f(w) = w[i]`.
#[derive(Clone, Copy, Debug)]
pub struct Coordinate(pub usize);

impl TestFunction for Coordinate {
    fn value(&self, w: &[f64]) -> f64 {
        w[self.0]
    }
    fn grad(&self, _w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[self.0] = 1.0;
    }
    fn hessian(&self, w: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(w.len(), w.len()))
    }
}

/// `f(w) = c`.
#[derive(Clone, Copy, Debug)]
pub struct Constant(pub f64);

impl TestFunction for Constant {
    fn value(&self, _w: &[f64]) -> f64 {
        self.0
    }
    fn grad(&self, _w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn hessian(&self, w: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(w.len(), w.len()))
    }
}

/// `f(w) = scale |w|^2 / 2`.
#[derive(Clone, Copy, Debug)]
pub struct QuadraticForm {
    pub scale: f64,
}

impl TestFunction for QuadraticForm {
    fn value(&self, w: &[f64]) -> f64 {
        0.5 * self.scale * w.iter().map(|v| v * v).sum::<f64>()
    }
    fn grad(&self, w: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(w) {
            *o = self.scale * v;
        }
    }
    fn hessian(&self, w: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(w.len(), w.len()) * self.scale)
    }
}

/// Residual of the weak form `lambda_t[f] = lambda_0[f] + int_0^t L_s f ds`
/// along a recorded mean-field trajectory, at every step.
///
/// `L_s f = (s+1)^{-alpha} lambda_s[<h, grad f>] + (s+1)^{-2 alpha} lambda_s[Tr(A grad^2 f)] / 2`,
/// where `A` is the effective diffusion covariance of the engine (scaled
/// `Sigma` plus `2 eta I`). The time integral uses the trapezoid rule on the
/// step grid, so the residual measures the solver's own discretization error.
pub fn weak_form_residual(
    trajectory: &Trajectory,
    model: &ModelSpec,
    pi: &DataDistribution,
    f: &dyn TestFunction,
) -> Result<Vec<f64>> {
    if !matches!(trajectory.kind, Kind::MeanfieldOde | Kind::MeanfieldSde) {
        return Err(Error::Precondition(format!(
            "weak-form residual needs a mean-field trajectory, got {}",
            trajectory.kind.as_str()
        )));
    }
    if trajectory.step_indices != (0..=trajectory.steps).collect::<Vec<_>>() {
        return Err(Error::Precondition("weak-form residual needs a snapshot at every step".into()));
    }
    let hyper = &trajectory.hyper;
    let p = trajectory.p;
    let field_scale = match (&trajectory.kind, &trajectory.diffusion) {
        (Kind::MeanfieldSde, DiffusionMode::Field | DiffusionMode::Constant(_)) => meanfield_noise_scale(hyper)?,
        _ => 0.0,
    };
    let second_order = field_scale > 0.0 || hyper.eta > 0.0;

    let mut generator = Vec::with_capacity(trajectory.snapshots.len());
    let mut values = Vec::with_capacity(trajectory.snapshots.len());
    let mut scratch = Scratch::new(p, pi.len());
    let mut h = vec![0.0; p];
    let mut g = vec![0.0; p];
    for (snap, &t) in trajectory.snapshots.iter().zip(&trajectory.times) {
        let measure = trajectory.measure(values.len());
        let cache = FieldCache::new(&measure, model, pi)?;
        let n = snap.len() / p;
        let (mut drift, mut trace, mut value) = (0.0, 0.0, 0.0);
        for w in snap.chunks(p) {
            value += f.value(w);
            f.grad(w, &mut g);
            if second_order {
                let hess = f
                    .hessian(w)
                    .ok_or_else(|| Error::Precondition("diffusive weak form needs the test function's Hessian".into()))?;
                let mut cov = match trajectory.diffusion {
                    DiffusionMode::Field if field_scale > 0.0 => {
                        h_and_sigma_with(w, &cache, model, pi, &mut scratch, &mut h) * field_scale
                    }
                    DiffusionMode::Constant(s2) if field_scale > 0.0 => {
                        h_with(w, &cache, model, pi, &mut scratch, &mut h);
                        DMatrix::identity(p, p) * (s2 * field_scale)
                    }
                    _ => {
                        h_with(w, &cache, model, pi, &mut scratch, &mut h);
                        DMatrix::zeros(p, p)
                    }
                };
                for i in 0..p {
                    cov[(i, i)] += 2.0 * hyper.eta;
                }
                trace += (cov * hess).trace();
            } else {
                h_with(w, &cache, model, pi, &mut scratch, &mut h);
            }
            drift += h.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        }
        let weight = time_weight(t, hyper.alpha)?;
        generator.push((weight * drift + 0.5 * weight * weight * trace) / n as f64);
        values.push(value / n as f64);
    }
    let dt = trajectory.step;
    let mut integral = 0.0;
    let mut out = Vec::with_capacity(values.len());
    out.push(0.0);
    for s in 1..values.len() {
        integral += 0.5 * (generator[s - 1] + generator[s]) * dt;
        out.push((values[s] - values[0] - integral).abs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{meanfield_ode_run, meanfield_sde_run, EngineOptions, InitLaw, InitialState, SnapshotPolicy};
    use crate::model::Hyperparams;
    use crate::rng::NoisePlan;

    fn every_step() -> EngineOptions {
        EngineOptions {
            snapshots: SnapshotPolicy::EveryStep,
            ..EngineOptions::default()
        }
    }

    fn linear_residual(dt: f64) -> f64 {
        let model = ModelSpec::builtin("zero", "square", 0.7, 1).unwrap();
        let pi = DataDistribution::dirac(vec![0.0], 0.0);
        let init = InitialState::sample(&InitLaw::Uniform { half_width: 1.0 }, 1, 64, 0, &NoisePlan::new(1)).unwrap();
        let init = InitialState::explicit(1, init.ids, init.positions.iter().map(|v| v + 1.0).collect()).unwrap();
        let hyper = Hyperparams {
            horizon: 2.0,
            dt,
            ..Hyperparams::default()
        };
        let t = meanfield_ode_run(&model, &pi, &hyper, &init, &NoisePlan::new(1), &every_step()).unwrap();
        weak_form_residual(&t, &model, &pi, &Coordinate(0)).unwrap().into_iter().fold(0.0, f64::max)
    }

    #[test]
    fn residual_is_first_order() {
        let r1 = linear_residual(0.02);
        let r2 = linear_residual(0.01);
        assert!(r1 < 0.05);
        assert!((r1 / r2 - 2.0).abs() <= 0.5, "{r1} {r2}");
    }

    #[test]
    fn constant_test_function_has_zero_residual() {
        let model = ModelSpec::builtin("tanh-dot", "square", 0.01, 2).unwrap();
        let pi = DataDistribution::uniform(vec![(vec![1.0, 0.0], 1.0), (vec![0.0, 1.0], -1.0)]).unwrap();
        let init = InitialState::sample(&InitLaw::Uniform { half_width: 1.0 }, 2, 32, 0, &NoisePlan::new(2)).unwrap();
        let hyper = Hyperparams {
            horizon: 0.5,
            dt: 0.05,
            ..Hyperparams::default()
        };
        let t = meanfield_sde_run(&model, &pi, &hyper, &init, &NoisePlan::new(2), &every_step()).unwrap();
        assert!(weak_form_residual(&t, &model, &pi, &Constant(3.0)).unwrap().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn diffusive_case_needs_hessian() {
        struct NoHessian;
        impl TestFunction for NoHessian {
            fn value(&self, w: &[f64]) -> f64 {
                w[0]
            }
            fn grad(&self, _w: &[f64], out: &mut [f64]) {
                out[0] = 1.0;
            }
        }
        let model = ModelSpec::builtin("tanh-dot", "square", 0.01, 1).unwrap();
        let pi = DataDistribution::uniform(vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)]).unwrap();
        let init = InitialState::explicit(1, vec![0, 1], vec![0.1, -0.2]).unwrap();
        let hyper = Hyperparams {
            horizon: 0.1,
            dt: 0.05,
            ..Hyperparams::default()
        };
        let t = meanfield_sde_run(&model, &pi, &hyper, &init, &NoisePlan::new(0), &every_step()).unwrap();
        assert!(matches!(weak_form_residual(&t, &model, &pi, &NoHessian), Err(Error::Precondition(_))));
    }

    #[test]
    fn sde_residual_shrinks_with_dt_and_ensemble() {
        let model = ModelSpec::builtin("zero", "square", 1.0, 1).unwrap();
        let pi = DataDistribution::dirac(vec![0.0], 0.0);
        let run = |dt: f64, n: usize| -> f64 {
            let init = InitialState::sample(&InitLaw::Uniform { half_width: 1.0 }, 1, n, 0, &NoisePlan::new(4)).unwrap();
            let hyper = Hyperparams {
                horizon: 1.0,
                dt,
                eta: 0.5,
                ..Hyperparams::default()
            };
            let opts = EngineOptions {
                diffusion: DiffusionMode::Constant(1.0),
                ..every_step()
            };
            let t = meanfield_sde_run(&model, &pi, &hyper, &init, &NoisePlan::new(4), &opts).unwrap();
            weak_form_residual(&t, &model, &pi, &QuadraticForm { scale: 1.0 }).unwrap().into_iter().fold(0.0, f64::max)
        };
        let coarse = run(0.04, 1000);
        let fine = run(0.02, 4000);
        assert!(fine < coarse, "{fine} !< {coarse}");
    }

    #[test]
    fn rejects_sparse_snapshots() {
        let model = ModelSpec::builtin("zero", "square", 1.0, 1).unwrap();
        let pi = DataDistribution::dirac(vec![0.0], 0.0);
        let init = InitialState::explicit(1, vec![0], vec![1.0]).unwrap();
        let hyper = Hyperparams {
            horizon: 10.0,
            dt: 0.01,
            ..Hyperparams::default()
        };
        let t = meanfield_ode_run(&model, &pi, &hyper, &init, &NoisePlan::new(0), &EngineOptions::default()).unwrap();
        assert!(weak_form_residual(&t, &model, &pi, &Coordinate(0)).is_err());
    }
}
