//! Time-evolution engines and the synchronous coupling harness.
//!
//! Particle `k` of a run is identified by a 64-bit id. Its initial position
//! and every Gaussian it consumes are pure functions of `(seed, id, step)`,
//! so two engines that share ids share noise.

mod coupling;
mod gap;
mod sde;
mod sgd;
mod weak_form;

pub use coupling::{coupled_chaos_error, coupled_chaos_errors, ChaosEstimate, CouplingOptions, ReferenceInit};
pub use gap::{sgd_sde_gap, GapOptions};
pub use sde::{interacting_sde_run, meanfield_ode_run, meanfield_sde_run};
pub use sgd::{msgld_run, sgd_run};
pub use weak_form::{weak_form_residual, Constant, Coordinate, QuadraticForm, TestFunction};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::EmpiricalMeasure;
use crate::model::Hyperparams;
use crate::rng::{NoisePlan, Stream};

/// First id used by reference ensembles, far above any test-system id.
pub const REFERENCE_ID_BASE: u64 = 1 << 40;

/// Which engine produced a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Sgd,
    Msgld,
    InteractingSde,
    MeanfieldOde,
    MeanfieldSde,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Sgd => "sgd",
            Kind::Msgld => "msgld",
            Kind::InteractingSde => "interacting-sde",
            Kind::MeanfieldOde => "meanfield-ode",
            Kind::MeanfieldSde => "meanfield-sde",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Kind::Sgd => 0,
            Kind::Msgld => 1,
            Kind::InteractingSde => 2,
            Kind::MeanfieldOde => 3,
            Kind::MeanfieldSde => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Kind> {
        Some(match code {
            0 => Kind::Sgd,
            1 => Kind::Msgld,
            2 => Kind::InteractingSde,
            3 => Kind::MeanfieldOde,
            4 => Kind::MeanfieldSde,
            _ => return None,
        })
    }
}

/// Initial law of the particles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum InitLaw {
    /// Independent uniform coordinates on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
    /// Every particle at `at`.
    Dirac { at: Vec<f64> },
}

impl Default for InitLaw {
    fn default() -> Self {
        InitLaw::Uniform { half_width: 0.04 }
    }
}

impl InitLaw {
    /// Position of the particle with id `id`.
    pub fn sample_one(&self, p: usize, id: u64, plan: &NoisePlan, out: &mut [f64]) {
        match self {
            InitLaw::Uniform { half_width } => {
                for (c, o) in out.iter_mut().enumerate().take(p) {
                    *o = half_width * (2.0 * plan.uniform(Stream::Init, id, 0, c) - 1.0);
                }
            }
            InitLaw::Dirac { at } => out[..p].copy_from_slice(at),
        }
    }

    /// Low-discrepancy stand-in for an i.i.d. sample of size `n`: cell
    /// midpoints in 1-D, an additive recurrence lattice in higher dimension.
    pub fn stratified(&self, p: usize, n: usize) -> Vec<f64> {
        match self {
            InitLaw::Dirac { at } => at.iter().copied().cycle().take(n * p).collect(),
            InitLaw::Uniform { half_width } => {
                let mut out = Vec::with_capacity(n * p);
                if p == 1 {
                    for k in 0..n {
                        out.push(half_width * (2.0 * (k as f64 + 0.5) / n as f64 - 1.0));
                    }
                    return out;
                }
                // generalized golden ratio: the root of x^{p+1} = x + 1
                let mut phi = 2.0f64;
                for _ in 0..64 {
                    phi = (1.0 + phi).powf(1.0 / (p as f64 + 1.0));
                }
                let steps: Vec<f64> = (1..=p).map(|j| phi.powi(-(j as i32))).collect();
                for k in 0..n {
                    for s in &steps {
                        let u = (0.5 + s * (k as f64 + 1.0)).fract();
                        out.push(half_width * (2.0 * u - 1.0));
                    }
                }
                out
            }
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            InitLaw::Uniform { half_width } if !(*half_width >= 0.0) || !half_width.is_finite() => {
                Err(Error::Domain(format!("initial half width {half_width} must be nonnegative")))
            }
            InitLaw::Dirac { at } if at.len() != p => Err(Error::DimensionMismatch {
                context: "Dirac initial position",
                expected: p,
                got: at.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// Particle ids and their initial positions (row-major `N x p`).
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    pub p: usize,
    pub ids: Vec<u64>,
    pub positions: Vec<f64>,
}

impl InitialState {
    /// Particles with ids `id_base..id_base + n` drawn from `law`.
    pub fn sample(law: &InitLaw, p: usize, n: usize, id_base: u64, plan: &NoisePlan) -> Result<Self> {
        law.validate(p)?;
        let ids: Vec<u64> = (0..n as u64).map(|k| id_base + k).collect();
        Self::sample_ids(law, p, ids, plan)
    }

    pub fn sample_ids(law: &InitLaw, p: usize, ids: Vec<u64>, plan: &NoisePlan) -> Result<Self> {
        law.validate(p)?;
        let mut positions = vec![0.0; ids.len() * p];
        for (k, &id) in ids.iter().enumerate() {
            law.sample_one(p, id, plan, &mut positions[k * p..(k + 1) * p]);
        }
        Self::explicit(p, ids, positions)
    }

    pub fn explicit(p: usize, ids: Vec<u64>, positions: Vec<f64>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Precondition("a run needs at least one particle".into()));
        }
        if positions.len() != ids.len() * p {
            return Err(Error::DimensionMismatch {
                context: "initial positions",
                expected: ids.len() * p,
                got: positions.len(),
            });
        }
        Ok(Self { p, ids, positions })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Which times a run records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotPolicy {
    /// `count` evenly spaced grid points plus `t = 0` and `t = T`.
    Even(usize),
    /// Every solver step.
    EveryStep,
    /// The grid points closest to the given times, plus 0 and T.
    Times(Vec<f64>),
}

impl Default for SnapshotPolicy {
    fn default() -> Self {
        SnapshotPolicy::Even(64)
    }
}

impl SnapshotPolicy {
    /// Sorted, deduplicated step indices in `0..=steps` to record.
    pub fn steps(&self, steps: usize, step_time: f64) -> Vec<usize> {
        let mut out = match self {
            SnapshotPolicy::EveryStep => (0..=steps).collect(),
            SnapshotPolicy::Even(count) => {
                let count = (*count).max(1);
                (0..=count + 1)
                    .map(|i| ((i as f64 * steps as f64 / (count + 1) as f64).round() as usize).min(steps))
                    .collect()
            }
            SnapshotPolicy::Times(times) => {
                let mut v: Vec<usize> = times
                    .iter()
                    .map(|t| ((t / step_time).round().max(0.0) as usize).min(steps))
                    .collect();
                v.push(0);
                v.push(steps);
                v
            }
        };
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Covariance driving the gradient-noise term of the continuous engines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionMode {
    /// `Sigma(w, law)`, scaled by the engine's factor.
    Field,
    /// No gradient noise.
    Off,
    /// `s2 * I` in place of `Sigma`, scaled by the engine's factor.
    Constant(f64),
}

/// Options shared by every engine.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineOptions {
    pub snapshots: SnapshotPolicy,
    /// Abort when the ensemble second moment exceeds this value.
    pub moment_ceiling: Option<f64>,
    /// Brownian increments of one step are sums of `refine` finer draws.
    pub refine: u32,
    pub diffusion: DiffusionMode,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            snapshots: SnapshotPolicy::default(),
            moment_ceiling: Some(1e12),
            refine: 1,
            diffusion: DiffusionMode::Field,
        }
    }
}

/// Recorded ensembles of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub kind: Kind,
    pub hyper: Hyperparams,
    pub p: usize,
    pub ids: Vec<u64>,
    /// Duration of one engine step (`gamma_{alpha,beta}(N)` for SGD).
    pub step: f64,
    /// Total number of engine steps.
    pub steps: usize,
    pub diffusion: DiffusionMode,
    pub step_indices: Vec<usize>,
    pub times: Vec<f64>,
    /// One row-major `N x p` buffer per recorded time.
    pub snapshots: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn n_particles(&self) -> usize {
        self.ids.len()
    }

    pub fn endpoint(&self) -> &[f64] {
        self.snapshots.last().expect("trajectories record t = 0 and t = T")
    }

    pub fn measure(&self, index: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.p, self.snapshots[index].clone()).expect("snapshots are nonempty")
    }

    /// Coordinate `c` of every particle at the final time.
    pub fn endpoint_coordinate(&self, c: usize) -> Vec<f64> {
        self.endpoint().chunks(self.p).map(|w| w[c]).collect()
    }
}

pub(crate) struct Recorder {
    want: Vec<usize>,
    next: usize,
    step_indices: Vec<usize>,
    times: Vec<f64>,
    snapshots: Vec<Vec<f64>>,
    ceiling: Option<f64>,
    p: usize,
}

impl Recorder {
    pub(crate) fn new(policy: &SnapshotPolicy, steps: usize, step_time: f64, ceiling: Option<f64>, p: usize) -> Self {
        Self {
            want: policy.steps(steps, step_time),
            next: 0,
            step_indices: Vec::new(),
            times: Vec::new(),
            snapshots: Vec::new(),
            ceiling,
            p,
        }
    }

    /// Called after step `n` is reached (positions at time `n * step`).
    pub(crate) fn observe(&mut self, n: usize, time: f64, positions: &[f64]) -> Result<()> {
        if let Some(ceiling) = self.ceiling {
            let count = positions.len() / self.p;
            let moment = crate::meanfield::chunked_sum(count, |k| {
                positions[k * self.p..(k + 1) * self.p].iter().map(|v| v * v).sum()
            }) / count as f64;
            if !(moment <= ceiling) {
                return Err(Error::MomentCeiling { time, moment, ceiling });
            }
        }
        if self.next < self.want.len() && self.want[self.next] == n {
            self.step_indices.push(n);
            self.times.push(time);
            self.snapshots.push(positions.to_vec());
            self.next += 1;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn finish(
        self,
        kind: Kind,
        hyper: &Hyperparams,
        p: usize,
        ids: Vec<u64>,
        step: f64,
        steps: usize,
        diffusion: DiffusionMode,
    ) -> Trajectory {
        Trajectory {
            kind,
            hyper: *hyper,
            p,
            ids,
            step,
            steps,
            diffusion,
            step_indices: self.step_indices,
            times: self.times,
            snapshots: self.snapshots,
        }
    }
}

/// Applies `x <- x + coeff * S z` for a symmetric root `S` (row-major `p x p`).
#[inline]
pub(crate) fn add_scaled_matvec(x: &mut [f64], coeff: f64, s: &DMatrix<f64>, z: &[f64]) {
    let p = x.len();
    for i in 0..p {
        let mut acc = 0.0;
        for j in 0..p {
            acc += s[(i, j)] * z[j];
        }
        x[i] += coeff * acc;
    }
}
