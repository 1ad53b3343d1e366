//! Stationary laws of the one-dimensional mean-field SDE at constant
//! stepsize, as fixed points of a density map on a uniform grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{meanfield_sde_run, DiffusionMode, EngineOptions, InitialState, SnapshotPolicy};
use crate::error::{Error, Result};
use crate::meanfield::{h_and_sigma_scalar, EmpiricalMeasure, FieldCache};
use crate::model::{gamma_scale, DataDistribution, Hyperparams, ModelSpec};
use crate::rng::{NoisePlan, Stream};

/// Smallest admissible diffusion coefficient on the grid.
pub const MIN_DIFFUSION: f64 = 1e-12;
/// Boundary-to-peak density ratio below which the window is wide enough.
pub const TAIL_RATIO: f64 = 1e-12;
const MAX_CELLS: usize = 1 << 22;

/// Probability density sampled at the centers of a uniform grid on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity1D {
    pub lo: f64,
    pub hi: f64,
    pub n_cells: usize,
    pub values: Vec<f64>,
}

impl GridDensity1D {
    /// Normalizes `values` so the trapezoid integral over the centers is one.
    pub fn new(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if !(lo < 0.0 && hi > 0.0) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain(format!("grid [{lo}, {hi}] must contain the origin in its interior")));
        }
        if values.len() < 2 {
            return Err(Error::Domain("a grid density needs at least two cells".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain("density values must be finite and nonnegative".into()));
        }
        let mut g = Self {
            lo,
            hi,
            n_cells: values.len(),
            values,
        };
        let total = g.integral();
        if !(total > 0.0) {
            return Err(Error::Domain("density has zero mass on the grid".into()));
        }
        g.values.iter_mut().for_each(|v| *v /= total);
        Ok(g)
    }

    pub fn from_fn(lo: f64, hi: f64, n_cells: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let width = (hi - lo) / n_cells as f64;
        let values = (0..n_cells).map(|i| f(lo + (i as f64 + 0.5) * width)).collect();
        Self::new(lo, hi, values)
    }

    pub fn gaussian(mean: f64, variance: f64, lo: f64, hi: f64, n_cells: usize) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::Domain(format!("variance {variance} must be positive")));
        }
        Self::from_fn(lo, hi, n_cells, |w| (-(w - mean) * (w - mean) / (2.0 * variance)).exp())
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n_cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    /// Trapezoid rule over the cell centers.
    pub fn integral(&self) -> f64 {
        let n = self.values.len();
        self.width() * (self.values.iter().sum::<f64>() - 0.5 * (self.values[0] + self.values[n - 1]))
    }

    /// Linear interpolation between centers, zero beyond the outer centers.
    pub fn eval(&self, w: f64) -> f64 {
        let x = (w - self.lo) / self.width() - 0.5;
        if x < 0.0 || x > (self.n_cells - 1) as f64 {
            return 0.0;
        }
        let i = (x.floor() as usize).min(self.n_cells - 2);
        let f = x - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    /// Cell masses `values * width`, renormalized to sum to one.
    pub fn cell_weights(&self) -> Vec<f64> {
        let total: f64 = self.values.iter().sum();
        self.values.iter().map(|v| v / total).collect()
    }

    /// The density as a weighted measure on the cell centers.
    pub fn measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::weighted(1, self.centers(), self.cell_weights())
    }

    /// `int w^k rho(w) dw` by the trapezoid rule.
    pub fn moment(&self, k: i32) -> f64 {
        let n = self.n_cells;
        let terms: Vec<f64> = (0..n).map(|i| self.center(i).powi(k) * self.values[i]).collect();
        self.width() * (terms.iter().sum::<f64>() - 0.5 * (terms[0] + terms[n - 1]))
    }

    /// Density resampled onto another uniform grid, renormalized.
    pub fn resample(&self, lo: f64, hi: f64, n_cells: usize) -> Result<Self> {
        let width = (hi - lo) / n_cells as f64;
        Self::new(lo, hi, (0..n_cells).map(|i| self.eval(lo + (i as f64 + 0.5) * width)).collect())
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.n_cells == other.n_cells && self.lo == other.lo && self.hi == other.hi
    }

    /// Grid covering both windows at the finer of the two cell widths.
    fn common_grid(&self, other: &Self) -> (f64, f64, usize) {
        let lo = self.lo.min(other.lo);
        let hi = self.hi.max(other.hi);
        let width = self.width().min(other.width());
        (lo, hi, ((hi - lo) / width).round().max(2.0) as usize)
    }

    /// L1 distance between the two densities, on a common grid if needed.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.same_grid(other) {
            let diffs: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).collect();
            let n = diffs.len();
            return Ok(self.width() * (diffs.iter().sum::<f64>() - 0.5 * (diffs[0] + diffs[n - 1])));
        }
        let (lo, hi, n) = self.common_grid(other);
        self.resample(lo, hi, n)?.l1_distance(&other.resample(lo, hi, n)?)
    }

    /// `(1 - t) self + t other` on a common grid.
    pub fn mix(&self, other: &Self, t: f64) -> Result<Self> {
        let (a, b) = if self.same_grid(other) {
            (self.clone(), other.clone())
        } else {
            let (lo, hi, n) = self.common_grid(other);
            (self.resample(lo, hi, n)?, other.resample(lo, hi, n)?)
        };
        let values = a.values.iter().zip(&b.values).map(|(x, y)| (1.0 - t) * x + t * y).collect();
        Self::new(a.lo, a.hi, values)
    }

    /// Quantile function of the piecewise-constant cell density.
    pub fn quantile(&self, u: f64) -> f64 {
        let weights = self.cell_weights();
        let width = self.width();
        let mut acc = 0.0;
        for (i, &m) in weights.iter().enumerate() {
            if acc + m >= u && m > 0.0 {
                return self.lo + width * (i as f64 + ((u - acc) / m).clamp(0.0, 1.0));
            }
            acc += m;
        }
        self.hi
    }

    /// Quantiles at sorted levels in one pass.
    fn quantiles(&self, levels: &[f64]) -> Vec<f64> {
        let weights = self.cell_weights();
        let width = self.width();
        let mut out = Vec::with_capacity(levels.len());
        let (mut i, mut acc) = (0usize, 0.0);
        for &u in levels {
            while i + 1 < weights.len() && (acc + weights[i] < u || weights[i] == 0.0) {
                acc += weights[i];
                i += 1;
            }
            let frac = if weights[i] > 0.0 { ((u - acc) / weights[i]).clamp(0.0, 1.0) } else { 1.0 };
            out.push(self.lo + width * (i as f64 + frac));
        }
        out
    }

    /// `W2` between the uniform law of `samples` and this density.
    pub fn w2_to_samples(&self, samples: &[f64]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Precondition("W2 needs at least one sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        const SUB: usize = 16;
        let n = sorted.len();
        let levels: Vec<f64> = (0..n * SUB).map(|j| (j as f64 + 0.5) / (n * SUB) as f64).collect();
        let q = self.quantiles(&levels);
        let total: f64 = q.iter().enumerate().map(|(j, &x)| (sorted[j / SUB] - x).powi(2)).sum();
        Ok((total / (n * SUB) as f64).sqrt())
    }
}

fn check_setting(model: &ModelSpec, pi: &DataDistribution, hyper: &Hyperparams) -> Result<()> {
    hyper.validate()?;
    model.check_data(pi)?;
    if model.p() != 1 {
        return Err(Error::Precondition(format!(
            "stationary laws are computed in dimension 1, got p = {}",
            model.p()
        )));
    }
    if hyper.alpha != 0.0 {
        return Err(Error::Precondition(format!(
            "stationary laws need a constant stepsize (alpha = 0), got alpha = {}",
            hyper.alpha
        )));
    }
    Ok(())
}

/// Unnormalized `D(w)^{-1} exp(2 int_0^w h / D)` on the centers of `[lo, hi]`,
/// with `D = gamma^{1/(1-alpha)} Sigma / M + 2 eta`, scaled so its peak is one.
fn invariant_profile(
    cache: &FieldCache,
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    sigma_override: Option<f64>,
    lo: f64,
    hi: f64,
    n_cells: usize,
) -> Result<Vec<f64>> {
    let scale = gamma_scale(hyper.alpha, 1.0, hyper.gamma, 1)? / hyper.batch as f64;
    let width = (hi - lo) / n_cells as f64;
    let fields: Vec<(f64, f64)> = (0..n_cells)
        .into_par_iter()
        .map(|i| {
            let w = lo + (i as f64 + 0.5) * width;
            let (h, sigma) = h_and_sigma_scalar(w, cache, model, pi);
            (h, scale * sigma_override.unwrap_or(sigma) + 2.0 * hyper.eta)
        })
        .collect();
    if let Some((i, &(_, d))) = fields.iter().enumerate().find(|(_, (_, d))| !(*d >= MIN_DIFFUSION)) {
        return Err(Error::Domain(format!(
            "diffusion coefficient {d:e} at w = {} is below {MIN_DIFFUSION:e}",
            lo + (i as f64 + 0.5) * width
        )));
    }
    // cumulative trapezoid from the first center; the origin offset cancels on normalization
    let mut exponent = vec![0.0; n_cells];
    for i in 1..n_cells {
        let (h0, d0) = fields[i - 1];
        let (h1, d1) = fields[i];
        exponent[i] = exponent[i - 1] + width * (h0 / d0 + h1 / d1);
    }
    let log_density: Vec<f64> = exponent.iter().zip(&fields).map(|(e, (_, d))| e - d.ln()).collect();
    let peak = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(log_density.iter().map(|l| (l - peak).exp()).collect())
}

/// One application of the invariant-density map: the stationary density of
/// the linear SDE whose drift and diffusion are frozen at the law `mu`.
///
/// The output grid keeps the input's cell width and grows symmetrically
/// until the boundary density falls below `TAIL_RATIO` of the peak.
pub fn map_h(
    mu: &GridDensity1D,
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    sigma_override: Option<f64>,
) -> Result<GridDensity1D> {
    check_setting(model, pi, hyper)?;
    if let Some(s2) = sigma_override {
        if !(s2 >= 0.0) || !s2.is_finite() {
            return Err(Error::Domain(format!("constant covariance {s2} must be nonnegative")));
        }
    }
    let cache = FieldCache::new(&mu.measure()?, model, pi)?;
    let (mut lo, mut hi, mut n) = (mu.lo, mu.hi, mu.n_cells);
    loop {
        let values = invariant_profile(&cache, model, pi, hyper, sigma_override, lo, hi, n)?;
        if values[0].max(values[n - 1]) <= TAIL_RATIO {
            return GridDensity1D::new(lo, hi, values);
        }
        if 2 * n > MAX_CELLS {
            return Err(Error::Precondition(format!(
                "density window [{lo}, {hi}] would exceed {MAX_CELLS} cells without reaching negligible tails"
            )));
        }
        // grow by half-windows on the heavy side, keeping the cell width
        let half = 0.5 * (hi - lo);
        if values[0] > TAIL_RATIO {
            lo -= half;
        }
        if values[n - 1] > TAIL_RATIO {
            hi += half;
        }
        n = ((hi - lo) / mu.width()).round() as usize;
    }
}

/// Outcome of the damped fixed-point iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub density: GridDensity1D,
    pub iterations: usize,
    /// `L1(mu, H(mu))` of the returned iterate.
    pub residual: f64,
    pub history: Vec<f64>,
    pub converged: bool,
    /// Period of a detected cycle of iterates, when the iteration oscillates.
    pub cycle: Option<usize>,
}

impl FixedPoint {
    /// The fixed point, or the non-convergence error with its residual history.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                iterations: self.iterations,
                residual: self.residual,
                history: self.history,
            })
        }
    }
}

/// Iterates `mu <- (1 - damping) mu + damping H(mu)` until
/// `L1(mu, H(mu)) <= tol` or `max_iter` updates.
#[allow(clippy::too_many_arguments)]
pub fn fixed_point_iterate(
    mu0: &GridDensity1D,
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    sigma_override: Option<f64>,
    tol: f64,
    max_iter: usize,
    damping: f64,
) -> Result<FixedPoint> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::Domain(format!("damping {damping} is outside (0, 1]")));
    }
    if !(tol >= 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be nonnegative")));
    }
    let mut mu = mu0.clone();
    let mut image = map_h(&mu, model, pi, hyper, sigma_override)?;
    let mut residual = mu.l1_distance(&image)?;
    let mut history = Vec::new();
    let mut recent: Vec<GridDensity1D> = Vec::new();
    let mut cycle = None;
    let mut iterations = 0;
    while iterations < max_iter && residual > tol {
        mu = mu.mix(&image, damping)?;
        image = map_h(&mu, model, pi, hyper, sigma_override)?;
        residual = mu.l1_distance(&image)?;
        history.push(residual);
        iterations += 1;
        cycle = None;
        for (back, old) in recent.iter().rev().enumerate().skip(1) {
            if residual > tol && mu.l1_distance(old)? <= tol.max(1e-12) {
                cycle = Some(back + 1);
                break;
            }
        }
        recent.push(mu.clone());
        if recent.len() > 4 {
            recent.remove(0);
        }
    }
    Ok(FixedPoint {
        density: mu,
        iterations,
        residual,
        history,
        converged: residual <= tol,
        cycle,
    })
}

/// Drift of a candidate stationary law under the mean-field SDE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    /// `W2` between the simulated law at the horizon and the density.
    pub drift: f64,
    /// `W2` between the initial samples and the density.
    pub baseline: f64,
}

/// Samples `n_ref` particles from `mu_star` by inverse CDF, evolves them
/// with the mean-field SDE for `horizon` and measures how far the law moved.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_check(
    mu_star: &GridDensity1D,
    model: &ModelSpec,
    pi: &DataDistribution,
    hyper: &Hyperparams,
    sigma_override: Option<f64>,
    n_ref: usize,
    horizon: f64,
    plan: &NoisePlan,
) -> Result<StationarityReport> {
    check_setting(model, pi, hyper)?;
    if n_ref == 0 {
        return Err(Error::Precondition("stationarity check needs at least one particle".into()));
    }
    let levels: Vec<f64> = (0..n_ref as u64).map(|k| plan.uniform(Stream::Init, k, 0, 0)).collect();
    let positions: Vec<f64> = levels.iter().map(|&u| mu_star.quantile(u)).collect();
    let baseline = mu_star.w2_to_samples(&positions)?;
    let run_hyper = Hyperparams { horizon, ..*hyper };
    let init = InitialState::explicit(1, (0..n_ref as u64).collect(), positions)?;
    let opts = EngineOptions {
        snapshots: SnapshotPolicy::Times(Vec::new()),
        diffusion: sigma_override.map_or(DiffusionMode::Field, DiffusionMode::Constant),
        ..EngineOptions::default()
    };
    let traj = meanfield_sde_run(model, pi, &run_hyper, &init, plan, &opts)?;
    Ok(StationarityReport {
        drift: mu_star.w2_to_samples(traj.endpoint())?,
        baseline,
    })
}

/// Two-column `w,density` CSV of the grid.
pub fn write_density_csv(density: &GridDensity1D, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["w", "density"])?;
    for (x, v) in density.centers().iter().zip(&density.values) {
        w.write_record([x.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
