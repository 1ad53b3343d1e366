//! Learning problems: feature map, loss, penalty, finite-support data law
//! and the stepsize algebra shared by every dynamics engine.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use nalgebra::DMatrix;

use crate::linalg::{spectral_norm_sym, symmetrize};

/// One support point `(x, y)` of the data distribution and its mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataAtom {
    pub x: Vec<f64>,
    pub y: f64,
    pub weight: f64,
}

impl DataAtom {
    pub fn new(x: Vec<f64>, y: f64, weight: f64) -> Self {
        Self { x, y, weight }
    }
}

/// A finite-support data distribution. Every integral against it is an
/// exact weighted sum over atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct DataDistribution {
    atoms: Vec<DataAtom>,
    dim: usize,
    x_max: f64,
    cumulative: Vec<f64>,
}

impl DataDistribution {
    /// Weights must already sum to one (within 1e-12).
    pub fn new(atoms: Vec<DataAtom>) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::Precondition("data distribution needs at least one atom".into()))?;
        let dim = first.x.len();
        let mut total = 0.0;
        for atom in &atoms {
            check_dim("data atom", dim, atom.x.len())?;
            if !(atom.weight >= 0.0) || !atom.weight.is_finite() {
                return Err(Error::Domain(format!("atom weight {} is not a probability mass", atom.weight)));
            }
            if !atom.y.is_finite() || atom.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("atom has non-finite coordinates".into()));
            }
            total += atom.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("atom weights sum to {total}, expected 1")));
        }
        let x_max = atoms.iter().map(|a| norm(&a.x)).fold(0.0, f64::max);
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.weight;
                acc
            })
            .collect();
        Ok(Self {
            atoms,
            dim,
            x_max,
            cumulative,
        })
    }

    /// Rescales nonnegative weights to sum to one.
    pub fn normalized(mut atoms: Vec<DataAtom>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Domain(format!("total atom weight {total} cannot be normalized")));
        }
        for a in &mut atoms {
            a.weight /= total;
        }
        let fix: f64 = 1.0 - atoms.iter().map(|a| a.weight).sum::<f64>();
        if let Some(last) = atoms.last_mut() {
            last.weight += fix;
        }
        Self::new(atoms)
    }

    /// Uniform law over the given `(x, y)` pairs.
    pub fn uniform(points: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let n = points.len().max(1) as f64;
        Self::normalized(points.into_iter().map(|(x, y)| DataAtom::new(x, y, 1.0 / n)).collect())
    }

    pub fn dirac(x: Vec<f64>, y: f64) -> Self {
        Self::new(vec![DataAtom::new(x, y, 1.0)]).expect("single atom is always valid")
    }

    pub fn atoms(&self) -> &[DataAtom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Largest feature norm over the support.
    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Index of the atom selected by a uniform draw `u` in [0, 1).
    pub fn sample_index(&self, u: f64) -> usize {
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.atoms.len() - 1)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The feature map `F(w, x)` of one neuron.
pub trait FeatureMap: Send + Sync + Debug {
    fn name(&self) -> String;
    /// Parameter dimension `p`.
    fn param_dim(&self) -> usize;
    /// Feature dimension `d` this map expects.
    fn input_dim(&self) -> usize;
    fn value(&self, w: &[f64], x: &[f64]) -> f64;
    fn grad(&self, w: &[f64], x: &[f64], out: &mut [f64]);

    /// `D^2_w F(w, x) v`. Central differences of the gradient unless the map
    /// provides a closed form.
    fn hessian_apply(&self, w: &[f64], x: &[f64], v: &[f64], out: &mut [f64]) {
        let p = w.len();
        let scale = norm(v).max(1e-300);
        let eps = 1e-5 * (1.0 + norm(w)) / scale;
        let mut wp = w.to_vec();
        let mut wm = w.to_vec();
        for i in 0..p {
            wp[i] += eps * v[i];
            wm[i] -= eps * v[i];
        }
        let mut gp = vec![0.0; p];
        let mut gm = vec![0.0; p];
        self.grad(&wp, x, &mut gp);
        self.grad(&wm, x, &mut gm);
        for i in 0..p {
            out[i] = (gp[i] - gm[i]) / (2.0 * eps);
        }
    }

    /// Envelope `Phi(x) >= 1` bounding `F` and its first three differentials.
    fn envelope(&self, x: &[f64]) -> f64;
}

/// Scalar loss `l(yhat, y)` and its derivatives in the first argument.
pub trait LossFn: Send + Sync + Debug {
    fn name(&self) -> String;
    fn value(&self, yhat: f64, y: f64) -> f64;
    fn d1(&self, yhat: f64, y: f64) -> f64;
    fn d2(&self, yhat: f64, y: f64) -> f64;
    fn d3(&self, yhat: f64, y: f64) -> f64 {
        let eps = 1e-4 * (1.0 + yhat.abs());
        (self.d2(yhat + eps, y) - self.d2(yhat - eps, y)) / (2.0 * eps)
    }
    /// Envelope `Psi(y) >= 1`.
    fn envelope(&self, y: f64) -> f64;
}

/// Penalty `V(w)`.
pub trait Penalty: Send + Sync + Debug {
    fn name(&self) -> String;
    fn value(&self, w: &[f64]) -> f64;
    fn grad(&self, w: &[f64], out: &mut [f64]);
}

/// `F(w, x) = tanh(<w, x>)`, with `p = d`.
#[derive(Clone, Copy, Debug)]
pub struct TanhDot {
    pub dim: usize,
}

// sup |tanh''| = 4 / (3 sqrt 3), sup |tanh'''| = 2
const TANH_D2_SUP: f64 = 0.769_800_358_919_501_2;
const TANH_D3_SUP: f64 = 2.0;

impl FeatureMap for TanhDot {
    fn name(&self) -> String {
        "tanh-dot".into()
    }
    fn param_dim(&self) -> usize {
        self.dim
    }
    fn input_dim(&self) -> usize {
        self.dim
    }
    #[inline]
    fn value(&self, w: &[f64], x: &[f64]) -> f64 {
        dot(w, x).tanh()
    }
    #[inline]
    fn grad(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let t = dot(w, x).tanh();
        let s = 1.0 - t * t;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = s * xi;
        }
    }
    fn hessian_apply(&self, w: &[f64], x: &[f64], v: &[f64], out: &mut [f64]) {
        let t = dot(w, x).tanh();
        let c = -2.0 * t * (1.0 - t * t) * dot(x, v);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = c * xi;
        }
    }
    fn envelope(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        1.0 + r + TANH_D2_SUP * r * r + TANH_D3_SUP * r * r * r
    }
}

/// `F = 0`.
#[derive(Clone, Copy, Debug)]
pub struct ZeroFeature {
    pub param_dim: usize,
    pub input_dim: usize,
}

impl FeatureMap for ZeroFeature {
    fn name(&self) -> String {
        "zero".into()
    }
    fn param_dim(&self) -> usize {
        self.param_dim
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn value(&self, _w: &[f64], _x: &[f64]) -> f64 {
        0.0
    }
    fn grad(&self, _w: &[f64], _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn hessian_apply(&self, _w: &[f64], _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn envelope(&self, _x: &[f64]) -> f64 {
        1.0
    }
}

/// `l = (yhat - y)^2 / 2`.
#[derive(Clone, Copy, Debug)]
pub struct SquareLoss;

impl LossFn for SquareLoss {
    fn name(&self) -> String {
        "square".into()
    }
    fn value(&self, yhat: f64, y: f64) -> f64 {
        0.5 * (yhat - y) * (yhat - y)
    }
    fn d1(&self, yhat: f64, y: f64) -> f64 {
        yhat - y
    }
    fn d2(&self, _yhat: f64, _y: f64) -> f64 {
        1.0
    }
    fn d3(&self, _yhat: f64, _y: f64) -> f64 {
        0.0
    }
    fn envelope(&self, y: f64) -> f64 {
        y.abs().max(1.0)
    }
}

/// `l = log(1 + exp(-y yhat))`.
#[derive(Clone, Copy, Debug)]
pub struct LogisticLoss;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// sup_s |s (1 - s) (1 - 2 s)| over s in [0, 1]
const LOGISTIC_D3_SUP: f64 = 0.096_225_044_864_937_63;

impl LossFn for LogisticLoss {
    fn name(&self) -> String {
        "logistic".into()
    }
    fn value(&self, yhat: f64, y: f64) -> f64 {
        let z = -y * yhat;
        if z > 0.0 {
            z + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p()
        }
    }
    fn d1(&self, yhat: f64, y: f64) -> f64 {
        -y * sigmoid(-y * yhat)
    }
    fn d2(&self, yhat: f64, y: f64) -> f64 {
        let s = sigmoid(-y * yhat);
        y * y * s * (1.0 - s)
    }
    fn d3(&self, yhat: f64, y: f64) -> f64 {
        let s = sigmoid(-y * yhat);
        -y * y * y * s * (1.0 - s) * (1.0 - 2.0 * s)
    }
    fn envelope(&self, y: f64) -> f64 {
        let a = y.abs();
        (0.5 * a).max(0.25 * a * a + LOGISTIC_D3_SUP * a * a * a).max(1.0)
    }
}

/// `V(w) = lambda |w|^2 / 2`; `lambda = 0` is the zero penalty.
#[derive(Clone, Copy, Debug)]
pub struct QuadraticPenalty {
    pub lambda: f64,
}

impl Penalty for QuadraticPenalty {
    fn name(&self) -> String {
        if self.lambda == 0.0 {
            "zero".into()
        } else {
            format!("quadratic({})", self.lambda)
        }
    }
    fn value(&self, w: &[f64]) -> f64 {
        0.5 * self.lambda * dot(w, w)
    }
    #[inline]
    fn grad(&self, w: &[f64], out: &mut [f64]) {
        for (o, wi) in out.iter_mut().zip(w) {
            *o = self.lambda * wi;
        }
    }
}

/// A complete learning problem `(F, l, V, Phi, Psi)`. Immutable and cheap to
/// clone; shared across worker threads.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub feature: Arc<dyn FeatureMap>,
    pub loss: Arc<dyn LossFn>,
    pub penalty: Arc<dyn Penalty>,
}

impl ModelSpec {
    pub fn new(feature: Arc<dyn FeatureMap>, loss: Arc<dyn LossFn>, penalty: Arc<dyn Penalty>) -> Self {
        Self {
            feature,
            loss,
            penalty,
        }
    }

    /// Builds a model from the builtin registry.
    ///
    /// Features: `tanh-dot` (p = d = `dim`), `zero` (p = d = `dim`).
    /// Losses: `square`, `logistic`. Penalty: `lambda |w|^2 / 2`.
    pub fn builtin(feature: &str, loss: &str, lambda: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("parameter dimension must be positive".into()));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!("penalty weight {lambda} must be a finite nonnegative number")));
        }
        let feature: Arc<dyn FeatureMap> = match feature {
            "tanh-dot" => Arc::new(TanhDot { dim }),
            "zero" => Arc::new(ZeroFeature {
                param_dim: dim,
                input_dim: dim,
            }),
            other => return Err(Error::Domain(format!("unknown feature `{other}`"))),
        };
        let loss: Arc<dyn LossFn> = match loss {
            "square" => Arc::new(SquareLoss),
            "logistic" => Arc::new(LogisticLoss),
            other => return Err(Error::Domain(format!("unknown loss `{other}`"))),
        };
        Ok(Self::new(feature, loss, Arc::new(QuadraticPenalty { lambda })))
    }

    /// Parameter dimension `p`.
    pub fn p(&self) -> usize {
        self.feature.param_dim()
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        self.feature.envelope(x)
    }

    pub fn psi(&self, y: f64) -> f64 {
        self.loss.envelope(y)
    }

    pub fn check_data(&self, pi: &DataDistribution) -> Result<()> {
        check_dim("feature input", self.feature.input_dim(), pi.dim())
    }
}

/// Run hyperparameters shared by every engine.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    /// Stepsize decay exponent, in [0, 1).
    pub alpha: f64,
    /// Particle-count exponent of the stepsize, in [0, 1].
    pub beta: f64,
    /// Base stepsize.
    pub gamma: f64,
    /// Batch size `M`.
    #[serde(rename = "batch")]
    pub batch: usize,
    /// Langevin temperature.
    #[serde(default)]
    pub eta: f64,
    /// Time horizon `T`.
    #[serde(rename = "horizon")]
    pub horizon: f64,
    /// Solver step of the continuous-time engines.
    pub dt: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 1.0,
            gamma: 1.0,
            batch: 1,
            eta: 0.0,
            horizon: 5.0,
            dt: 0.01,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Err(Error::Config {
            field: field.into(),
            message,
        });
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha", format!("{} is outside [0, 1)", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", format!("{} is outside [0, 1]", self.beta));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad("gamma", format!("{} must be positive", self.gamma));
        }
        if self.batch == 0 {
            return bad("batch", "batch size must be at least 1".into());
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad("eta", format!("{} must be nonnegative", self.eta));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return bad("horizon", format!("{} must be nonnegative", self.horizon));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt", format!("{} must be positive", self.dt));
        }
        Ok(())
    }

    /// `gamma_{alpha,beta}(N)` for these hyperparameters.
    pub fn gamma_scale(&self, n_particles: usize) -> Result<f64> {
        gamma_scale(self.alpha, self.beta, self.gamma, n_particles)
    }

    /// Number of SGD iterations covering the horizon, `floor(T / gamma_{alpha,beta}(N))`.
    pub fn sgd_iterations(&self, n_particles: usize) -> Result<usize> {
        let g = self.gamma_scale(n_particles)?;
        Ok((self.horizon / g * (1.0 + 1e-12)).floor() as usize)
    }

    /// Step count and effective step of the continuous-time engines: the
    /// smallest `n` with `T / n <= dt`.
    pub fn time_grid(&self) -> (usize, f64) {
        if self.horizon == 0.0 {
            return (0, self.dt);
        }
        let n = (self.horizon / self.dt - 1e-9).ceil().max(1.0) as usize;
        (n, self.horizon / n as f64)
    }
}

/// `gamma_{alpha,beta}(N) = gamma^{1/(1-alpha)} N^{(beta-1)/(1-alpha)}`: the
/// time elapsed per SGD iteration.
pub fn gamma_scale(alpha: f64, beta: f64, gamma: f64, n_particles: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha = {alpha} must lie in [0, 1)")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain(format!("beta = {beta} must lie in [0, 1]")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma = {gamma} must be positive")));
    }
    if n_particles == 0 {
        return Err(Error::Domain("particle count must be at least 1".into()));
    }
    let inv = 1.0 / (1.0 - alpha);
    if alpha == 0.0 && beta == 0.0 {
        return Ok(gamma / n_particles as f64);
    }
    if beta == 1.0 {
        return Ok(gamma.powf(inv));
    }
    Ok(gamma.powf(inv) * (n_particles as f64).powf((beta - 1.0) * inv))
}

/// SGD stepsize `gamma N^beta (n + gamma_{alpha,beta}(N)^{-1})^{-alpha}` at
/// iteration `n`; it multiplies the gradient of the empirical risk.
pub fn stepsize_schedule(hyper: &Hyperparams, n_particles: usize, iteration: usize) -> Result<f64> {
    let g = gamma_scale(hyper.alpha, hyper.beta, hyper.gamma, n_particles)?;
    let base = hyper.gamma * (n_particles as f64).powf(hyper.beta);
    if hyper.alpha == 0.0 {
        return Ok(base);
    }
    Ok(base * (iteration as f64 + 1.0 / g).powf(-hyper.alpha))
}

/// `(t + 1)^{-alpha}`.
pub fn time_weight(t: f64, alpha: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time {t} must be nonnegative")));
    }
    if alpha == 0.0 {
        return Ok(1.0);
    }
    Ok((t + 1.0).powf(-alpha))
}

/// One failed inequality found by [`check_assumptions`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: String,
    pub atom: Option<usize>,
    pub probe: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
}

/// Outcome of the hypothesis audit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub violations: Vec<Violation>,
    pub checks: usize,
    /// `sum_atoms weight (Phi^10 + Psi^4)`.
    pub moment: f64,
    /// Largest `|D^2 V| + |D^3 V|` seen over the probes.
    pub penalty_curvature: f64,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

// Relative slack for inequalities whose left side comes from finite differences.
const FD_SLACK: f64 = 1e-6;

fn hessian_matrix(model: &ModelSpec, w: &[f64], x: &[f64]) -> DMatrix<f64> {
    let p = w.len();
    let mut h = DMatrix::zeros(p, p);
    let mut e = vec![0.0; p];
    let mut col = vec![0.0; p];
    for j in 0..p {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        model.feature.hessian_apply(w, x, &e, &mut col);
        for i in 0..p {
            h[(i, j)] = col[i];
        }
    }
    symmetrize(&mut h);
    h
}

fn third_differential_norm(model: &ModelSpec, w: &[f64], x: &[f64]) -> f64 {
    // Frobenius norm of the finite-difference tensor; an upper bound on the
    // operator norm, equal to it for rank-one tensors such as tanh-dot's.
    let p = w.len();
    let eps = 1e-4 * (1.0 + norm(w));
    let mut total = 0.0;
    let mut wp = w.to_vec();
    let mut wm = w.to_vec();
    for i in 0..p {
        wp[i] = w[i] + eps;
        wm[i] = w[i] - eps;
        let hp = hessian_matrix(model, &wp, x);
        let hm = hessian_matrix(model, &wm, x);
        for a in 0..p {
            for b in 0..p {
                let d = (hp[(a, b)] - hm[(a, b)]) / (2.0 * eps);
                total += d * d;
            }
        }
        wp[i] = w[i];
        wm[i] = w[i];
    }
    total.sqrt()
}

fn penalty_curvature(model: &ModelSpec, w: &[f64]) -> f64 {
    let p = w.len();
    let hess = |w: &[f64]| -> DMatrix<f64> {
        let eps = 1e-4 * (1.0 + norm(w));
        let mut h = DMatrix::zeros(p, p);
        let mut wp = w.to_vec();
        let mut wm = w.to_vec();
        let mut gp = vec![0.0; p];
        let mut gm = vec![0.0; p];
        for j in 0..p {
            wp[j] = w[j] + eps;
            wm[j] = w[j] - eps;
            model.penalty.grad(&wp, &mut gp);
            model.penalty.grad(&wm, &mut gm);
            for i in 0..p {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * eps);
            }
            wp[j] = w[j];
            wm[j] = w[j];
        }
        symmetrize(&mut h);
        h
    };
    let h0 = hess(w);
    let eps = 1e-3 * (1.0 + norm(w));
    let mut third = 0.0;
    let mut wp = w.to_vec();
    let mut wm = w.to_vec();
    for i in 0..p {
        wp[i] = w[i] + eps;
        wm[i] = w[i] - eps;
        let (hp, hm) = (hess(&wp), hess(&wm));
        for a in 0..p {
            for b in 0..p {
                let d = (hp[(a, b)] - hm[(a, b)]) / (2.0 * eps);
                third += d * d;
            }
        }
        wp[i] = w[i];
        wm[i] = w[i];
    }
    spectral_norm_sym(&h0) + third.sqrt()
}

/// Audits the regularity hypotheses on `(model, pi)` at the probe weights.
///
/// Checks, for every atom and probe: the loss bounds on `|d1 l(0, y)|` and
/// `|d2 l| + |d3 l|` (at `yhat` in a fixed grid plus the probe predictions),
/// the feature bound `|F| + |DF| + |D^2 F| + |D^3 F| <= Phi(x)`, the envelope
/// floors `Phi, Psi >= 1`, finiteness of the penalty curvature and of the
/// moment `sum weight (Phi^10 + Psi^4)`. Failures are collected, not raised.
pub fn check_assumptions(model: &ModelSpec, pi: &DataDistribution, probe_ws: &[Vec<f64>]) -> Result<AssumptionReport> {
    if probe_ws.is_empty() {
        return Err(Error::Precondition("check_assumptions needs at least one probe weight".into()));
    }
    model.check_data(pi)?;
    let p = model.p();
    for w in probe_ws {
        check_dim("probe weight", p, w.len())?;
    }
    let mut report = AssumptionReport::default();
    let violate = |report: &mut AssumptionReport, condition: &str, atom, probe, lhs: f64, rhs: f64| {
        report.checks += 1;
        if !(lhs <= rhs) {
            report.violations.push(Violation {
                condition: condition.into(),
                atom,
                probe,
                lhs,
                rhs,
            });
        }
    };

    let yhat_grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.5).collect();
    let mut grad = vec![0.0; p];
    for (a, atom) in pi.atoms().iter().enumerate() {
        let phi = model.phi(&atom.x);
        let psi = model.psi(atom.y);
        violate(&mut report, "Phi(x) >= 1", Some(a), None, 1.0, phi);
        violate(&mut report, "Psi(y) >= 1", Some(a), None, 1.0, psi);
        violate(
            &mut report,
            "|d1 l(0, y)| <= Psi(y)",
            Some(a),
            None,
            model.loss.d1(0.0, atom.y).abs(),
            psi,
        );
        let mut yhats = yhat_grid.clone();
        yhats.extend(probe_ws.iter().map(|w| model.feature.value(w, &atom.x)));
        for yhat in yhats {
            let lhs = model.loss.d2(yhat, atom.y).abs() + model.loss.d3(yhat, atom.y).abs();
            violate(&mut report, "|d2 l| + |d3 l| <= Psi(y)", Some(a), None, lhs, psi * (1.0 + FD_SLACK));
        }
        for (k, w) in probe_ws.iter().enumerate() {
            model.feature.grad(w, &atom.x, &mut grad);
            let hess = hessian_matrix(model, w, &atom.x);
            let lhs = model.feature.value(w, &atom.x).abs()
                + norm(&grad)
                + spectral_norm_sym(&hess)
                + third_differential_norm(model, w, &atom.x);
            violate(
                &mut report,
                "|F| + |DF| + |D2F| + |D3F| <= Phi(x)",
                Some(a),
                Some(k),
                lhs,
                phi * (1.0 + FD_SLACK),
            );
        }
        report.moment += atom.weight * (phi.powi(10) + psi.powi(4));
    }
    let moment = report.moment;
    violate(&mut report, "moment sum weight (Phi^10 + Psi^4) finite", None, None, moment, f64::MAX);
    for (k, w) in probe_ws.iter().enumerate() {
        let c = penalty_curvature(model, w);
        report.penalty_curvature = report.penalty_curvature.max(c);
        violate(&mut report, "|D2 V| + |D3 V| bounded", None, Some(k), c, f64::MAX);
    }
    Ok(report)
}
