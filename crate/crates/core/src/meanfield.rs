//! Exact finite-sum kernels: predictions, structural risk, the mean field,
//! the gradient-noise field and its covariance.
//!
//! Every quantity depends on the population law only through the per-atom
//! predictions `mu[F(., x)]`, which [`FieldCache`] computes once per step.
//! Particle sums are accumulated in fixed-size chunks combined in index
//! order, so results are bitwise identical for any number of worker threads.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::model::{dot, norm, DataAtom, DataDistribution, ModelSpec};

const CHUNK: usize = 1024;

/// Weighted point cloud in R^p; uniform weights unless given.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    p: usize,
    locations: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl EmpiricalMeasure {
    /// Uniform measure on the rows of a row-major `N x p` buffer.
    pub fn uniform(p: usize, locations: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(Error::Domain("parameter dimension must be positive".into()));
        }
        if locations.is_empty() || locations.len() % p != 0 {
            return Err(Error::Precondition(format!(
                "{} coordinates do not form a nonempty ensemble in dimension {p}",
                locations.len()
            )));
        }
        Ok(Self {
            p,
            locations,
            weights: None,
        })
    }

    pub fn weighted(p: usize, locations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut mu = Self::uniform(p, locations)?;
        check_dim("measure weights", mu.len(), weights.len())?;
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("measure weights must be nonnegative and sum to 1 (got {total})")));
        }
        mu.weights = Some(weights);
        Ok(mu)
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let p = points.first().map(Vec::len).unwrap_or(0);
        let mut flat = Vec::with_capacity(points.len() * p);
        for w in points {
            check_dim("measure location", p, w.len())?;
            flat.extend_from_slice(w);
        }
        Self::uniform(p, flat)
    }

    pub fn dirac(w: &[f64]) -> Result<Self> {
        Self::uniform(w.len(), w.to_vec())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.locations.len() / self.p
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn location(&self, k: usize) -> &[f64] {
        &self.locations[k * self.p..(k + 1) * self.p]
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn locations_mut(&mut self) -> &mut [f64] {
        &mut self.locations
    }

    pub fn into_locations(self) -> Vec<f64> {
        self.locations
    }

    pub fn weight(&self, k: usize) -> f64 {
        match &self.weights {
            Some(w) => w[k],
            None => 1.0 / self.len() as f64,
        }
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// `mu[f]`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64 + Sync) -> f64 {
        let n = self.len();
        let total = chunked_sum(n, |k| self.weight_or_one(k) * f(self.location(k)));
        match self.weights {
            Some(_) => total,
            None => total / n as f64,
        }
    }

    /// Mean of each coordinate.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.p).map(|c| self.integrate(|w| w[c])).collect()
    }

    /// `mu[|w|^2]`.
    pub fn second_moment(&self) -> f64 {
        self.integrate(|w| dot(w, w))
    }

    fn weight_or_one(&self, k: usize) -> f64 {
        match &self.weights {
            Some(w) => w[k],
            None => 1.0,
        }
    }
}

/// Sum of `term(k)` for `k < n` in fixed chunks, combined in order.
pub(crate) fn chunked_sum(n: usize, term: impl Fn(usize) -> f64 + Sync) -> f64 {
    let partial = |c: usize| -> f64 {
        let end = ((c + 1) * CHUNK).min(n);
        (c * CHUNK..end).map(&term).sum()
    };
    let chunks = n.div_ceil(CHUNK);
    if chunks <= 1 {
        return partial(0);
    }
    let parts: Vec<f64> = (0..chunks).into_par_iter().map(partial).collect();
    parts.iter().sum()
}

/// Per-atom predictions `a(x) = mu[F(., x)]` and residual derivatives
/// `d1 l(a(x), y)` for one population law.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldCache {
    predictions: Vec<f64>,
    residual_derivs: Vec<f64>,
}

impl FieldCache {
    pub fn new(mu: &EmpiricalMeasure, model: &ModelSpec, pi: &DataDistribution) -> Result<Self> {
        model.check_data(pi)?;
        check_dim("measure dimension", model.p(), mu.p())?;
        let predictions = pi
            .atoms()
            .iter()
            .map(|atom| mu.integrate(|w| model.feature.value(w, &atom.x)))
            .collect();
        Ok(Self::from_predictions(predictions, model, pi))
    }

    /// Builds the cache from already computed predictions, one per atom.
    pub fn from_predictions(predictions: Vec<f64>, model: &ModelSpec, pi: &DataDistribution) -> Self {
        let residual_derivs = predictions
            .iter()
            .zip(pi.atoms())
            .map(|(&a, atom)| model.loss.d1(a, atom.y))
            .collect();
        Self {
            predictions,
            residual_derivs,
        }
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn residual_derivs(&self) -> &[f64] {
        &self.residual_derivs
    }
}

/// `mu[F(., x)]`.
pub fn predict(mu: &EmpiricalMeasure, model: &ModelSpec, x: &[f64]) -> Result<f64> {
    check_dim("feature input", model.feature.input_dim(), x.len())?;
    check_dim("measure dimension", model.p(), mu.p())?;
    Ok(mu.integrate(|w| model.feature.value(w, x)))
}

/// `sum_atoms weight l(nu[F(., x)], y) + nu[V]` for the uniform law of the ensemble.
pub fn structural_risk(ensemble: &EmpiricalMeasure, model: &ModelSpec, pi: &DataDistribution) -> Result<f64> {
    let cache = FieldCache::new(ensemble, model, pi)?;
    let data: f64 = pi
        .atoms()
        .iter()
        .zip(cache.predictions())
        .map(|(atom, &a)| atom.weight * model.loss.value(a, atom.y))
        .sum();
    Ok(data + ensemble.integrate(|w| model.penalty.value(w)))
}

/// Gradient of the single-sample risk with respect to every particle:
/// row `k` is `(1/N) [d1 l(nu[F(., x)], y) DF(w_k, x) + DV(w_k)]`.
pub fn per_sample_grad(ensemble: &EmpiricalMeasure, model: &ModelSpec, atom: &DataAtom) -> Result<Vec<f64>> {
    let a = predict(ensemble, model, &atom.x)?;
    let d1 = model.loss.d1(a, atom.y);
    let (n, p) = (ensemble.len(), ensemble.p());
    let mut out = vec![0.0; n * p];
    let mut pen = vec![0.0; p];
    for k in 0..n {
        let row = &mut out[k * p..(k + 1) * p];
        let w = ensemble.location(k);
        model.feature.grad(w, &atom.x, row);
        model.penalty.grad(w, &mut pen);
        for (r, v) in row.iter_mut().zip(&pen) {
            *r = (d1 * *r + v) / n as f64;
        }
    }
    Ok(out)
}

/// `pi`-average of [`per_sample_grad`]: the gradient of the structural risk.
pub fn risk_grad(ensemble: &EmpiricalMeasure, model: &ModelSpec, pi: &DataDistribution) -> Result<Vec<f64>> {
    let mut total = vec![0.0; ensemble.locations().len()];
    for atom in pi.atoms() {
        let g = per_sample_grad(ensemble, model, atom)?;
        for (t, v) in total.iter_mut().zip(g) {
            *t += atom.weight * v;
        }
    }
    Ok(total)
}

/// Reusable buffers for per-particle field evaluations.
#[derive(Clone, Debug)]
pub struct Scratch {
    grads: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    pub fn new(p: usize, atoms: usize) -> Self {
        Self {
            grads: vec![0.0; p * atoms],
            tmp: vec![0.0; p],
        }
    }
}

/// Fills `scratch.grads` with `g_a = d1_a DF(w, x_a)` per atom and writes
/// `h_tilde = -sum_a weight_a g_a` into `out`.
fn atom_grads(w: &[f64], cache: &FieldCache, model: &ModelSpec, pi: &DataDistribution, scratch: &mut Scratch, out: &mut [f64]) {
    let p = w.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (a, atom) in pi.atoms().iter().enumerate() {
        let g = &mut scratch.grads[a * p..(a + 1) * p];
        model.feature.grad(w, &atom.x, g);
        let d1 = cache.residual_derivs[a];
        for (gi, oi) in g.iter_mut().zip(out.iter_mut()) {
            *gi *= d1;
            *oi -= atom.weight * *gi;
        }
    }
}

/// Writes `h_tilde(w, mu)` into `out`.
pub fn tilde_h_with(w: &[f64], cache: &FieldCache, model: &ModelSpec, pi: &DataDistribution, scratch: &mut Scratch, out: &mut [f64]) {
    atom_grads(w, cache, model, pi, scratch, out);
}

/// Writes `h(w, mu) = h_tilde(w, mu) - DV(w)` into `out`.
pub fn h_with(w: &[f64], cache: &FieldCache, model: &ModelSpec, pi: &DataDistribution, scratch: &mut Scratch, out: &mut [f64]) {
    atom_grads(w, cache, model, pi, scratch, out);
    model.penalty.grad(w, &mut scratch.tmp);
    for (o, v) in out.iter_mut().zip(&scratch.tmp) {
        *o -= v;
    }
}

/// Writes `h(w, mu)` into `h_out` and returns `Sigma(w, mu)`.
pub fn h_and_sigma_with(
    w: &[f64],
    cache: &FieldCache,
    model: &ModelSpec,
    pi: &DataDistribution,
    scratch: &mut Scratch,
    h_out: &mut [f64],
) -> DMatrix<f64> {
    let p = w.len();
    atom_grads(w, cache, model, pi, scratch, h_out);
    let mut sigma = DMatrix::zeros(p, p);
    for (a, atom) in pi.atoms().iter().enumerate() {
        let g = &scratch.grads[a * p..(a + 1) * p];
        for i in 0..p {
            let xi_i = -h_out[i] - g[i];
            for j in 0..=i {
                let xi_j = -h_out[j] - g[j];
                sigma[(i, j)] += atom.weight * xi_i * xi_j;
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            sigma[(j, i)] = sigma[(i, j)];
        }
    }
    model.penalty.grad(w, &mut scratch.tmp);
    for (o, v) in h_out.iter_mut().zip(&scratch.tmp) {
        *o -= v;
    }
    sigma
}

/// Scalar fast path for `p = 1`: returns `(h(w, mu), Sigma(w, mu))`.
#[inline]
pub fn h_and_sigma_scalar(w: f64, cache: &FieldCache, model: &ModelSpec, pi: &DataDistribution) -> (f64, f64) {
    let ws = [w];
    let mut g = [0.0];
    let mut mean = 0.0;
    for (a, atom) in pi.atoms().iter().enumerate() {
        model.feature.grad(&ws, &atom.x, &mut g);
        mean += atom.weight * cache.residual_derivs[a] * g[0];
    }
    let mut sigma = 0.0;
    if pi.len() > 1 {
        for (a, atom) in pi.atoms().iter().enumerate() {
            model.feature.grad(&ws, &atom.x, &mut g);
            let xi = mean - cache.residual_derivs[a] * g[0];
            sigma += atom.weight * xi * xi;
        }
    }
    let mut pen = [0.0];
    model.penalty.grad(&ws, &mut pen);
    (-mean - pen[0], sigma)
}

fn cache_for(mu: &EmpiricalMeasure, w: &[f64], model: &ModelSpec, pi: &DataDistribution) -> Result<FieldCache> {
    check_dim("weight vector", model.p(), w.len())?;
    FieldCache::new(mu, model, pi)
}

/// `h(w, mu) = -sum_atoms weight d1 l(mu[F(., x)], y) DF(w, x) - DV(w)`.
pub fn mean_field_h(w: &[f64], mu: &EmpiricalMeasure, model: &ModelSpec, pi: &DataDistribution) -> Result<Vec<f64>> {
    let cache = cache_for(mu, w, model, pi)?;
    let mut out = vec![0.0; w.len()];
    h_with(w, &cache, model, pi, &mut Scratch::new(w.len(), pi.len()), &mut out);
    Ok(out)
}

/// The data term of the mean field, without the penalty gradient.
pub fn tilde_h(w: &[f64], mu: &EmpiricalMeasure, model: &ModelSpec, pi: &DataDistribution) -> Result<Vec<f64>> {
    let cache = cache_for(mu, w, model, pi)?;
    let mut out = vec![0.0; w.len()];
    tilde_h_with(w, &cache, model, pi, &mut Scratch::new(w.len(), pi.len()), &mut out);
    Ok(out)
}

/// `xi(w, mu, x, y) = -h_tilde(w, mu) - d1 l(mu[F(., x)], y) DF(w, x)` at atom `index`.
pub fn noise_xi(w: &[f64], mu: &EmpiricalMeasure, model: &ModelSpec, pi: &DataDistribution, index: usize) -> Result<Vec<f64>> {
    let cache = cache_for(mu, w, model, pi)?;
    if index >= pi.len() {
        return Err(Error::Precondition(format!("atom index {index} out of range")));
    }
    let p = w.len();
    let mut scratch = Scratch::new(p, pi.len());
    let mut ht = vec![0.0; p];
    atom_grads(w, &cache, model, pi, &mut scratch, &mut ht);
    Ok((0..p).map(|i| -ht[i] - scratch.grads[index * p + i]).collect())
}

/// `Sigma(w, mu) = sum_atoms weight xi xi^T`.
pub fn covariance_sigma(w: &[f64], mu: &EmpiricalMeasure, model: &ModelSpec, pi: &DataDistribution) -> Result<DMatrix<f64>> {
    let cache = cache_for(mu, w, model, pi)?;
    let mut h = vec![0.0; w.len()];
    Ok(h_and_sigma_with(w, &cache, model, pi, &mut Scratch::new(w.len(), pi.len()), &mut h))
}

/// `G(w, x, y) = (Phi(x)^4 + Psi(y)^2) F(w, x)`.
pub fn g_envelope(w: &[f64], model: &ModelSpec, atom: &DataAtom) -> f64 {
    (model.phi(&atom.x).powi(4) + model.psi(atom.y).powi(2)) * model.feature.value(w, &atom.x)
}

/// `(sum_atoms weight |mu1[G] - mu2[G]|^2)^{1/2}`, the law discrepancy in the
/// Lipschitz estimate of the mean field.
pub fn g_discrepancy(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, model: &ModelSpec, pi: &DataDistribution) -> f64 {
    pi.atoms()
        .iter()
        .map(|atom| {
            let d = mu1.integrate(|w| g_envelope(w, model, atom)) - mu2.integrate(|w| g_envelope(w, model, atom));
            atom.weight * d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `2 sum_atoms weight Psi(y) Phi(x)^2`, a bound on `|h_tilde|`.
pub fn tilde_h_bound(model: &ModelSpec, pi: &DataDistribution) -> f64 {
    2.0 * pi
        .atoms()
        .iter()
        .map(|a| a.weight * model.psi(a.y) * model.phi(&a.x).powi(2))
        .sum::<f64>()
}

/// `2 sum_atoms weight (L2^2 + 2 Psi^2 Phi^4)` with `L2` from [`tilde_h_bound`],
/// a bound on `Tr Sigma`.
pub fn trace_bound(model: &ModelSpec, pi: &DataDistribution) -> f64 {
    let l2 = tilde_h_bound(model, pi);
    2.0 * pi
        .atoms()
        .iter()
        .map(|a| a.weight * (l2 * l2 + 2.0 * model.psi(a.y).powi(2) * model.phi(&a.x).powi(4)))
        .sum::<f64>()
}

/// `2 Psi(y) max(1, |yhat|)`, a bound on `|d1 l(yhat, y)|`.
pub fn loss_derivative_bound(model: &ModelSpec, yhat: f64, y: f64) -> f64 {
    2.0 * model.psi(y) * yhat.abs().max(1.0)
}

/// Euclidean norm, re-exported for callers that work on raw slices.
pub fn vec_norm(v: &[f64]) -> f64 {
    norm(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{NoisePlan, Stream};
    use proptest::prelude::*;

    fn tanh_square(lambda: f64, p: usize) -> ModelSpec {
        ModelSpec::builtin("tanh-dot", "square", lambda, p).unwrap()
    }

    #[test]
    fn predict_examples() {
        let m = tanh_square(0.0, 1);
        let d0 = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        assert_eq!(predict(&d0, &m, &[1.0]).unwrap(), 0.0);
        let sym = EmpiricalMeasure::uniform(1, vec![-0.7, 0.7]).unwrap();
        assert_eq!(predict(&sym, &m, &[1.3]).unwrap(), 0.0);
        let two = EmpiricalMeasure::uniform(1, vec![0.5, 1.5]).unwrap();
        let expected = (0.5f64.tanh() + 1.5f64.tanh()) / 2.0;
        assert!((predict(&two, &m, &[1.0]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.683_633).abs() < 1e-6);
        assert!(matches!(predict(&two, &m, &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn risk_examples() {
        let m = tanh_square(0.0, 1);
        let pi = DataDistribution::dirac(vec![1.0], 1.0);
        let mu = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        assert_eq!(structural_risk(&mu, &m, &pi).unwrap(), 0.5);
        let z = ModelSpec::builtin("zero", "square", 0.0, 1).unwrap();
        let mu = EmpiricalMeasure::uniform(1, vec![3.0, -1.0, 8.0]).unwrap();
        assert_eq!(structural_risk(&mu, &z, &pi).unwrap(), 0.5);
    }

    #[test]
    fn mean_field_examples() {
        let m = tanh_square(0.0, 1);
        let d0 = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        let pi0 = DataDistribution::dirac(vec![1.0], 0.0);
        assert_eq!(mean_field_h(&[0.0], &d0, &m, &pi0).unwrap(), vec![0.0]);
        let pi1 = DataDistribution::dirac(vec![1.0], 1.0);
        assert_eq!(mean_field_h(&[0.0], &d0, &m, &pi1).unwrap(), vec![1.0]);
        let mq = tanh_square(1.0, 1);
        let d2 = EmpiricalMeasure::dirac(&[2.0]).unwrap();
        let h = mean_field_h(&[2.0], &d2, &mq, &pi1).unwrap()[0];
        let t = 2.0f64.tanh();
        let oracle = -(t - 1.0) * (1.0 - t * t) - 2.0;
        assert!((h - oracle).abs() < 1e-15);
        assert!((h + 1.99746).abs() < 1e-5);
    }

    #[test]
    fn noise_examples() {
        let m = tanh_square(0.0, 1);
        let d0 = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        let single = DataDistribution::dirac(vec![0.4], 0.3);
        assert_eq!(noise_xi(&[0.2], &d0, &m, &single, 0).unwrap(), vec![0.0]);
        assert_eq!(covariance_sigma(&[0.2], &d0, &m, &single).unwrap()[(0, 0)], 0.0);

        let pi = DataDistribution::uniform(vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)]).unwrap();
        assert_eq!(noise_xi(&[0.0], &d0, &m, &pi, 0).unwrap(), vec![1.0]);
        assert_eq!(noise_xi(&[0.0], &d0, &m, &pi, 1).unwrap(), vec![-1.0]);
        let sigma = covariance_sigma(&[0.0], &d0, &m, &pi).unwrap();
        assert_eq!(sigma[(0, 0)], 1.0);
        assert_eq!(crate::linalg::sqrt_psd(&sigma).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn g_envelope_examples() {
        let z = ModelSpec::builtin("zero", "square", 0.0, 1).unwrap();
        let atom = DataAtom::new(vec![2.0], 3.0, 1.0);
        assert_eq!(g_envelope(&[5.0], &z, &atom), 0.0);
        let m = tanh_square(0.0, 1);
        assert_eq!(g_envelope(&[0.0], &m, &atom), 0.0);
        let unit = ModelSpec::new(
            std::sync::Arc::new(UnitEnvelopeTanh),
            std::sync::Arc::new(crate::model::SquareLoss),
            std::sync::Arc::new(crate::model::QuadraticPenalty { lambda: 0.0 }),
        );
        let g = g_envelope(&[1.0], &unit, &DataAtom::new(vec![1.0], 1.0, 1.0));
        assert_eq!(g, 2.0 * 1.0f64.tanh());
        assert!((g - 1.523_188).abs() < 1e-6);
    }

    #[derive(Debug)]
    struct UnitEnvelopeTanh;
    impl crate::model::FeatureMap for UnitEnvelopeTanh {
        fn name(&self) -> String {
            "tanh-unit".into()
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn value(&self, w: &[f64], x: &[f64]) -> f64 {
            (w[0] * x[0]).tanh()
        }
        fn grad(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
            let t = (w[0] * x[0]).tanh();
            out[0] = (1.0 - t * t) * x[0];
        }
        fn envelope(&self, _x: &[f64]) -> f64 {
            1.0
        }
    }

    #[test]
    fn scalar_path_matches_generic() {
        let m = tanh_square(0.01, 1);
        let pi = DataDistribution::uniform(vec![(vec![-1.0], 0.8), (vec![0.3], 0.5), (vec![1.2], -0.2)]).unwrap();
        let mu = EmpiricalMeasure::uniform(1, vec![-0.3, 0.1, 0.9]).unwrap();
        let cache = FieldCache::new(&mu, &m, &pi).unwrap();
        for &w in &[-2.0, 0.0, 0.4, 3.0] {
            let (h, s) = h_and_sigma_scalar(w, &cache, &m, &pi);
            let mut hv = [0.0];
            let sg = h_and_sigma_with(&[w], &cache, &m, &pi, &mut Scratch::new(1, 3), &mut hv);
            assert!((h - hv[0]).abs() < 1e-15);
            assert!((s - sg[(0, 0)]).abs() < 1e-15);
        }
    }

    fn random_instance(seed: u64) -> (ModelSpec, DataDistribution, EmpiricalMeasure, Vec<f64>) {
        let plan = NoisePlan::new(seed);
        let u = |i: usize| plan.uniform(Stream::Auxiliary, 0, 0, i);
        let p = 1 + (u(0) * 3.0) as usize;
        let loss = if u(1) < 0.5 { "square" } else { "logistic" };
        let model = ModelSpec::builtin("tanh-dot", loss, u(2) * 0.5, p).unwrap();
        let atoms = 2 + (u(3) * 5.0) as usize;
        let mut idx = 10;
        let mut next = || {
            idx += 1;
            u(idx)
        };
        let points = (0..atoms)
            .map(|_| {
                let x: Vec<f64> = (0..p).map(|_| 2.0 * next() - 1.0).collect();
                let y = if loss == "logistic" {
                    if next() < 0.5 { -1.0 } else { 1.0 }
                } else {
                    2.0 * next() - 1.0
                };
                (x, y)
            })
            .collect();
        let pi = DataDistribution::uniform(points).unwrap();
        let n = 1 + (next() * 8.0) as usize;
        let locs: Vec<f64> = (0..n * p).map(|_| 4.0 * next() - 2.0).collect();
        let mu = EmpiricalMeasure::uniform(p, locs).unwrap();
        let w: Vec<f64> = (0..p).map(|_| 4.0 * next() - 2.0).collect();
        (model, pi, mu, w)
    }

    #[test]
    fn gradient_identity_and_finite_differences() {
        for seed in 0..20 {
            let (model, pi, mu, _) = random_instance(seed);
            let n = mu.len();
            let grad = risk_grad(&mu, &model, &pi).unwrap();
            for k in 0..n {
                let h = mean_field_h(mu.location(k), &mu, &model, &pi).unwrap();
                for c in 0..mu.p() {
                    let g = grad[k * mu.p() + c];
                    assert!((h[c] + n as f64 * g).abs() <= 1e-10 * (1.0 + h[c].abs()));
                    let eps = 1e-6;
                    let mut plus = mu.clone();
                    plus.locations_mut()[k * mu.p() + c] += eps;
                    let mut minus = mu.clone();
                    minus.locations_mut()[k * mu.p() + c] -= eps;
                    let fd = (structural_risk(&plus, &model, &pi).unwrap() - structural_risk(&minus, &model, &pi).unwrap())
                        / (2.0 * eps);
                    assert!((fd - g).abs() <= 1e-6 * g.abs().max(1e-3), "seed {seed}: fd {fd} vs {g}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn noise_is_centered_and_bounded(seed in 0u64..100_000) {
            let (model, pi, mu, w) = random_instance(seed);
            let p = w.len();
            let mut mean = vec![0.0; p];
            for (a, atom) in pi.atoms().iter().enumerate() {
                let xi = noise_xi(&w, &mu, &model, &pi, a).unwrap();
                for i in 0..p {
                    mean[i] += atom.weight * xi[i];
                }
            }
            prop_assert!(norm(&mean) <= 1e-10);
            let sigma = covariance_sigma(&w, &mu, &model, &pi).unwrap();
            prop_assert!((&sigma - sigma.transpose()).norm() == 0.0);
            let s = crate::linalg::sqrt_psd(&sigma).unwrap();
            prop_assert!((&s * &s - &sigma).norm() <= 1e-8 * sigma.norm().max(1e-300));

            let ht = tilde_h(&w, &mu, &model, &pi).unwrap();
            prop_assert!(norm(&ht) <= tilde_h_bound(&model, &pi));
            prop_assert!(sigma.trace() <= trace_bound(&model, &pi));
            for atom in pi.atoms() {
                let a = predict(&mu, &model, &atom.x).unwrap();
                prop_assert!(model.loss.d1(a, atom.y).abs() <= loss_derivative_bound(&model, a, atom.y));
            }
        }

        #[test]
        fn loss_derivative_bound_on_samples(yhat in -50.0f64..50.0, y in -5.0f64..5.0) {
            let sq = ModelSpec::builtin("tanh-dot", "square", 0.0, 1).unwrap();
            prop_assert!(sq.loss.d1(yhat, y).abs() <= loss_derivative_bound(&sq, yhat, y));
            let lg = ModelSpec::builtin("tanh-dot", "logistic", 0.0, 1).unwrap();
            prop_assert!(lg.loss.d1(yhat, y).abs() <= loss_derivative_bound(&lg, yhat, y));
        }
    }

    #[test]
    fn lipschitz_ratio_stays_near_calibration() {
        let ratio = |seed: u64| -> f64 {
            let (model, pi, mu1, w1) = random_instance(seed);
            let plan = NoisePlan::new(seed ^ 0xABCD);
            let mut mu2 = mu1.clone();
            for (i, v) in mu2.locations_mut().iter_mut().enumerate() {
                *v += 0.5 * (plan.uniform(Stream::Auxiliary, 1, 0, i) - 0.5);
            }
            let w2: Vec<f64> = w1
                .iter()
                .enumerate()
                .map(|(i, v)| v + 0.5 * (plan.uniform(Stream::Auxiliary, 2, 0, i) - 0.5))
                .collect();
            let h1 = mean_field_h(&w1, &mu1, &model, &pi).unwrap();
            let h2 = mean_field_h(&w2, &mu2, &model, &pi).unwrap();
            let diff: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a - b).collect();
            let dw: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a - b).collect();
            norm(&diff) / (norm(&dw) + g_discrepancy(&mu1, &mu2, &model, &pi))
        };
        let calibration = (0..200).map(ratio).fold(0.0, f64::max);
        assert!(calibration.is_finite() && calibration > 0.0);
        for seed in 1000..1400 {
            let r = ratio(seed);
            assert!(r <= 3.0 * calibration, "seed {seed}: {r} vs calibration {calibration}");
        }
    }

    #[test]
    fn chunked_sum_is_thread_count_independent() {
        let f = |k: usize| ((k as f64) * 0.37).sin() / (1.0 + k as f64);
        let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| chunked_sum(10_000, f));
        let b = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| chunked_sum(10_000, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
