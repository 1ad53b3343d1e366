//! Wasserstein-2 distances between point clouds, the path metric, histograms
//! and log-log rate fits.
//!
//! Point clouds are row-major `n x p` buffers with uniform weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{NoisePlan, Stream};

/// Largest point count accepted by [`w2_exact`].
pub const EXACT_LIMIT: usize = 256;

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn check_nonempty(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Precondition("Wasserstein distance of an empty sample".into()));
    }
    Ok(())
}

/// Exact W2 between two equal-size 1-D samples by sorted pairing.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_nonempty(a, b)?;
    check_dim("sample size", a.len(), b.len())?;
    let (sa, sb) = (sorted(a), sorted(b));
    let sq: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sq / a.len() as f64).sqrt())
}

/// Exact W2 between two 1-D samples of any sizes, integrating the squared
/// difference of the quantile functions.
pub fn w2_quantile(a: &[f64], b: &[f64]) -> Result<f64> {
    check_nonempty(a, b)?;
    let (sa, sb) = (sorted(a), sorted(b));
    let (n, m) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0.0;
    let mut total = 0.0;
    while i < sa.len() && j < sb.len() {
        let next_a = (i + 1) as f64 / n;
        let next_b = (j + 1) as f64 / m;
        let next = next_a.min(next_b);
        let d = sa[i] - sb[j];
        total += (next - t) * d * d;
        t = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(total.max(0.0).sqrt())
}

/// Minimum-cost perfect assignment on a square cost matrix (row-major),
/// returning the column assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // shortest augmenting paths with row/column potentials, 1-based sentinels
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_cloud(a: &[f64], b: &[f64], p: usize) -> Result<usize> {
    check_nonempty(a, b)?;
    if p == 0 || a.len() % p != 0 || b.len() % p != 0 {
        return Err(Error::Precondition(format!("sample buffers are not multiples of dimension {p}")));
    }
    check_dim("sample size", a.len() / p, b.len() / p)?;
    Ok(a.len() / p)
}

/// Exact W2 between equal-size clouds in R^p by optimal assignment.
pub fn w2_exact(a: &[f64], b: &[f64], p: usize) -> Result<f64> {
    let n = check_cloud(a, b, p)?;
    if n > EXACT_LIMIT {
        return Err(Error::Precondition(format!(
            "exact assignment is limited to {EXACT_LIMIT} points, got {n}"
        )));
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = sq_dist(&a[i * p..(i + 1) * p], &b[j * p..(j + 1) * p]);
        }
    }
    let assignment = hungarian(&cost, n);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// A Monte Carlo distance estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Sliced W2: the square root of the mean squared 1-D distance over
/// `n_proj` uniformly random directions drawn from `plan`.
pub fn w2_sliced(a: &[f64], b: &[f64], p: usize, n_proj: usize, plan: &NoisePlan) -> Result<Estimate> {
    check_nonempty(a, b)?;
    if p == 0 || a.len() % p != 0 || b.len() % p != 0 {
        return Err(Error::Precondition(format!("sample buffers are not multiples of dimension {p}")));
    }
    if n_proj == 0 {
        return Err(Error::Precondition("sliced distance needs at least one projection".into()));
    }
    let per: Vec<f64> = (0..n_proj)
        .into_par_iter()
        .map(|k| {
            let mut dir = vec![0.0; p];
            plan.normals(Stream::Projection, 0, k as u64, &mut dir);
            let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            let project = |cloud: &[f64]| -> Vec<f64> {
                cloud
                    .chunks(p)
                    .map(|w| w.iter().zip(&dir).map(|(x, d)| x * d).sum::<f64>() / len)
                    .collect()
            };
            let d = w2_quantile(&project(a), &project(b)).unwrap_or(0.0);
            d * d
        })
        .collect();
    let mean = per.iter().sum::<f64>() / n_proj as f64;
    let var = if n_proj > 1 {
        per.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_proj - 1) as f64
    } else {
        0.0
    };
    let value = mean.sqrt();
    let se_sq = (var / n_proj as f64).sqrt();
    let stderr = if value > 0.0 { se_sq / (2.0 * value) } else { se_sq.sqrt() };
    Ok(Estimate { value, stderr })
}

/// W2 by the best available method: exact quantile coupling in 1-D, optimal
/// assignment for small equal-size clouds, sliced otherwise.
pub fn w2_auto(a: &[f64], b: &[f64], p: usize, plan: &NoisePlan) -> Result<Estimate> {
    if p == 1 {
        return Ok(Estimate {
            value: w2_quantile(a, b)?,
            stderr: 0.0,
        });
    }
    if a.len() == b.len() && a.len() / p.max(1) <= EXACT_LIMIT {
        return Ok(Estimate {
            value: w2_exact(a, b, p)?,
            stderr: 0.0,
        });
    }
    w2_sliced(a, b, p, 256, plan)
}

/// Truncated path-metric value and the bound on the neglected tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathMetric {
    pub value: f64,
    pub tail_bound: f64,
}

/// `sum_{n=1}^{n_max} 2^{-n} d_n / (1 + d_n)` with `d_n` the sup distance of
/// the two paths over `[0, n]`. Paths are row-major `len(times) x p`.
pub fn path_metric(times: &[f64], u1: &[f64], u2: &[f64], n_max: usize) -> Result<PathMetric> {
    if times.is_empty() {
        return Err(Error::Precondition("path metric needs a nonempty time grid".into()));
    }
    check_dim("path length", u1.len(), u2.len())?;
    if u1.len() % times.len() != 0 {
        return Err(Error::Precondition("path buffer does not match the time grid".into()));
    }
    let p = u1.len() / times.len();
    let last = *times.last().expect("nonempty");
    if times[0] > 0.0 || last < n_max as f64 - 1e-9 {
        return Err(Error::Precondition(format!(
            "time grid [{}, {last}] does not cover [0, {n_max}]",
            times[0]
        )));
    }
    let mut value = 0.0;
    let mut sup: f64 = 0.0;
    let mut idx = 0;
    for n in 1..=n_max {
        while idx < times.len() && times[idx] <= n as f64 + 1e-9 {
            let d = sq_dist(&u1[idx * p..(idx + 1) * p], &u2[idx * p..(idx + 1) * p]).sqrt();
            sup = sup.max(d);
            idx += 1;
        }
        value += 0.5f64.powi(n as i32) * sup / (1.0 + sup);
    }
    Ok(PathMetric {
        value,
        tail_bound: 0.5f64.powi(n_max as i32),
    })
}

/// One `(N, error, stderr)` observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: f64,
    pub error: f64,
    pub stderr: f64,
}

/// Least-squares line through `(log N, log error)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: Vec<RatePoint>,
}

pub fn fit_rate(points: &[RatePoint]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Precondition(format!("rate fit needs at least 3 points, got {}", points.len())));
    }
    if let Some(bad) = points.iter().find(|pt| !(pt.error > 0.0) || !(pt.n > 0.0)) {
        return Err(Error::Domain(format!("rate fit needs positive values, got N = {} error = {}", bad.n, bad.error)));
    }
    let xs: Vec<f64> = points.iter().map(|pt| pt.n.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|pt| pt.error.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("rate fit needs at least two distinct N".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let r2 = if ss_tot <= f64::EPSILON * k * my.abs().max(1.0) {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        points: points.to_vec(),
    })
}

/// One mixture component: equal-size clouds `a` and `b` and an integer
/// multiplicity proportional to the component weight.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureComponent {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub multiplicity: usize,
}

/// Both sides of the mixture inequality for squared W2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureCheck {
    /// `W2^2(nu_a, nu_b)` for the mixtures.
    pub mixture: f64,
    /// `sum_k alpha_k W2^2(mu_{k,a}, mu_{k,b})`.
    pub weighted_sum: f64,
    /// `sum_k W2^2(mu_{k,a}, mu_{k,b})`.
    pub plain_sum: f64,
    pub holds: bool,
}

/// Checks `W2^2(sum alpha_k mu_{k,a}, sum alpha_k mu_{k,b}) <= sum alpha_k
/// W2^2(mu_{k,a}, mu_{k,b})` (and hence the unweighted sum) with exact
/// assignment. All components must share one cloud size so each mixture
/// is a uniform cloud after replicating components by multiplicity.
pub fn mixture_bound_check(components: &[MixtureComponent], p: usize) -> Result<MixtureCheck> {
    let first = components
        .first()
        .ok_or_else(|| Error::Precondition("mixture needs at least one component".into()))?;
    let size = check_cloud(&first.a, &first.b, p)?;
    let total: usize = components.iter().map(|c| c.multiplicity).sum();
    if total == 0 {
        return Err(Error::Precondition("mixture multiplicities sum to zero".into()));
    }
    let mut mix_a = Vec::new();
    let mut mix_b = Vec::new();
    let mut weighted_sum = 0.0;
    let mut plain_sum = 0.0;
    for c in components {
        check_dim("component size", size, check_cloud(&c.a, &c.b, p)?)?;
        let d = w2_exact(&c.a, &c.b, p)?;
        weighted_sum += c.multiplicity as f64 / total as f64 * d * d;
        plain_sum += d * d;
        for _ in 0..c.multiplicity {
            mix_a.extend_from_slice(&c.a);
            mix_b.extend_from_slice(&c.b);
        }
    }
    let m = w2_exact(&mix_a, &mix_b, p)?;
    let mixture = m * m;
    let slack = 1e-12 * (1.0 + weighted_sum);
    Ok(MixtureCheck {
        mixture,
        weighted_sum,
        plain_sum,
        holds: mixture <= weighted_sum + slack && mixture <= plain_sum + slack,
    })
}

/// Equal-width histogram on `[lo, hi]`; samples outside are counted in
/// `below` / `above`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
    pub total: u64,
}

impl Histogram {
    pub fn new(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::Precondition(format!("histogram range [{lo}, {hi}] with {bins} bins is empty")));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0u64; bins];
        let (mut below, mut above) = (0, 0);
        for &s in samples {
            if s < lo {
                below += 1;
            } else if s > hi {
                above += 1;
            } else {
                let idx = (((s - lo) / width) as usize).min(bins - 1);
                counts[idx] += 1;
            }
        }
        Ok(Self {
            edges,
            counts,
            below,
            above,
            total: samples.len() as u64,
        })
    }

    /// Count divided by `total * width` per bin.
    pub fn density(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&c, e)| c as f64 / (self.total.max(1) as f64 * (e[1] - e[0])))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(plan: &NoisePlan, id: u64, n: usize, p: usize) -> Vec<f64> {
        (0..n * p).map(|i| plan.normal(Stream::Auxiliary, id, 0, i)).collect()
    }

    #[test]
    fn w2_1d_examples() {
        assert_eq!(w2_1d(&[3.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).unwrap(), 0.0);
        assert_eq!(w2_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(w2_1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert!(w2_1d(&[], &[]).is_err());
        assert!(w2_1d(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn quantile_coupling_matches_sorted_pairing() {
        let plan = NoisePlan::new(3);
        let a = cloud(&plan, 0, 50, 1);
        let b = cloud(&plan, 1, 50, 1);
        assert!((w2_quantile(&a, &b).unwrap() - w2_1d(&a, &b).unwrap()).abs() < 1e-12);
        // replicating every point leaves the law unchanged
        let a2: Vec<f64> = a.iter().flat_map(|&v| [v, v]).collect();
        assert!((w2_quantile(&a2, &b).unwrap() - w2_1d(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn exact_matches_1d_on_random_instances() {
        let plan = NoisePlan::new(8);
        for k in 0..100u64 {
            let n = 1 + (plan.uniform(Stream::Auxiliary, 99, k, 0) * 40.0) as usize;
            let a = cloud(&plan, 2 * k, n, 1);
            let b = cloud(&plan, 2 * k + 1, n, 1);
            assert!((w2_exact(&a, &b, 1).unwrap() - w2_1d(&a, &b).unwrap()).abs() <= 1e-10);
        }
    }

    #[test]
    fn translation_gives_shift_norm() {
        let plan = NoisePlan::new(4);
        let a = cloud(&plan, 0, 30, 3);
        let c = [0.3, -1.2, 2.0];
        let b: Vec<f64> = a.chunks(3).flat_map(|w| (0..3).map(move |i| w[i] + c[i])).collect();
        let norm_c = (0.09f64 + 1.44 + 4.0).sqrt();
        assert!((w2_exact(&a, &b, 3).unwrap() - norm_c).abs() < 1e-12);
    }

    #[test]
    fn sliced_lower_bounds_exact() {
        let plan = NoisePlan::new(12);
        for k in 0..10u64 {
            let a = cloud(&plan, 2 * k, 40, 2);
            let b: Vec<f64> = cloud(&plan, 2 * k + 1, 40, 2).iter().map(|v| 1.5 * v + 0.3).collect();
            let exact = w2_exact(&a, &b, 2).unwrap();
            let sliced = w2_sliced(&a, &b, 2, 200, &plan.child(k)).unwrap();
            assert!(sliced.value <= exact + 3.0 * sliced.stderr + 1e-12, "{sliced:?} vs {exact}");
        }
    }

    #[test]
    fn exact_rejects_large_inputs() {
        let a = vec![0.0; EXACT_LIMIT + 1];
        assert!(matches!(w2_exact(&a, &a, 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let plan = NoisePlan::new(21);
        for k in 0..200u64 {
            let n = 2 + (k % 20) as usize;
            let a = cloud(&plan, 3 * k, n, 1);
            let b = cloud(&plan, 3 * k + 1, n, 1);
            let c = cloud(&plan, 3 * k + 2, n, 1);
            assert_eq!(w2_1d(&a, &b).unwrap(), w2_1d(&b, &a).unwrap());
            assert!(w2_1d(&a, &c).unwrap() <= w2_1d(&a, &b).unwrap() + w2_1d(&b, &c).unwrap() + 1e-12);
            let (a2, b2, c2) = (cloud(&plan, 1000 + 3 * k, n, 2), cloud(&plan, 1001 + 3 * k, n, 2), cloud(&plan, 1002 + 3 * k, n, 2));
            let (ab, ba) = (w2_exact(&a2, &b2, 2).unwrap(), w2_exact(&b2, &a2, 2).unwrap());
            assert!((ab - ba).abs() < 1e-12);
            assert!(w2_exact(&a2, &c2, 2).unwrap() <= ab + w2_exact(&b2, &c2, 2).unwrap() + 1e-12);
        }
    }

    #[test]
    fn mixture_inequality_on_random_instances() {
        let plan = NoisePlan::new(77);
        for k in 0..200u64 {
            let u = |i| plan.uniform(Stream::Auxiliary, 5000 + k, 0, i);
            let comps = 1 + (u(0) * 4.0) as usize;
            let size = 1 + (u(1) * 6.0) as usize;
            let p = 1 + (u(2) * 2.0) as usize;
            let components: Vec<MixtureComponent> = (0..comps)
                .map(|c| MixtureComponent {
                    a: cloud(&plan, 10 * k + 2 * c as u64, size, p),
                    b: cloud(&plan, 10 * k + 2 * c as u64 + 1, size, p).iter().map(|v| v + c as f64).collect(),
                    multiplicity: 1 + (u(3 + c) * 3.0) as usize,
                })
                .collect();
            let check = mixture_bound_check(&components, p).unwrap();
            assert!(check.holds, "{check:?}");
        }
    }

    #[test]
    fn path_metric_examples() {
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
        let u1: Vec<f64> = times.iter().map(|t| t.sin()).collect();
        assert_eq!(path_metric(&times, &u1, &u1, 10).unwrap().value, 0.0);
        let d = 0.7;
        let u2: Vec<f64> = u1.iter().map(|v| v + d).collect();
        let pm = path_metric(&times, &u1, &u2, 10).unwrap();
        assert!((pm.value - d / (1.0 + d) * (1.0 - 0.5f64.powi(10))).abs() < 1e-14);
        assert_eq!(pm.tail_bound, 0.5f64.powi(10));
        assert!(path_metric(&times, &u1, &u2, 11).is_err());
    }

    #[test]
    fn fit_rate_examples() {
        let pts = |f: &dyn Fn(f64) -> f64| -> Vec<RatePoint> {
            [32.0, 64.0, 128.0, 256.0]
                .iter()
                .map(|&n| RatePoint {
                    n,
                    error: f(n),
                    stderr: 0.0,
                })
                .collect()
        };
        let fit = fit_rate(&pts(&|n| 1.0 / n)).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12 && (fit.r2 - 1.0).abs() < 1e-12);
        assert!(fit_rate(&pts(&|_| 0.3)).unwrap().slope.abs() < 1e-12);
        assert!((fit_rate(&pts(&|n| n.powf(-0.5))).unwrap().slope + 0.5).abs() < 1e-12);
        assert!(fit_rate(&pts(&|_| 0.0)).is_err());
        assert!(fit_rate(&pts(&|n| 1.0 / n)[..2]).is_err());
    }

    #[test]
    fn empirical_law_converges_to_proxy() {
        let plan = NoisePlan::new(5);
        let proxy: Vec<f64> = (0..1_000_000u64).map(|i| plan.normal(Stream::Auxiliary, 1, i, 0)).collect();
        let mut prev = f64::INFINITY;
        for &n in &[100usize, 1_000, 10_000, 100_000] {
            let sample: Vec<f64> = (0..n as u64).map(|i| plan.normal(Stream::Auxiliary, 2, i, 0)).collect();
            let d = w2_quantile(&sample, &proxy).unwrap();
            assert!(d < prev, "n = {n}: {d} !< {prev}");
            prev = d;
        }
    }

    #[test]
    fn histogram_density_integrates_to_inside_mass() {
        let h = Histogram::new(&[0.1, 0.2, 0.5, 0.9, 1.5, -1.0], 0.0, 1.0, 4).unwrap();
        assert_eq!(h.counts, vec![2, 0, 1, 1]);
        assert_eq!((h.below, h.above), (1, 1));
        let mass: f64 = h.density().iter().map(|d| d * 0.25).sum();
        assert!((mass - 4.0 / 6.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn hungarian_beats_identity_and_random_permutations(seed in 0u64..10_000, n in 1usize..12) {
            let plan = NoisePlan::new(seed);
            let cost: Vec<f64> = (0..n * n).map(|i| plan.uniform(Stream::Auxiliary, 0, 0, i)).collect();
            let assignment = hungarian(&cost, n);
            let mut seen = vec![false; n];
            for &j in &assignment {
                prop_assert!(!seen[j]);
                seen[j] = true;
            }
            let best: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            let identity: f64 = (0..n).map(|i| cost[i * n + i]).sum();
            prop_assert!(best <= identity + 1e-12);
            let rev: f64 = (0..n).map(|i| cost[i * n + (n - 1 - i)]).sum();
            prop_assert!(best <= rev + 1e-12);
        }
    }
}
