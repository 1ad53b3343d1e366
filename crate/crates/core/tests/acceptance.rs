//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit when
//! any criterion fails.

use std::time::Instant;

use chaoslab::dynamics::{
    interacting_sde_run, meanfield_ode_run, msgld_run, sgd_run, weak_form_residual, Coordinate, EngineOptions, InitLaw,
    InitialState, SnapshotPolicy,
};
use chaoslab::experiments::{
    batch_sweep, chaos_rate_study, gamma_sweep, sgd_sde_consistency_study, two_regime_study, ChaosRateConfig,
    ConsistencyConfig, RegimeConfig, Setup, StudyReport, SweepConfig,
};
use chaoslab::meanfield::{covariance_sigma, mean_field_h, noise_xi, risk_grad, structural_risk, tilde_h, EmpiricalMeasure};
use chaoslab::metrics::{fit_rate, mixture_bound_check, w2_1d, w2_exact, MixtureComponent, RatePoint};
use chaoslab::rng::Stream;
use chaoslab::stationary::{fixed_point_iterate, stationarity_check, GridDensity1D};
use chaoslab::{DataDistribution, Hyperparams, ModelSpec, NoisePlan};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Uniforms from a dedicated stream, consumed in order.
struct Draws {
    plan: NoisePlan,
    next: usize,
}

impl Draws {
    fn new(seed: u64) -> Self {
        Self {
            plan: NoisePlan::new(seed),
            next: 0,
        }
    }
    fn u(&mut self) -> f64 {
        self.next += 1;
        self.plan.uniform(Stream::Auxiliary, 0, 0, self.next)
    }
    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.u()
    }
    fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + ((hi - lo + 1) as f64 * self.u()) as usize
    }
}

struct Instance {
    model: ModelSpec,
    pi: DataDistribution,
    mu: EmpiricalMeasure,
    w: Vec<f64>,
}

fn random_instance(seed: u64) -> Instance {
    let mut d = Draws::new(seed);
    let p = d.int(1, 3);
    let logistic = d.u() < 0.5;
    let model = ModelSpec::builtin("tanh-dot", if logistic { "logistic" } else { "square" }, d.range(0.0, 0.5), p).unwrap();
    let atoms = d.int(2, 6);
    let points = (0..atoms)
        .map(|_| {
            let x: Vec<f64> = (0..p).map(|_| d.range(-1.5, 1.5)).collect();
            let y = if logistic {
                if d.u() < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            } else {
                d.range(-1.0, 1.0)
            };
            (x, y)
        })
        .collect();
    let pi = DataDistribution::uniform(points).unwrap();
    let n = d.int(1, 8);
    let mu = EmpiricalMeasure::uniform(p, (0..n * p).map(|_| d.range(-2.0, 2.0)).collect()).unwrap();
    let w = (0..p).map(|_| d.range(-2.0, 2.0)).collect();
    Instance { model, pi, mu, w }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn kernel_exactness() -> Outcome {
    let (mut xi_mean, mut asym, mut min_eig, mut sqrt_err, mut h_err, mut fd_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..100 {
        let Instance { model, pi, mu, w } = random_instance(seed);
        let p = w.len();
        let mut mean = vec![0.0; p];
        for (a, atom) in pi.atoms().iter().enumerate() {
            for (m, x) in mean.iter_mut().zip(noise_xi(&w, &mu, &model, &pi, a).unwrap()) {
                *m += atom.weight * x;
            }
        }
        xi_mean = xi_mean.max(norm(&mean));
        let sigma = covariance_sigma(&w, &mu, &model, &pi).unwrap();
        asym = asym.max((&sigma - sigma.transpose()).amax());
        let scale = sigma.norm().max(1.0);
        min_eig = min_eig.min(sigma.clone().symmetric_eigen().eigenvalues.min() / scale);
        let s = chaoslab::linalg::sqrt_psd(&sigma).unwrap();
        sqrt_err = sqrt_err.max((&s * &s - &sigma).amax());

        let n = mu.len() as f64;
        let grad = risk_grad(&mu, &model, &pi).unwrap();
        for k in 0..mu.len() {
            let h = mean_field_h(mu.location(k), &mu, &model, &pi).unwrap();
            for c in 0..p {
                let g = grad[k * p + c];
                h_err = h_err.max((h[c] + n * g).abs() / (1.0 + h[c].abs()));
                let eps = 1e-5;
                let shifted = |delta: f64| {
                    let mut m = mu.clone();
                    m.locations_mut()[k * p + c] += delta;
                    structural_risk(&m, &model, &pi).unwrap()
                };
                let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                fd_err = fd_err.max((fd - g).abs() / g.abs().max(1e-3));
            }
        }
    }
    check(
        xi_mean <= 1e-10 && asym == 0.0 && min_eig >= -1e-12 && sqrt_err <= 1e-8 && h_err <= 1e-10 && fd_err <= 1e-6,
        format!(
            "max |E xi| {xi_mean:.1e}, asymmetry {asym:.1e}, min eigenvalue/scale {min_eig:.1e}, \
             |SS - Sigma| {sqrt_err:.1e}, |h + N dR| {h_err:.1e}, finite-difference gap {fd_err:.1e}"
        ),
    )
}

fn explicit_bounds() -> Outcome {
    let mut violations = 0;
    let (mut worst_h, mut worst_tr) = (0.0f64, 0.0f64);
    let mut points = 0;
    for seed in 0..100 {
        let Instance { model, pi, mu, .. } = random_instance(seed);
        let l2: f64 = 2.0 * pi.atoms().iter().map(|a| a.weight * model.psi(a.y) * model.phi(&a.x).powi(2)).sum::<f64>();
        let tr_bound: f64 = 2.0
            * pi.atoms()
                .iter()
                .map(|a| a.weight * (l2 * l2 + 2.0 * model.psi(a.y).powi(2) * model.phi(&a.x).powi(4)))
                .sum::<f64>();
        let mut d = Draws::new(10_000 + seed);
        for _ in 0..5 {
            let w: Vec<f64> = (0..mu.p()).map(|_| d.range(-4.0, 4.0)).collect();
            let ht = norm(&tilde_h(&w, &mu, &model, &pi).unwrap());
            let tr = covariance_sigma(&w, &mu, &model, &pi).unwrap().trace();
            worst_h = worst_h.max(ht / l2);
            worst_tr = worst_tr.max(tr / tr_bound);
            violations += usize::from(ht > l2) + usize::from(tr > tr_bound);
            points += 1;
        }
    }
    check(
        violations == 0,
        format!("{violations} violations over {points} points; max |h~|/bound {worst_h:.3}, max Tr/bound {worst_tr:.3}"),
    )
}

fn verdicts(report: &StudyReport, names: &[&str]) -> (bool, String) {
    let mut ok = true;
    let parts: Vec<String> = names
        .iter()
        .map(|name| match report.verdict(name) {
            Some(v) => {
                ok &= v.passed();
                format!(
                    "{name} {} {} {}",
                    v.measured.map_or("n/a".into(), |m| format!("{m:.4}")),
                    v.relation,
                    v.threshold.map_or("n/a".into(), |t| format!("{t:.4}"))
                )
            }
            None => {
                ok = false;
                format!("{name} missing")
            }
        })
        .collect();
    (ok, parts.join(", "))
}

fn chaos_rate() -> Outcome {
    let setup = Setup::synthetic(1).unwrap();
    let config = ChaosRateConfig {
        degenerate_check: false,
        ..ChaosRateConfig::default()
    };
    let report = chaos_rate_study(&setup, &config, 2024).map_err(|e| e.to_string())?;
    let (ok, detail) = verdicts(&report, &["slope", "decay"]);
    check(ok, detail)
}

fn upper_bound() -> Outcome {
    let setup = Setup::synthetic(1).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (beta, alpha) in [(0.0, 0.0), (0.0, 0.25), (0.5, 0.0), (0.5, 0.25)] {
        let config = ChaosRateConfig {
            hyper: Hyperparams {
                beta,
                alpha,
                ..Hyperparams::default()
            },
            degenerate_check: beta == 0.0 && alpha == 0.0,
            ..ChaosRateConfig::default()
        };
        let report = chaos_rate_study(&setup, &config, 2025).map_err(|e| e.to_string())?;
        let names: &[&str] = if config.degenerate_check { &["bound", "degenerate"] } else { &["bound"] };
        let (pass, detail) = verdicts(&report, names);
        ok &= pass;
        parts.push(format!("beta {beta} alpha {alpha}: {detail}"));
    }
    check(ok, parts.join("; "))
}

fn two_regimes() -> Outcome {
    let setup = Setup::synthetic(1).unwrap();
    let report = two_regime_study(&setup, &RegimeConfig::default(), 7).map_err(|e| e.to_string())?;
    let (ok, detail) = verdicts(&report, &["ratio_beta_0.75", "stable"]);
    check(ok, detail)
}

fn regularization() -> Outcome {
    let setup = Setup::synthetic(1).unwrap();
    let config = SweepConfig::default();
    let g = gamma_sweep(&setup, &config, 11).map_err(|e| e.to_string())?;
    let b = batch_sweep(&setup, &config, 12).map_err(|e| e.to_string())?;
    let (ok_g, dg) = verdicts(&g, &["monotone", "halving"]);
    let (ok_b, db) = verdicts(&b, &["monotone", "halving"]);
    check(ok_g && ok_b, format!("stepsize: {dg}; batch: {db}"))
}

fn stationary() -> Outcome {
    let model = ModelSpec::builtin("zero", "square", 1.0, 1).unwrap();
    let pi = DataDistribution::dirac(vec![0.0], 0.0);
    let hyper = Hyperparams {
        dt: 1e-3,
        ..Hyperparams::default()
    };
    let mu0 = GridDensity1D::gaussian(0.0, 1.0, -4.0, 4.0, 2048).map_err(|e| e.to_string())?;
    let fp = fixed_point_iterate(&mu0, &model, &pi, &hyper, Some(1.0), 1e-12, 50, 1.0)
        .and_then(|f| f.require_converged())
        .map_err(|e| e.to_string())?;
    // s2 = 1 against V = |w|^2 / 2: Gaussian with variance 1/2
    let var = 0.5;
    let exact = |w: f64| (-w * w / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
    let density = &fp.density;
    let l1: f64 = density
        .centers()
        .iter()
        .zip(&density.values)
        .map(|(&w, &v)| (v - exact(w)).abs() * density.width())
        .sum();
    let report = stationarity_check(density, &model, &pi, &hyper, Some(1.0), 4096, 5.0, &NoisePlan::new(3))
        .map_err(|e| e.to_string())?;
    check(
        l1 <= 1e-3 && report.drift <= 0.05,
        format!(
            "L1 to the Gaussian {l1:.2e} <= 1e-3 (2048-cell start, {} cells after tail growth, {} iterations), drift {:.4} <= 0.05 (sampling baseline {:.4})",
            density.n_cells, fp.iterations, report.drift, report.baseline
        ),
    )
}

fn metrics() -> Outcome {
    let mut d = Draws::new(77);
    let mut gap_1d = 0.0f64;
    for _ in 0..100 {
        let n = d.int(1, 12);
        let a: Vec<f64> = (0..n).map(|_| d.range(-3.0, 3.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| d.range(-1.0, 5.0)).collect();
        gap_1d = gap_1d.max((w2_exact(&a, &b, 1).unwrap() - w2_1d(&a, &b).unwrap()).abs());
    }
    let mut mixture_failures = 0;
    for _ in 0..200 {
        let p = d.int(1, 2);
        let size = d.int(1, 3);
        let components: Vec<MixtureComponent> = (0..d.int(1, 3))
            .map(|_| MixtureComponent {
                a: (0..size * p).map(|_| d.range(-2.0, 2.0)).collect(),
                b: (0..size * p).map(|_| d.range(-2.0, 2.0)).collect(),
                multiplicity: d.int(1, 3),
            })
            .collect();
        mixture_failures += usize::from(!mixture_bound_check(&components, p).unwrap().holds);
    }
    let mut triangle_excess = f64::NEG_INFINITY;
    for _ in 0..200 {
        let p = d.int(1, 3);
        let n = d.int(1, 7);
        let cloud = |d: &mut Draws| -> Vec<f64> { (0..n * p).map(|_| d.range(-2.0, 2.0)).collect() };
        let (a, b, c) = (cloud(&mut d), cloud(&mut d), cloud(&mut d));
        let lhs = w2_exact(&a, &c, p).unwrap();
        let rhs = w2_exact(&a, &b, p).unwrap() + w2_exact(&b, &c, p).unwrap();
        triangle_excess = triangle_excess.max(lhs - rhs);
    }
    let mut slope_err = 0.0f64;
    for slope in [0.0, -0.5, -1.0] {
        let points: Vec<RatePoint> = [32.0, 64.0, 128.0, 256.0, 512.0]
            .iter()
            .map(|&n: &f64| RatePoint {
                n,
                error: 0.3 * n.powf(slope),
                stderr: 0.0,
            })
            .collect();
        slope_err = slope_err.max((fit_rate(&points).unwrap().slope - slope).abs());
    }
    check(
        gap_1d <= 1e-10 && mixture_failures == 0 && triangle_excess <= 1e-12 && slope_err <= 1e-12,
        format!(
            "|exact - 1d| {gap_1d:.1e}, mixture failures {mixture_failures}/200, \
             max triangle excess {triangle_excess:.1e}, slope error {slope_err:.1e}"
        ),
    )
}

fn dynamics_contracts() -> Outcome {
    let setup = Setup::synthetic(2).unwrap();
    let hyper = Hyperparams {
        beta: 0.5,
        horizon: 1.0,
        dt: 0.02,
        ..Hyperparams::default()
    };
    let plan = NoisePlan::new(9);
    let init = InitialState::sample(&InitLaw::Uniform { half_width: 1.0 }, 2, 256, 0, &plan).unwrap();
    let opts = EngineOptions::default();
    let bits = |t: chaoslab::dynamics::Trajectory| t.snapshots.concat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let sgd = bits(sgd_run(&setup.model, &setup.pi, &hyper, &init, &plan, &opts).unwrap());
    let msgld = bits(msgld_run(&setup.model, &setup.pi, &hyper, &init, &plan, &opts).unwrap());
    let hot = Hyperparams { eta: 0.1, ..hyper };
    let run_pair = || {
        (
            bits(msgld_run(&setup.model, &setup.pi, &hot, &init, &plan, &opts).unwrap()),
            bits(interacting_sde_run(&setup.model, &setup.pi, &hot, &init, &plan, &opts).unwrap()),
        )
    };
    let pool = |k: usize| rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
    let serial = pool(1).install(run_pair);
    let parallel = pool(4).install(run_pair);

    let linear = ModelSpec::builtin("zero", "square", 0.7, 1).unwrap();
    let pi0 = DataDistribution::dirac(vec![0.0], 0.0);
    let start = InitialState::sample(&InitLaw::Uniform { half_width: 1.0 }, 1, 64, 0, &plan).unwrap();
    let start = InitialState::explicit(1, start.ids, start.positions.iter().map(|v| v + 1.0).collect()).unwrap();
    let residual = |dt: f64| {
        let h = Hyperparams {
            horizon: 2.0,
            dt,
            ..Hyperparams::default()
        };
        let every = EngineOptions {
            snapshots: SnapshotPolicy::EveryStep,
            ..EngineOptions::default()
        };
        let t = meanfield_ode_run(&linear, &pi0, &h, &start, &plan, &every).unwrap();
        weak_form_residual(&t, &linear, &pi0, &Coordinate(0)).unwrap().into_iter().fold(0.0, f64::max)
    };
    let (r1, r2) = (residual(0.02), residual(0.01));
    let ratio = r1 / r2;
    check(
        sgd == msgld && serial == parallel && (1.5..=2.5).contains(&ratio) && r1 / 0.02 < 1.0,
        format!(
            "eta = 0 mSGLD bitwise SGD: {}, 1 vs 4 workers bitwise: {}, residual {r1:.2e} at dt 0.02 and {r2:.2e} at dt 0.01 (ratio {ratio:.3})",
            sgd == msgld,
            serial == parallel
        ),
    )
}

fn sgd_sde_gap() -> Outcome {
    let setup = Setup::synthetic(1).unwrap();
    let report = sgd_sde_consistency_study(&setup, &ConsistencyConfig::default(), 5).map_err(|e| e.to_string())?;
    let gaps = report.table("gap").expect("gap table");
    let table: Vec<String> = gaps.rows.iter().map(|r| format!("N {}: {:.4} +- {:.4}", r[0], r[1], r[2])).collect();
    let (ok, detail) = verdicts(&report, &["decreasing"]);
    check(ok, format!("{detail} [{}]", table.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("kernel exactness", kernel_exactness),
        ("explicit drift and covariance bounds", explicit_bounds),
        ("chaos rate at beta = 1", chaos_rate),
        ("upper-bound compliance for beta < 1", upper_bound),
        ("two-regime separation", two_regimes),
        ("stepsize and batch regularization", regularization),
        ("stationary law", stationary),
        ("metrics", metrics),
        ("dynamics contracts", dynamics_contracts),
        ("SGD to diffusion gap", sgd_sde_gap),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
