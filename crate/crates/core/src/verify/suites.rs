//! Named verification suites. Each suite is a list of numeric checks with
//! explicit bounds; a suite passes when every check does.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    expected_beta, lambda_star, lambda_star_subspace, mu_star, mu_star_subspace, EstimatorConfig, Method,
};
use crate::math::{sample_biased, BasisMode, RealVec, RngStream, SamplerSpec, SubspaceBasis};
use crate::oracle::{LocalOracle, ModelKind, SyntheticModel, SyntheticModelSpec};
use crate::prior::{estimate_a, estimate_alpha, estimate_grad_norm, make_synthetic_prior, PriorStats, TransferPrior};
use crate::verify::closed_form::{
    closed_form_f, closed_form_f_subspace, loss_averaging, loss_biased_sampling, loss_subspace_averaging,
    CovarianceSpec,
};
use crate::verify::grid::{grid_argmax, grid_argmax_lambda, grid_argmax_lambda_subspace, grid_argmin_mu};
use crate::verify::monte_carlo::{
    loss_of_estimates, mc_estimates, mc_loss_averaging, mc_loss_prgf, mc_loss_rgf, mean_se, simulate_expected_beta,
    McLossReport, DEFAULT_TRIALS,
};

/// Standard errors allowed between Monte Carlo and closed form.
pub const MC_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Monte Carlo loss of biased and uniform sampling against its closed form.
    /// Named `theorem1` on the command line and in reports.
    #[serde(rename = "theorem1", alias = "loss")]
    Loss,
    /// Optimal bias coefficient against brute-force grid search.
    Lambda,
    /// Monotonicity, continuity and optimality of the bias coefficient.
    Monotonic,
    /// Averaging weight: grid search and Monte Carlo.
    Mu,
    /// Expected RGF cosine approximation.
    Beta,
    /// Empirical sampling covariance.
    Covariance,
    /// Finite-difference convergence on a non-linear loss.
    SigmaSweep,
    /// Norm and prior-quality estimators.
    Norm,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Loss,
        Suite::Lambda,
        Suite::Monotonic,
        Suite::Mu,
        Suite::Beta,
        Suite::Covariance,
        Suite::SigmaSweep,
        Suite::Norm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Loss => "theorem1",
            Suite::Lambda => "lambda",
            Suite::Monotonic => "monotonic",
            Suite::Mu => "mu",
            Suite::Beta => "beta",
            Suite::Covariance => "covariance",
            Suite::SigmaSweep => "sigma-sweep",
            Suite::Norm => "norm",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "loss" {
            return Ok(Suite::Loss);
        }
        Suite::ALL
            .into_iter()
            .find(|suite| suite.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown suite '{s}'")))
    }
}

/// One bounded quantity. `value` is absent when it was not finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: Option<f64>,
    pub bound: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `value <= bound`.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value.is_finite() && value <= bound,
            value: value.is_finite().then_some(value),
            bound,
            detail: detail.into(),
        }
    }

    fn mc(name: impl Into<String>, r: &McLossReport) -> Self {
        let detail = format!(
            "mc={:.6e} se={:.3e} closed={:.6e} trials={}",
            r.mc_loss, r.std_error, r.closed_form, r.trials
        );
        Self::at_most(name, r.z_score(), MC_SIGMAS, detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(suite: Suite, seed: u64, checks: Vec<Check>) -> Self {
        Self {
            suite,
            seed,
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let value = c.value.map_or_else(|| "non-finite".to_string(), |v| format!("{v:.3e}"));
            writeln!(
                f,
                "[{}] {}: {} <= {:.3e} ({})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                value,
                c.bound,
                c.detail
            )?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(
            f,
            "suite {} seed {}: {} ({} checks, {} failed)",
            self.suite,
            self.seed,
            if self.passed { "PASS" } else { "FAIL" },
            self.checks.len(),
            failed
        )
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Loss => loss_checks(seed, DEFAULT_TRIALS)?,
        Suite::Lambda => lambda_checks(),
        Suite::Monotonic => monotonic_checks(),
        Suite::Mu => mu_checks(seed, DEFAULT_TRIALS)?,
        Suite::Beta => beta_checks(seed, DEFAULT_TRIALS)?,
        Suite::Covariance => covariance_checks(seed, 200_000)?,
        Suite::SigmaSweep => sigma_sweep_checks(seed, 2_000)?,
        Suite::Norm => norm_checks(seed)?,
    };
    Ok(SuiteReport::new(suite, seed, checks))
}

/// Independent child seed for sub-experiment `tag`.
fn child_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = RngStream::new(seed, 0x5eed_0000 + tag);
    (rng.uniform() * (1u64 << 53) as f64) as u64
}

fn gaussian(dim: usize, rng: &mut RngStream) -> RealVec {
    let mut x = vec![0.0; dim];
    rng.fill_normal(&mut x);
    RealVec::new(x).expect("finite normals")
}

fn prior_with_cosine(g: &RealVec, alpha: f64, rng: &mut RngStream) -> Result<RealVec> {
    Ok(make_synthetic_prior(g, alpha, rng)?.v().clone())
}

const LAMBDA_DIMS: [usize; 3] = [8, 64, 256];
const LAMBDA_QS: [usize; 4] = [1, 5, 20, 50];
const A2_VALUES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 1.0];

fn alpha2_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

fn max_abs(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(0.0, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) })
}

// -------------------------------------------------------------------- loss

/// Monte Carlo against the closed-form loss on linear oracles, plus the
/// agreement between the covariance form and the `F` form of the loss.
pub fn loss_checks(seed: u64, trials: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    // (D, q, lambda, alpha)
    let mut points: Vec<(usize, usize, f64, f64)> = Vec::new();
    for dim in [8usize, 16, 64] {
        points.extend([
            (dim, 1, 0.5, 0.3),
            (dim, 5, 0.3, 0.6),
            (dim, 5, 1.0 / dim as f64, 0.2),
            (dim, 20, 0.05, 0.4),
            (dim, 20, 0.8, 0.1),
            (dim, 10, 0.0, 0.5),
        ]);
    }
    points.extend([(256, 50, 0.1, 0.4), (256, 50, 0.5, 0.2), (256, 5, 0.02, 0.05)]);
    for (i, &(dim, q, lambda, alpha)) in points.iter().enumerate() {
        let mut rng = RngStream::new(seed, 100 + i as u64);
        let g = gaussian(dim, &mut rng);
        let v = prior_with_cosine(&g, alpha, &mut rng)?;
        let r = mc_loss_prgf(&g, &v, lambda, None, q, trials, child_seed(seed, 100 + i as u64))?;
        checks.push(Check::mc(
            format!("biased D={dim} q={q} lambda={lambda:.4} alpha={alpha}"),
            &r,
        ));
    }

    let mut rng = RngStream::new(seed, 200);
    let g = gaussian(16, &mut rng);
    let v = prior_with_cosine(&g, 0.6, &mut rng)?;
    let r = mc_loss_prgf(&g, &v, 1.0, None, 5, trials, child_seed(seed, 200))?;
    checks.push(Check::mc("prior only D=16 q=5 (deterministic)", &r));

    let r = mc_loss_rgf(&g, None, 5, trials, child_seed(seed, 201))?;
    checks.push(Check::mc("uniform D=16 q=5", &r));

    let basis = SubspaceBasis::new(64, 16, BasisMode::Block)?;
    let g = gaussian(64, &mut rng);
    let r = mc_loss_rgf(&g, Some(&basis), 10, trials, child_seed(seed, 202))?;
    checks.push(Check::mc("uniform subspace D=64 d=16 q=10", &r));

    // A prior orthogonal to the subspace makes the subspace sampler's
    // covariance exact.
    let outside = g.sub(&basis.project(&g));
    let r = mc_loss_prgf(&g, &outside, 0.3, Some(&basis), 10, trials, child_seed(seed, 203))?;
    checks.push(Check::mc("biased subspace D=64 d=16 q=10 lambda=0.3", &r));

    checks.push(two_formula_check());

    let g = gaussian(32, &mut rng);
    let iso = loss_biased_sampling(&g, &CovarianceSpec::Isotropic, 1);
    checks.push(Check::at_most(
        "isotropic q=1 equals |g|^2 (1 - 1/D)",
        (iso - g.norm_sq() * (1.0 - 1.0 / 32.0)).abs(),
        1e-9,
        "D=32",
    ));
    Ok(checks)
}

fn two_formula_check() -> Check {
    let norm = 2.5;
    let worst = LAMBDA_DIMS
        .par_iter()
        .map(|&dim| {
            let g = RealVec::basis(dim, 0).scaled(norm);
            let mut worst: f64 = 0.0;
            for &q in &LAMBDA_QS {
                for a2 in alpha2_grid(0.01) {
                    let mut v = vec![0.0; dim];
                    v[0] = a2.sqrt();
                    v[1] = (1.0 - a2).sqrt();
                    let v = RealVec::new(v).expect("finite");
                    for lambda in [0.0, 0.05, 1.0 / dim as f64, 0.3, 0.7, 1.0] {
                        let cov = loss_biased_sampling(&g, &CovarianceSpec::Biased { lambda, v: &v }, q);
                        let f = norm * norm * (1.0 - closed_form_f(lambda, a2, dim, q));
                        worst = worst.max((cov - f).abs());
                    }
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    Check::at_most(
        "covariance form equals |g|^2 (1 - F)",
        worst,
        1e-9,
        "D in {8,64,256}, q in {1,5,20,50}, alpha^2 step 0.01, six lambdas",
    )
}

// ----------------------------------------------------------------- lambda

const LAMBDA_GRID_STEP: f64 = 1e-5;
const LAMBDA_TOL: f64 = 1e-4;

/// Closed-form optimal coefficients against brute-force maximization of
/// the objective, with regime and boundary checks.
pub fn lambda_checks() -> Vec<Check> {
    let a2s = alpha2_grid(0.01);
    let full: Vec<(usize, usize)> = LAMBDA_DIMS
        .iter()
        .flat_map(|&d| LAMBDA_QS.iter().map(move |&q| (d, q)))
        .collect();
    let full_results: Vec<(f64, usize)> = full
        .par_iter()
        .flat_map_iter(|&(dim, q)| {
            let lo = 1.0 / (dim + 2 * q - 2) as f64;
            let hi = (2 * q - 1) as f64 / (dim + 2 * q - 2) as f64;
            a2s.iter().map(move |&a2| {
                let grid = grid_argmax_lambda(a2, dim, q, LAMBDA_GRID_STEP);
                let err = (grid - lambda_star(a2, q, dim)).abs();
                let regime_bad = (a2 < lo && grid != 0.0) || (a2 > hi && grid != 1.0);
                (err, regime_bad as usize)
            })
        })
        .collect();

    let sub: Vec<(usize, usize, f64)> = LAMBDA_DIMS
        .iter()
        .flat_map(|&d| {
            LAMBDA_QS
                .iter()
                .flat_map(move |&q| A2_VALUES.iter().map(move |&a| (d, q, a)))
        })
        .collect();
    let sub_results: Vec<(f64, usize)> = sub
        .par_iter()
        .flat_map_iter(|&(d, q, a_sq)| {
            let lo = a_sq / (d + 2 * q - 2) as f64;
            let hi = a_sq * (2 * q - 1) as f64 / d as f64;
            a2s.iter().map(move |&a2| {
                let grid = grid_argmax_lambda_subspace(a2, a_sq, d, q, LAMBDA_GRID_STEP);
                let err = (grid - lambda_star_subspace(a2, a_sq, q, d)).abs();
                let regime_bad = (a2 < lo && grid != 0.0) || (a2 > hi && grid != 1.0);
                (err, regime_bad as usize)
            })
        })
        .collect();

    let mut boundary_full: f64 = 0.0;
    let mut boundary_sub: f64 = 0.0;
    for &dim in &LAMBDA_DIMS {
        for &q in &LAMBDA_QS {
            for &a2 in &a2s {
                let f0 = (1.0 - a2) * q as f64 / (dim + q - 2) as f64;
                boundary_full = boundary_full
                    .max((closed_form_f(0.0, a2, dim, q) - f0).abs())
                    .max((closed_form_f(1.0, a2, dim, q) - a2).abs());
                for &a_sq in &A2_VALUES {
                    let s0 = a_sq * q as f64 / (dim + q - 1) as f64;
                    boundary_sub = boundary_sub
                        .max((closed_form_f_subspace(0.0, a2, a_sq, dim, q) - s0).abs())
                        .max((closed_form_f_subspace(1.0, a2, a_sq, dim, q) - a2).abs());
                }
            }
        }
    }

    let sweep = "D in {8,64,256}, q in {1,5,20,50}, alpha^2 step 0.01, grid step 1e-5";
    let sub_sweep = "d in {8,64,256}, q in {1,5,20,50}, A^2 in {0.1,0.25,0.5,0.75,1}, alpha^2 step 0.01";
    vec![
        Check::at_most(
            "full-space lambda* vs grid argmax",
            max_abs(full_results.iter().map(|r| r.0)),
            LAMBDA_TOL,
            sweep,
        ),
        Check::at_most(
            "full-space regime boundaries",
            full_results.iter().map(|r| r.1).sum::<usize>() as f64,
            0.0,
            "grid argmax is 0 below the lower threshold and 1 above the upper",
        ),
        Check::at_most(
            "subspace lambda* vs grid argmax",
            max_abs(sub_results.iter().map(|r| r.0)),
            LAMBDA_TOL,
            sub_sweep,
        ),
        Check::at_most(
            "subspace regime boundaries",
            sub_results.iter().map(|r| r.1).sum::<usize>() as f64,
            0.0,
            "grid argmax is 0 below the lower threshold and 1 above the upper",
        ),
        Check::at_most("full-space F(0), F(1) identities", boundary_full, 1e-12, sweep),
        Check::at_most("subspace F(0), F(1) identities", boundary_sub, 1e-12, sub_sweep),
    ]
}

// -------------------------------------------------------------- monotonic

/// Shape properties of the optimal coefficient.
pub fn monotonic_checks() -> Vec<Check> {
    let fine = alpha2_grid(1e-3);
    let mut alpha_drops = 0usize;
    let mut sub_alpha_drops = 0usize;
    let mut q_rises = 0usize;
    let mut continuity: f64 = 0.0;
    let mut optimality: f64 = 0.0;
    let mut sub_optimality: f64 = 0.0;
    let mut uniform_fixed_point: f64 = 0.0;
    for &dim in &LAMBDA_DIMS {
        for &q in &LAMBDA_QS {
            let ls: Vec<f64> = fine.iter().map(|&a2| lambda_star(a2, q, dim)).collect();
            alpha_drops += ls.windows(2).filter(|w| w[1] < w[0] - 1e-12).count();
            for (&a2, &l) in fine.iter().zip(&ls).step_by(10) {
                let (_, best) = grid_argmax(1e-3, |x| closed_form_f(x, a2, dim, q));
                optimality = optimality.max(best - closed_form_f(l, a2, dim, q));
            }
            // With one sample the objective is linear and the two thresholds
            // coincide, so the optimum jumps from 0 to 1.
            let m = (dim + 2 * q - 2) as f64;
            for t in [1.0 / m, (2 * q - 1) as f64 / m] {
                if q >= 2 && t < 1.0 {
                    let jump = lambda_star((t + 1e-12).min(1.0), q, dim) - lambda_star(t - 1e-12, q, dim);
                    continuity = continuity.max(jump.abs());
                }
            }
            if q >= 2 {
                let u = 1.0 / dim as f64;
                uniform_fixed_point = uniform_fixed_point.max((lambda_star(u, q, dim) - u).abs());
            }
            for &a_sq in &A2_VALUES {
                let ls: Vec<f64> = fine.iter().map(|&a2| lambda_star_subspace(a2, a_sq, q, dim)).collect();
                sub_alpha_drops += ls.windows(2).filter(|w| w[1] < w[0] - 1e-12).count();
                for (&a2, &l) in fine.iter().zip(&ls).step_by(10) {
                    let (_, best) = grid_argmax(1e-3, |x| closed_form_f_subspace(x, a2, a_sq, dim, q));
                    sub_optimality = sub_optimality.max(best - closed_form_f_subspace(l, a2, a_sq, dim, q));
                }
            }
        }
        for a2 in alpha2_grid(0.01).into_iter().filter(|&a2| a2 > 1.0 / dim as f64) {
            let ls: Vec<f64> = (1..=50).map(|q| lambda_star(a2, q, dim)).collect();
            q_rises += ls.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
        }
    }
    vec![
        Check::at_most(
            "full-space lambda* non-decreasing in alpha^2",
            alpha_drops as f64,
            0.0,
            "alpha^2 step 1e-3",
        ),
        Check::at_most(
            "subspace lambda* non-decreasing in alpha^2",
            sub_alpha_drops as f64,
            0.0,
            "alpha^2 step 1e-3",
        ),
        Check::at_most(
            "lambda* non-increasing in q",
            q_rises as f64,
            0.0,
            "q = 1..50, alpha^2 > 1/D",
        ),
        Check::at_most(
            "lambda* continuous at branch thresholds",
            continuity,
            1e-6,
            "q >= 2, jump across +-1e-12",
        ),
        Check::at_most("lambda*(1/D) = 1/D for q >= 2", uniform_fixed_point, 1e-9, ""),
        Check::at_most("full-space F(lambda*) >= grid max", optimality, 1e-9, "grid step 1e-3"),
        Check::at_most(
            "subspace F(lambda*) >= grid max",
            sub_optimality,
            1e-9,
            "grid step 1e-3",
        ),
    ]
}

// --------------------------------------------------------------------- mu

/// Averaging weight: the closed form against grid search, and both
/// averaging losses against Monte Carlo.
pub fn mu_checks(seed: u64, trials: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let cells: Vec<(f64, f64)> = (0..=50)
        .flat_map(|i| (1..=50).map(move |j| (i as f64 / 50.0, j as f64 / 50.0)))
        .collect();
    let gap = cells
        .par_iter()
        .map(|&(alpha, eb)| {
            let (_, grid_loss) = grid_argmin_mu(alpha, eb, 1e-4);
            loss_averaging(mu_star(alpha, eb), alpha, eb, 1.0) - grid_loss
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most(
        "grid over mu never beats mu*",
        gap,
        1e-8,
        "alpha step 0.02, E[beta] step 0.02, mu step 1e-4",
    ));

    // Subspace weight on geometries drawn from actual vectors.
    let mut rng = RngStream::new(seed, 300);
    let mut sub_gap = f64::NEG_INFINITY;
    for (dim, d) in [(32usize, 8usize), (64, 16), (256, 16)] {
        let basis = SubspaceBasis::new(dim, d, BasisMode::Block)?;
        for _ in 0..20 {
            let g = gaussian(dim, &mut rng).normalized().expect("nonzero");
            let alpha = rng.uniform();
            let v = prior_with_cosine(&g, alpha, &mut rng)?;
            let gt = basis.project(&g);
            let (a_sq, alpha1) = (gt.norm_sq(), v.dot(&gt));
            for q in [1usize, 10, 50] {
                let eb = (a_sq * q as f64 / (d + q - 1) as f64).sqrt();
                let (_, grid_loss) = grid_argmax(1e-4, |m| -loss_subspace_averaging(m, alpha, alpha1, a_sq, eb, 1.0));
                let at_star =
                    loss_subspace_averaging(mu_star_subspace(alpha, alpha1, a_sq, eb), alpha, alpha1, a_sq, eb, 1.0);
                sub_gap = sub_gap.max(at_star + grid_loss);
            }
        }
    }
    checks.push(Check::at_most(
        "grid over mu never beats subspace mu*",
        sub_gap,
        1e-8,
        "60 random geometries, q in {1,10,50}, mu step 1e-4",
    ));

    let dim = 64;
    let q = 20;
    let g = gaussian(dim, &mut rng);
    let v = prior_with_cosine(&g, 0.4, &mut rng)?;
    let opt = mu_star(0.4, expected_beta(q, dim));
    for (k, mu) in [0.0, 0.3, opt, 0.8, 1.0].into_iter().enumerate() {
        let r = mc_loss_averaging(&g, &v, mu, None, q, trials, child_seed(seed, 310 + k as u64))?;
        checks.push(Check::mc(format!("averaging D={dim} q={q} alpha=0.4 mu={mu:.4}"), &r));
    }

    let (dim, d, q) = (32, 8, 5);
    let basis = SubspaceBasis::new(dim, d, BasisMode::Block)?;
    let g = gaussian(dim, &mut rng);
    let v = prior_with_cosine(&g, 0.4, &mut rng)?;
    let gb = g.normalized().expect("nonzero");
    let gt = basis.project(&gb);
    let (a_sq, alpha1) = (gt.norm_sq(), v.dot(&gt));
    let eb = (a_sq * q as f64 / (d + q - 1) as f64).sqrt();
    let opt = mu_star_subspace(0.4, alpha1, a_sq, eb);
    for (k, mu) in [0.3, opt, 1.0].into_iter().enumerate() {
        let r = mc_loss_averaging(&g, &v, mu, Some(&basis), q, trials, child_seed(seed, 320 + k as u64))?;
        checks.push(Check::mc(
            format!("subspace averaging D={dim} d={d} q={q} alpha=0.4 mu={mu:.4}"),
            &r,
        ));
    }
    Ok(checks)
}

// ------------------------------------------------------------------- beta

/// Simulated expected RGF cosine against its closed-form approximation.
pub fn beta_checks(seed: u64, trials: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut rng = RngStream::new(seed, 400);
    let mut tag = 400;
    for dim in [16usize, 64, 256] {
        for q in [1usize, 5, 20, 50].into_iter().filter(|&q| q <= dim) {
            tag += 1;
            let g = gaussian(dim, &mut rng);
            let (sim, se) = simulate_expected_beta(&g, q, None, trials, child_seed(seed, tag))?;
            let approx = expected_beta(q, dim);
            let bound = if (dim, q) == (64, 20) { 0.03 } else { 0.05 };
            checks.push(Check::at_most(
                format!("E[beta] D={dim} q={q}"),
                (sim - approx).abs(),
                bound,
                format!("simulated {sim:.4} (se {se:.1e}), approximation {approx:.4}"),
            ));
        }
    }
    Ok(checks)
}

// ------------------------------------------------------------- covariance

/// Empirical `E[u u^T]` from `n` draws, split into fixed chunks so the
/// result does not depend on the thread count.
fn empirical_covariance(spec: &SamplerSpec<'_>, n: usize, seed: u64) -> Result<(Vec<f64>, f64)> {
    const CHUNKS: usize = 16;
    let dim = spec.dim;
    let parts: Vec<(Vec<f64>, f64)> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(seed, c as u64);
            let mut acc = vec![0.0; dim * dim];
            let mut norm_dev: f64 = 0.0;
            let count = n / CHUNKS + usize::from(c < n % CHUNKS);
            for _ in 0..count {
                let u = sample_biased(spec, &mut rng)?;
                norm_dev = norm_dev.max((u.norm() - 1.0).abs());
                for i in 0..dim {
                    let ui = u[i];
                    let row = &mut acc[i * dim..(i + 1) * dim];
                    for (a, &uj) in row.iter_mut().zip(u.iter()) {
                        *a += ui * uj;
                    }
                }
            }
            Ok((acc, norm_dev))
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; dim * dim];
    let mut norm_dev: f64 = 0.0;
    for (acc, dev) in parts {
        for (t, a) in total.iter_mut().zip(acc) {
            *t += a;
        }
        norm_dev = norm_dev.max(dev);
    }
    for t in &mut total {
        *t /= n as f64;
    }
    Ok((total, norm_dev))
}

fn covariance_matrix(cov: &CovarianceSpec<'_>, dim: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        m.extend(cov.apply(&RealVec::basis(dim, i)).iter());
    }
    m
}

fn frobenius(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Empirical sampling covariances against their structured forms.
pub fn covariance_checks(seed: u64, n: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut rng = RngStream::new(seed, 500);
    let mut norm_dev: f64 = 0.0;

    let dim = 16;
    let (emp, dev) = empirical_covariance(&SamplerSpec::uniform(dim), n, child_seed(seed, 500))?;
    norm_dev = norm_dev.max(dev);
    checks.push(Check::at_most(
        "uniform sphere, D=16",
        frobenius(&emp, &covariance_matrix(&CovarianceSpec::Isotropic, dim)),
        0.02,
        format!("Frobenius distance, N={n}"),
    ));

    let v = gaussian(dim, &mut rng).normalized().expect("nonzero");
    for (k, lambda) in [0.0, 0.36, 0.9].into_iter().enumerate() {
        let spec = SamplerSpec::biased(&v, lambda);
        let (emp, dev) = empirical_covariance(&spec, n, child_seed(seed, 510 + k as u64))?;
        norm_dev = norm_dev.max(dev);
        let target = covariance_matrix(&CovarianceSpec::Biased { lambda, v: &v }, dim);
        checks.push(Check::at_most(
            format!("biased, D=16 lambda={lambda}"),
            frobenius(&emp, &target),
            0.02,
            format!("Frobenius distance, N={n}"),
        ));
    }

    let (dim, d) = (64, 16);
    let basis = SubspaceBasis::new(dim, d, BasisMode::Block)?;
    let v = gaussian(dim, &mut rng).normalized().expect("nonzero");
    let overlap = basis.project(&v).norm_sq();
    for (k, lambda) in [0.1, 0.36, 0.7].into_iter().enumerate() {
        let spec = SamplerSpec::biased(&v, lambda).with_subspace(Some(&basis));
        let (emp, dev) = empirical_covariance(&spec, n, child_seed(seed, 520 + k as u64))?;
        norm_dev = norm_dev.max(dev);
        let target = covariance_matrix(
            &CovarianceSpec::Subspace {
                lambda,
                v: &v,
                basis: &basis,
            },
            dim,
        );
        checks.push(Check::at_most(
            format!("subspace, D={dim} d={d} lambda={lambda}"),
            frobenius(&emp, &target),
            0.05,
            format!("Frobenius distance, N={n}, prior share inside subspace {overlap:.3}"),
        ));
    }

    checks.push(Check::at_most(
        "samples have unit norm",
        norm_dev,
        1e-12,
        "max | |u| - 1 |",
    ));
    Ok(checks)
}

// ------------------------------------------------------------ sigma sweep

/// On a smooth non-linear loss, the estimator's loss approaches that of the
/// linear model with the same gradient as the step size shrinks. Both runs
/// share every random direction.
pub fn sigma_sweep_checks(seed: u64, trials: usize) -> Result<Vec<Check>> {
    let dim = 64;
    let model = Arc::new(SyntheticModelSpec::new(ModelKind::Softplus, dim, seed).build()?);
    let mut rng = RngStream::new(seed, 600);
    let x = gaussian(dim, &mut rng).scaled(0.5);
    let label = model.predict(&x);
    let g = model.gradient(&x, label);
    let prior = TransferPrior::external(&prior_with_cosine(&g, 0.4, &mut rng)?)?;
    let twin = Arc::new(SyntheticModel::linear(g.clone()));

    let q = 10;
    let lambda = 0.3;
    let mut cfg = EstimatorConfig::new(Method::Prgf, dim);
    cfg.q = q;
    cfg.lambda_override = Some(lambda);
    let mc_seed = child_seed(seed, 600);

    let lin = mc_estimates(&twin, &x, label, Some(&prior), None, &cfg, trials, mc_seed)?;
    let (lin_loss, lin_se) = loss_of_estimates(&g, &lin);
    let closed = loss_biased_sampling(&g, &CovarianceSpec::Biased { lambda, v: prior.v() }, q);

    let sigmas = [1.0, 1e-1, 1e-2, 1e-3, 1e-4];
    let mut gaps = Vec::with_capacity(sigmas.len());
    for sigma in sigmas {
        cfg.sigma = sigma;
        let ests = mc_estimates(&model, &x, label, Some(&prior), None, &cfg, trials, mc_seed)?;
        let (l, _) = loss_of_estimates(&g, &ests);
        gaps.push((l - lin_loss).abs() / lin_loss);
    }
    let rises = gaps.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
    let detail = sigmas
        .iter()
        .zip(&gaps)
        .map(|(s, gap)| format!("sigma={s:.0e}: {gap:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(vec![
        Check::at_most(
            "linear twin matches closed form",
            if lin_se > 0.0 {
                (lin_loss - closed).abs() / lin_se
            } else {
                f64::INFINITY
            },
            MC_SIGMAS,
            format!("mc={lin_loss:.6e} se={lin_se:.2e} closed={closed:.6e}"),
        ),
        Check::at_most("relative gap shrinks with sigma", rises as f64, 0.0, detail),
        Check::at_most(
            "relative gap at sigma=1e-4",
            *gaps.last().expect("nonempty"),
            1e-3,
            "softplus D=64",
        ),
    ])
}

// ------------------------------------------------------------------- norm

/// Gradient-norm, prior-cosine and subspace-share estimators on linear
/// oracles.
pub fn norm_checks(seed: u64) -> Result<Vec<Check>> {
    let dim = 64;
    let mut rng = RngStream::new(seed, 700);
    let g = gaussian(dim, &mut rng);
    let model = Arc::new(SyntheticModel::linear(g.clone()));
    let x = RealVec::zeros(dim);
    let sigma = crate::estimator::default_sigma(dim);
    let n2 = g.norm_sq();

    let norms = |samples: usize, trials: usize, tag: u64| -> Result<Vec<f64>> {
        let s = child_seed(seed, tag);
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let oracle = LocalOracle::new(model.clone());
                let mut rng = RngStream::new(s, t as u64);
                estimate_grad_norm(&oracle, &x, 0, 0.0, samples, sigma, &mut rng)
            })
            .collect()
    };

    let sq: Vec<f64> = norms(10, DEFAULT_TRIALS, 701)?.iter().map(|n| n * n / n2).collect();
    let (mean_sq, se_sq) = mean_se(&sq);
    let rmse = |ns: &[f64]| {
        let norm = n2.sqrt();
        (ns.iter().map(|n| (n / norm - 1.0).powi(2)).sum::<f64>() / ns.len() as f64).sqrt()
    };
    let r1 = rmse(&norms(1, 1000, 702)?);
    let r10 = rmse(&norms(10, 1000, 703)?);
    let ratio = r10 / r1;

    let prior = make_synthetic_prior(&g, 0.4, &mut rng)?;
    let alpha_seed = child_seed(seed, 704);
    let mut alphas: Vec<f64> = (0..100)
        .into_par_iter()
        .map(|t| {
            let oracle = LocalOracle::new(model.clone());
            let mut rng = RngStream::new(alpha_seed, t as u64);
            let mut stats = PriorStats {
                grad_norm_hat: Some(estimate_grad_norm(&oracle, &x, 0, 0.0, 10, sigma, &mut rng)?),
                ..PriorStats::default()
            };
            estimate_alpha(&oracle, &x, 0, 0.0, &prior, &mut stats, sigma)
        })
        .collect::<Result<_>>()?;
    alphas.sort_by(f64::total_cmp);
    let median = (alphas[49] + alphas[50]) / 2.0;

    // Subspace share over random gradients, normalized by the exact norm.
    let d = dim / 4;
    let basis = SubspaceBasis::new(dim, d, BasisMode::Block)?;
    let a_seed = child_seed(seed, 705);
    let shares: Vec<f64> = (0..1000)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(a_seed, t as u64);
            let g = gaussian(dim, &mut rng);
            let oracle = LocalOracle::new(Arc::new(SyntheticModel::linear(g.clone())));
            let mut stats = PriorStats {
                grad_norm_hat: Some(g.norm()),
                ..PriorStats::default()
            };
            let a = estimate_a(&oracle, &x, 0, 0.0, &basis, &mut stats, 10, sigma, &mut rng)?;
            Ok(a * a)
        })
        .collect::<Result<_>>()?;
    let (mean_share, _) = mean_se(&shares);
    let expected_share = d as f64 / dim as f64;

    Ok(vec![
        Check::at_most(
            "squared-norm estimate unbiased",
            (mean_sq - 1.0).abs(),
            0.03,
            format!("mean ratio {mean_sq:.4} (se {se_sq:.1e}), S=10, D={dim}, 10000 trials"),
        ),
        Check::at_most(
            "RMSE ratio S=10 vs S=1 near 1/sqrt(10)",
            (ratio * 10f64.sqrt() - 1.0).abs(),
            0.3,
            format!("RMSE S=1 {r1:.4}, S=10 {r10:.4}, ratio {ratio:.4}"),
        ),
        Check::at_most(
            "median alpha estimate near 0.4",
            (median - 0.4).abs(),
            0.1,
            format!("median {median:.4} over 100 trials, S=10"),
        ),
        Check::at_most(
            "mean A^2 estimate near d/D",
            (mean_share - expected_share).abs(),
            0.02,
            format!("mean {mean_share:.4}, d/D = {expected_share}, 1000 random gradients"),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.as_str()));
        }
        assert_eq!("loss".parse::<Suite>().unwrap(), Suite::Loss);
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn non_finite_values_fail() {
        let c = Check::at_most("x", f64::NAN, 1.0, "");
        assert!(!c.passed && c.value.is_none());
        assert!(Check::at_most("x", 0.5, 1.0, "").passed);
    }

    #[test]
    fn report_passes_only_when_all_checks_do() {
        let ok = Check::at_most("a", 0.0, 1.0, "");
        let bad = Check::at_most("b", 2.0, 1.0, "");
        assert!(SuiteReport::new(Suite::Beta, 1, vec![ok.clone()]).passed);
        let r = SuiteReport::new(Suite::Beta, 1, vec![ok, bad]);
        assert!(!r.passed);
        assert!(r.to_string().contains("[FAIL] b"));
    }

    #[test]
    fn small_covariance_run_is_close() {
        let checks = covariance_checks(3, 20_000).unwrap();
        // Sampling noise at this size is well under the subspace bound.
        assert!(
            checks.iter().filter(|c| c.bound == 0.05).all(|c| c.passed),
            "{checks:?}"
        );
    }

    #[test]
    fn cheap_suites_pass() {
        for c in norm_checks(11).unwrap() {
            assert!(c.passed, "{c:?}");
        }
    }
}
