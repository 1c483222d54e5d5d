//! Query-based gradient estimators: plain random gradient-free (RGF),
//! prior-guided RGF with the optimal bias, and gradient averaging, each in a
//! full-space and a subspace flavour.

mod coefficients;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use coefficients::{
    expected_beta, expected_beta_subspace, lambda_star, lambda_star_subspace, mu_star, mu_star_subspace,
};

use crate::error::{Error, OracleError, Result};
use crate::math::{sample_biased, RealVec, RngStream, SamplerSpec, SubspaceBasis};
use crate::oracle::LossOracle;
use crate::prior::{estimate_a, estimate_alpha, estimate_grad_norm, PriorStats, TransferPrior};

/// Averaging threshold below which the prior is returned unchanged.
pub const DEFAULT_THRESHOLD_C: f64 = 0.414_213_562_373_095_03; // 1 / (1 + sqrt 2)
pub const DEFAULT_Q: usize = 50;
pub const DEFAULT_NORM_SAMPLES: usize = 10;
pub const DEFAULT_NORM_REFRESH: u32 = 10;

/// Default finite-difference step, `1e-4 sqrt(D)`.
pub fn default_sigma(dim: usize) -> f64 {
    1e-4 * (dim as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rgf,
    RgfD,
    Prgf,
    PrgfD,
    Avg,
    AvgD,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Rgf,
        Method::RgfD,
        Method::Prgf,
        Method::PrgfD,
        Method::Avg,
        Method::AvgD,
    ];

    pub fn uses_subspace(self) -> bool {
        matches!(self, Method::RgfD | Method::PrgfD | Method::AvgD)
    }

    pub fn uses_prior(self) -> bool {
        !matches!(self, Method::Rgf | Method::RgfD)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rgf => "rgf",
            Method::RgfD => "rgf_d",
            Method::Prgf => "prgf",
            Method::PrgfD => "prgf_d",
            Method::Avg => "avg",
            Method::AvgD => "avg_d",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub method: Method,
    pub q: usize,
    pub sigma: f64,
    /// Probes per norm estimate (`S`).
    pub norm_samples: usize,
    /// Estimator calls between norm refreshes (`R`).
    pub norm_refresh: u32,
    #[serde(default)]
    pub lambda_override: Option<f64>,
    #[serde(default)]
    pub mu_override: Option<f64>,
    pub threshold_c: f64,
}

impl EstimatorConfig {
    /// Standard settings for a `dim`-dimensional input.
    pub fn new(method: Method, dim: usize) -> Self {
        Self {
            method,
            q: DEFAULT_Q,
            sigma: default_sigma(dim),
            norm_samples: DEFAULT_NORM_SAMPLES,
            norm_refresh: DEFAULT_NORM_REFRESH,
            lambda_override: None,
            mu_override: None,
            threshold_c: DEFAULT_THRESHOLD_C,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::config("q must be at least 1"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::config("sigma must be positive"));
        }
        if self.norm_samples == 0 {
            return Err(Error::config("norm_samples must be at least 1"));
        }
        if self.norm_refresh == 0 {
            return Err(Error::config("norm_refresh must be at least 1"));
        }
        if !(self.threshold_c > 0.0 && self.threshold_c < 1.0) {
            return Err(Error::config("threshold_c must lie in (0, 1)"));
        }
        for (name, v) in [
            ("lambda_override", self.lambda_override),
            ("mu_override", self.mu_override),
        ] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::config(format!("{name} must lie in [0, 1]")));
                }
            }
        }
        let is_prgf = matches!(self.method, Method::Prgf | Method::PrgfD);
        let is_avg = matches!(self.method, Method::Avg | Method::AvgD);
        if self.lambda_override.is_some() && !is_prgf {
            return Err(Error::config(format!(
                "lambda_override does not apply to {}",
                self.method
            )));
        }
        if self.mu_override.is_some() && !is_avg {
            return Err(Error::config(format!("mu_override does not apply to {}", self.method)));
        }
        Ok(())
    }
}

/// Where one estimate's queries went.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBreakdown {
    pub baseline: u64,
    pub norm: u64,
    pub alpha_probe: u64,
    pub subspace_norm: u64,
    pub samples: u64,
}

impl QueryBreakdown {
    pub fn total(&self) -> u64 {
        self.baseline + self.norm + self.alpha_probe + self.subspace_norm + self.samples
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub g_hat: RealVec,
    pub queries_spent: u64,
    pub breakdown: QueryBreakdown,
    /// `f(x, y)` used as the finite-difference baseline.
    pub baseline_loss: f64,
    pub lambda_used: Option<f64>,
    pub mu_used: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub a_hat: Option<f64>,
    /// The prior was returned as the estimate without sampling.
    pub shortcut: bool,
    /// The measured cosine was negative and `-v` was used instead of `v`.
    pub prior_flipped: bool,
}

/// Runs `cfg.method` at `x`.
///
/// `f0` is the loss at `x` when the caller already has it; otherwise it is
/// queried here. `prior` is required by the prior-guided methods and
/// `basis` by the subspace ones. On oracle failure the error is
/// [`Error::PartialEstimate`] carrying the queries spent in this call.
#[allow(clippy::too_many_arguments)]
pub fn estimate(
    oracle: &dyn LossOracle,
    x: &RealVec,
    label: i64,
    f0: Option<f64>,
    prior: Option<&TransferPrior>,
    basis: Option<&SubspaceBasis>,
    cfg: &EstimatorConfig,
    stats: &mut PriorStats,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let basis = if cfg.method.uses_subspace() {
        Some(basis.ok_or_else(|| Error::config(format!("{} needs a subspace basis", cfg.method)))?)
    } else {
        None
    };
    if let Some(b) = basis {
        if b.ambient_dim() != x.dim() {
            return Err(Error::DimMismatch {
                expected: x.dim(),
                got: b.ambient_dim(),
            });
        }
    }
    match cfg.method {
        Method::Rgf | Method::RgfD => estimate_rgf(oracle, x, label, f0, cfg.q, cfg.sigma, basis, rng),
        Method::Prgf | Method::PrgfD => {
            let prior = require_prior(prior, cfg, x)?;
            estimate_prgf(oracle, x, label, f0, prior, basis, cfg, stats, rng)
        }
        Method::Avg | Method::AvgD => {
            let prior = require_prior(prior, cfg, x)?;
            estimate_averaging(oracle, x, label, f0, prior, basis, cfg, stats, rng)
        }
    }
}

fn require_prior<'a>(
    prior: Option<&'a TransferPrior>,
    cfg: &EstimatorConfig,
    x: &RealVec,
) -> Result<&'a TransferPrior> {
    let p = prior.ok_or_else(|| Error::config(format!("{} needs a transfer prior", cfg.method)))?;
    if p.dim() != x.dim() {
        return Err(Error::DimMismatch {
            expected: x.dim(),
            got: p.dim(),
        });
    }
    Ok(p)
}

/// `(1/q) sum_i deriv(u_i) u_i` over `q` directions drawn from `spec`.
///
/// `deriv` returns the directional derivative estimate along `u_i`.
pub fn directional_average(
    q: usize,
    spec: &SamplerSpec<'_>,
    rng: &mut RngStream,
    mut deriv: impl FnMut(&RealVec) -> Result<f64>,
) -> Result<RealVec> {
    if q == 0 {
        return Err(Error::config("q must be at least 1"));
    }
    let mut acc = RealVec::zeros(spec.dim);
    for _ in 0..q {
        let u = sample_biased(spec, rng)?;
        let d = deriv(&u)?;
        acc.axpy(d, &u);
    }
    acc.scale(1.0 / q as f64);
    Ok(acc)
}

/// Tracks ledger deltas for one estimator call.
struct Meter<'a> {
    oracle: &'a dyn LossOracle,
    start: u64,
    mark: u64,
}

impl<'a> Meter<'a> {
    fn new(oracle: &'a dyn LossOracle) -> Self {
        let start = oracle.queries_used();
        Self {
            oracle,
            start,
            mark: start,
        }
    }

    /// Queries since the previous lap.
    fn lap(&mut self) -> u64 {
        let now = self.oracle.queries_used();
        let d = now - self.mark;
        self.mark = now;
        d
    }

    fn spent(&self) -> u64 {
        self.oracle.queries_used() - self.start
    }

    fn wrap<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::Oracle(source) => Error::PartialEstimate {
                spent: self.spent(),
                source,
            },
            other => other,
        })
    }
}

fn baseline(oracle: &dyn LossOracle, x: &RealVec, label: i64, f0: Option<f64>) -> Result<f64, OracleError> {
    match f0 {
        Some(f) => Ok(f),
        None => oracle.query(x, label),
    }
}

#[allow(clippy::too_many_arguments)]
fn sample_fd(
    oracle: &dyn LossOracle,
    x: &RealVec,
    label: i64,
    f0: f64,
    sigma: f64,
    q: usize,
    spec: &SamplerSpec<'_>,
    rng: &mut RngStream,
) -> Result<RealVec> {
    directional_average(q, spec, rng, |u| {
        let f = oracle.query(&x.offset(sigma, u), label)?;
        Ok((f - f0) / sigma)
    })
}

/// Uniform-direction estimate `(1/q) sum_i (f(x + sigma u_i) - f(x))/sigma u_i`,
/// with `u_i` on the full sphere or, given `basis`, on the subspace sphere.
#[allow(clippy::too_many_arguments)]
pub fn estimate_rgf(
    oracle: &dyn LossOracle,
    x: &RealVec,
    label: i64,
    f0: Option<f64>,
    q: usize,
    sigma: f64,
    basis: Option<&SubspaceBasis>,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    if q == 0 {
        return Err(Error::config("q must be at least 1"));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::config("sigma must be positive"));
    }
    let mut m = Meter::new(oracle);
    let mut bd = QueryBreakdown::default();
    let f0 = m.wrap(baseline(oracle, x, label, f0).map_err(Error::from))?;
    bd.baseline = m.lap();
    let spec = SamplerSpec::uniform(x.dim()).with_subspace(basis);
    let g = m.wrap(sample_fd(oracle, x, label, f0, sigma, q, &spec, rng))?;
    bd.samples = m.lap();
    Ok(GradientEstimate {
        g_hat: g,
        queries_spent: m.spent(),
        breakdown: bd,
        baseline_loss: f0,
        lambda_used: None,
        mu_used: None,
        alpha_hat: None,
        a_hat: None,
        shortcut: false,
        prior_flipped: false,
    })
}

struct Measured {
    v: RealVec,
    alpha: f64,
    a2: Option<f64>,
    flipped: bool,
    degenerate: bool,
}

/// Norm refresh, cosine probe and (with a basis) subspace share, in that
/// order. Advances `stats.age`.
#[allow(clippy::too_many_arguments)]
fn measure_prior(
    m: &mut Meter<'_>,
    x: &RealVec,
    label: i64,
    f0: f64,
    prior: &TransferPrior,
    basis: Option<&SubspaceBasis>,
    cfg: &EstimatorConfig,
    stats: &mut PriorStats,
    rng: &mut RngStream,
    bd: &mut QueryBreakdown,
) -> Result<Measured> {
    let oracle = m.oracle;
    let refresh = stats.needs_refresh(cfg.norm_refresh);
    if refresh {
        let n = m.wrap(estimate_grad_norm(
            oracle,
            x,
            label,
            f0,
            cfg.norm_samples,
            cfg.sigma,
            rng,
        ))?;
        stats.grad_norm_hat = Some(n);
        stats.age = 0;
    }
    bd.norm = m.lap();
    stats.age += 1;

    let norm = stats.grad_norm_hat.unwrap_or(0.0);
    if !(norm > 0.0 && norm.is_finite()) {
        // Nothing to measure against; treat the prior as uninformative.
        stats.alpha_hat = Some(0.0);
        return Ok(Measured {
            v: prior.v().clone(),
            alpha: 0.0,
            a2: basis.map(|_| stats.a_hat.unwrap_or(0.0).powi(2)),
            flipped: false,
            degenerate: true,
        });
    }
    let alpha = m.wrap(estimate_alpha(oracle, x, label, f0, prior, stats, cfg.sigma))?;
    bd.alpha_probe = m.lap();

    let a2 = match basis {
        Some(b) => {
            let a = if refresh || stats.a_hat.is_none() {
                m.wrap(estimate_a(
                    oracle,
                    x,
                    label,
                    f0,
                    b,
                    stats,
                    cfg.norm_samples,
                    cfg.sigma,
                    rng,
                ))?
            } else {
                stats.a_hat.unwrap_or(0.0)
            };
            bd.subspace_norm = m.lap();
            Some(a * a)
        }
        None => None,
    };

    let flipped = alpha < 0.0;
    let v = if flipped {
        prior.v().scaled(-1.0)
    } else {
        prior.v().clone()
    };
    Ok(Measured {
        v,
        alpha: alpha.abs(),
        a2,
        flipped,
        degenerate: false,
    })
}

/// Prior-guided RGF: measure the prior, pick the optimal bias, and either
/// return the prior outright (bias 1) or average `q` biased samples.
#[allow(clippy::too_many_arguments)]
pub fn estimate_prgf(
    oracle: &dyn LossOracle,
    x: &RealVec,
    label: i64,
    f0: Option<f64>,
    prior: &TransferPrior,
    basis: Option<&SubspaceBasis>,
    cfg: &EstimatorConfig,
    stats: &mut PriorStats,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let mut m = Meter::new(oracle);
    let mut bd = QueryBreakdown::default();
    let f0 = m.wrap(baseline(oracle, x, label, f0).map_err(Error::from))?;
    bd.baseline = m.lap();

    let (v, lambda, alpha, a2, flipped) = match cfg.lambda_override {
        Some(l) => {
            stats.age += 1;
            (prior.v().clone(), l, None, None, false)
        }
        None => {
            let p = measure_prior(&mut m, x, label, f0, prior, basis, cfg, stats, rng, &mut bd)?;
            let a2_alpha = p.alpha * p.alpha;
            let lambda = if p.degenerate {
                0.0
            } else {
                match (basis, p.a2) {
                    (Some(b), Some(a2)) => lambda_star_subspace(a2_alpha, a2, cfg.q, b.dim()),
                    _ => lambda_star(a2_alpha, cfg.q, x.dim()),
                }
            };
            (p.v, lambda, Some(p.alpha), p.a2, p.flipped)
        }
    };

    let mut out = GradientEstimate {
        g_hat: v.clone(),
        queries_spent: 0,
        breakdown: bd,
        baseline_loss: f0,
        lambda_used: Some(lambda),
        mu_used: None,
        alpha_hat: alpha,
        a_hat: a2.map(f64::sqrt),
        shortcut: lambda == 1.0,
        prior_flipped: flipped,
    };
    if !out.shortcut {
        let spec = SamplerSpec::biased(&v, lambda).with_subspace(basis);
        out.g_hat = m.wrap(sample_fd(oracle, x, label, f0, cfg.sigma, cfg.q, &spec, rng))?;
        bd.samples = m.lap();
    }
    out.breakdown = bd;
    out.queries_spent = m.spent();
    Ok(out)
}

/// Gradient averaging: `(1 - mu) v + mu normalize(g_rgf)`, or `v` alone
/// when the optimal weight falls at or below `cfg.threshold_c`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_averaging(
    oracle: &dyn LossOracle,
    x: &RealVec,
    label: i64,
    f0: Option<f64>,
    prior: &TransferPrior,
    basis: Option<&SubspaceBasis>,
    cfg: &EstimatorConfig,
    stats: &mut PriorStats,
    rng: &mut RngStream,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let mut m = Meter::new(oracle);
    let mut bd = QueryBreakdown::default();
    let f0 = m.wrap(baseline(oracle, x, label, f0).map_err(Error::from))?;
    bd.baseline = m.lap();

    let (v, mu, shortcut, alpha, a2, flipped) = match cfg.mu_override {
        Some(mu) => {
            stats.age += 1;
            (prior.v().clone(), mu, mu == 0.0, None, None, false)
        }
        None => {
            let p = measure_prior(&mut m, x, label, f0, prior, basis, cfg, stats, rng, &mut bd)?;
            let e_beta = match (basis, p.a2) {
                (Some(b), Some(a2)) => expected_beta_subspace(cfg.q, b.dim(), a2),
                _ => expected_beta(cfg.q, x.dim()),
            };
            let mu = if p.degenerate { 1.0 } else { mu_star(p.alpha, e_beta) };
            (p.v, mu, mu <= cfg.threshold_c, Some(p.alpha), p.a2, p.flipped)
        }
    };

    let mut out = GradientEstimate {
        g_hat: v.clone(),
        queries_spent: 0,
        breakdown: bd,
        baseline_loss: f0,
        lambda_used: None,
        mu_used: Some(mu),
        alpha_hat: alpha,
        a_hat: a2.map(f64::sqrt),
        shortcut,
        prior_flipped: flipped,
    };
    if !shortcut {
        let spec = SamplerSpec::uniform(x.dim()).with_subspace(basis);
        let g_u = m.wrap(sample_fd(oracle, x, label, f0, cfg.sigma, cfg.q, &spec, rng))?;
        bd.samples = m.lap();
        // A zero RGF estimate has probability zero; keep the prior then.
        if let Some(n) = g_u.normalized() {
            let mut g = v.scaled(1.0 - mu);
            g.axpy(mu, &n);
            out.g_hat = g;
        }
    }
    out.breakdown = bd;
    out.queries_spent = m.spent();
    Ok(out)
}
