//! Monte Carlo estimates of estimator losses on linear oracles, where the
//! finite difference equals the directional derivative exactly.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate, estimate_rgf, EstimatorConfig, Method};
use crate::math::{RealVec, RngStream, SubspaceBasis};
use crate::oracle::{LocalOracle, SyntheticModel};
use crate::prior::{PriorStats, TransferPrior};
use crate::verify::closed_form::{loss_averaging, loss_biased_sampling, loss_subspace_averaging, CovarianceSpec};

pub const DEFAULT_TRIALS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McLossReport {
    pub mc_loss: f64,
    /// Zero, up to rounding, when every trial produced the same estimate.
    pub std_error: f64,
    pub closed_form: f64,
    pub trials: usize,
    /// Mean cosine of the inner RGF estimate, for averaging runs.
    pub mean_beta: Option<f64>,
}

impl McLossReport {
    /// Whether the trials were identical up to rounding.
    pub fn is_deterministic(&self) -> bool {
        self.std_error <= 1e-12 * (1.0 + self.closed_form.abs())
    }

    /// `|mc - closed| / se`, or 0/inf for deterministic runs.
    pub fn z_score(&self) -> f64 {
        let diff = (self.mc_loss - self.closed_form).abs();
        if !self.is_deterministic() {
            diff / self.std_error
        } else if diff <= 1e-9 * (1.0 + self.closed_form.abs()) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// Within `k` standard errors (deterministic runs within 1e-9).
    pub fn agrees(&self, k: f64) -> bool {
        self.z_score() <= k
    }
}

/// `min_b E|g - b g_hat|^2` from samples of `a = g^T g_hat` and
/// `s = |g_hat|^2`: `|g|^2 - mean(a)^2 / mean(s)`, with a delta-method
/// standard error.
pub fn pooled_loss(norm_sq: f64, a: &[f64], s: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let ms = s.iter().sum::<f64>() / n;
    if ma <= 0.0 || ms <= 0.0 {
        return (norm_sq, 0.0);
    }
    let (mut vaa, mut vss, mut vas) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(s) {
        let (da, ds) = (x - ma, y - ms);
        vaa += da * da;
        vss += ds * ds;
        vas += da * ds;
    }
    let k = (n - 1.0).max(1.0);
    let (vaa, vss, vas) = (vaa / k, vss / k, vas / k);
    let ga = -2.0 * ma / ms;
    let gs = ma * ma / (ms * ms);
    let var = (ga * ga * vaa + gs * gs * vss + 2.0 * ga * gs * vas) / n;
    (norm_sq - ma * ma / ms, var.max(0.0).sqrt())
}

fn linear_model(g: &RealVec) -> Arc<SyntheticModel> {
    Arc::new(SyntheticModel::linear(g.clone()))
}

/// Runs `cfg` independently `trials` times at `x` on fresh oracles over
/// `model`, trial `t` drawing from `RngStream(seed, t)`. Returns the
/// estimates in trial order.
#[allow(clippy::too_many_arguments)]
pub fn mc_estimates(
    model: &Arc<SyntheticModel>,
    x: &RealVec,
    label: i64,
    prior: Option<&TransferPrior>,
    basis: Option<&SubspaceBasis>,
    cfg: &EstimatorConfig,
    trials: usize,
    seed: u64,
) -> Result<Vec<RealVec>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let oracle = LocalOracle::new(model.clone());
            let mut rng = RngStream::new(seed, t as u64);
            let est = estimate(
                &oracle,
                x,
                label,
                None,
                prior,
                basis,
                cfg,
                &mut PriorStats::default(),
                &mut rng,
            )?;
            Ok(est.g_hat)
        })
        .collect()
}

/// Pooled loss of a set of estimates against the true gradient `g`.
pub fn loss_of_estimates(g: &RealVec, estimates: &[RealVec]) -> (f64, f64) {
    let a: Vec<f64> = estimates.iter().map(|e| g.dot(e)).collect();
    let s: Vec<f64> = estimates.iter().map(|e| e.norm_sq()).collect();
    pooled_loss(g.norm_sq(), &a, &s)
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < 2 {
        return Err(Error::config("Monte Carlo needs at least 2 trials"));
    }
    Ok(())
}

/// Runs the prior-guided estimator with fixed `lambda` on the linear loss
/// `g^T x` and compares against the closed-form loss.
pub fn mc_loss_prgf(
    g: &RealVec,
    v: &RealVec,
    lambda: f64,
    basis: Option<&SubspaceBasis>,
    q: usize,
    trials: usize,
    seed: u64,
) -> Result<McLossReport> {
    check_trials(trials)?;
    let model = linear_model(g);
    let prior = TransferPrior::external(v)?;
    let method = if basis.is_some() { Method::PrgfD } else { Method::Prgf };
    let mut cfg = EstimatorConfig::new(method, g.dim());
    cfg.q = q;
    cfg.lambda_override = Some(lambda);
    let x = RealVec::zeros(g.dim());
    let ests = mc_estimates(&model, &x, 0, Some(&prior), basis, &cfg, trials, seed)?;
    let (mc_loss, std_error) = loss_of_estimates(g, &ests);
    let cov = match basis {
        Some(basis) => CovarianceSpec::Subspace {
            lambda,
            v: prior.v(),
            basis,
        },
        None => CovarianceSpec::Biased { lambda, v: prior.v() },
    };
    Ok(McLossReport {
        mc_loss,
        std_error,
        closed_form: loss_biased_sampling(g, &cov, q),
        trials,
        mean_beta: None,
    })
}

/// Uniform-direction estimator (full sphere or subspace sphere) on a linear
/// loss against its closed form.
pub fn mc_loss_rgf(
    g: &RealVec,
    basis: Option<&SubspaceBasis>,
    q: usize,
    trials: usize,
    seed: u64,
) -> Result<McLossReport> {
    check_trials(trials)?;
    let model = linear_model(g);
    let method = if basis.is_some() { Method::RgfD } else { Method::Rgf };
    let mut cfg = EstimatorConfig::new(method, g.dim());
    cfg.q = q;
    let x = RealVec::zeros(g.dim());
    let ests = mc_estimates(&model, &x, 0, None, basis, &cfg, trials, seed)?;
    let (mc_loss, std_error) = loss_of_estimates(g, &ests);
    let closed_form = match basis {
        Some(basis) => {
            // lambda = 0 leaves only the subspace term; v is irrelevant.
            let v = RealVec::basis(g.dim(), 0);
            loss_biased_sampling(
                g,
                &CovarianceSpec::Subspace {
                    lambda: 0.0,
                    v: &v,
                    basis,
                },
                q,
            )
        }
        None => loss_biased_sampling(g, &CovarianceSpec::Isotropic, q),
    };
    Ok(McLossReport {
        mc_loss,
        std_error,
        closed_form,
        trials,
        mean_beta: None,
    })
}

/// Runs the averaging estimator with fixed `mu` on a linear loss. The
/// closed form is evaluated with the mean RGF cosine measured on the same
/// trials; the subspace form additionally uses the exact in-subspace cosine.
pub fn mc_loss_averaging(
    g: &RealVec,
    v: &RealVec,
    mu: f64,
    basis: Option<&SubspaceBasis>,
    q: usize,
    trials: usize,
    seed: u64,
) -> Result<McLossReport> {
    check_trials(trials)?;
    let model = linear_model(g);
    let prior = TransferPrior::external(v)?;
    let v = prior.v();
    let method = if basis.is_some() { Method::AvgD } else { Method::Avg };
    let mut cfg = EstimatorConfig::new(method, g.dim());
    cfg.q = q;
    cfg.mu_override = Some(mu);
    let x = RealVec::zeros(g.dim());
    let ests = mc_estimates(&model, &x, 0, Some(&prior), basis, &cfg, trials, seed)?;
    let (mc_loss, std_error) = loss_of_estimates(g, &ests);
    let mean_beta = if mu > 0.0 {
        // Recover the normalized RGF direction from each blend.
        ests.iter()
            .map(|e| {
                let mut n = e.clone();
                n.axpy(-(1.0 - mu), v);
                n.scale(1.0 / mu);
                n.cosine(g)
            })
            .sum::<f64>()
            / trials as f64
    } else {
        0.0
    };
    let gbar = g.normalized().ok_or(Error::DegenerateGradient)?;
    let alpha = v.dot(&gbar);
    let closed_form = match basis {
        Some(b) => {
            let gt = b.project(&gbar);
            loss_subspace_averaging(mu, alpha, v.dot(&gt), gt.norm_sq(), mean_beta, g.norm())
        }
        None => loss_averaging(mu, alpha, mean_beta, g.norm()),
    };
    Ok(McLossReport {
        mc_loss,
        std_error,
        closed_form,
        trials,
        mean_beta: (mu > 0.0).then_some(mean_beta),
    })
}

/// Mean and standard error of the cosine between a `q`-sample uniform RGF
/// estimate and `g` on a linear loss.
pub fn simulate_expected_beta(
    g: &RealVec,
    q: usize,
    basis: Option<&SubspaceBasis>,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_trials(trials)?;
    let model = linear_model(g);
    let x = RealVec::zeros(g.dim());
    let sigma = crate::estimator::default_sigma(g.dim());
    let betas: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let oracle = LocalOracle::new(model.clone());
            let mut rng = RngStream::new(seed, t as u64);
            let est = estimate_rgf(&oracle, &x, 0, Some(0.0), q, sigma, basis, &mut rng)?;
            Ok(est.g_hat.cosine(g))
        })
        .collect::<Result<_>>()?;
    Ok(mean_se(&betas))
}

pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_loss_of_constant_estimates() {
        // g_hat = g / 2 always: b = 2 recovers g.
        let (l, se) = pooled_loss(4.0, &[2.0; 10], &[1.0; 10]);
        assert!(l.abs() < 1e-12 && se == 0.0);
    }

    #[test]
    fn pooled_loss_matches_direct_minimization() {
        // Two equally likely estimates e1 and e2 of g = (1, 1): E|g - b g_hat|^2
        // = 2 - 2b + b^2, minimized at b = 1 with loss 1.
        let (l, _) = pooled_loss(2.0, &[1.0, 1.0], &[1.0, 1.0]);
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_prior_run() {
        let g = RealVec::new(vec![1.0, 2.0, 2.0]).unwrap();
        let v = RealVec::new(vec![1.0, 0.0, 0.0]).unwrap();
        let r = mc_loss_prgf(&g, &v, 1.0, None, 3, 50, 0).unwrap();
        // alpha = 1/3
        assert!((r.mc_loss - 9.0 * (1.0 - 1.0 / 9.0)).abs() < 1e-9);
        assert!(r.is_deterministic());
        assert!(r.agrees(3.0));
    }
}
