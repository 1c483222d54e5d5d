//! Closed-form expected losses and cosine objectives.

use crate::math::{RealVec, SubspaceBasis};

/// Expected squared cosine objective `F(lambda)` for full-space biased
/// sampling; the estimator loss is `|g|^2 (1 - F)`.
pub fn closed_form_f(lambda: f64, alpha2: f64, dim: usize, q: usize) -> f64 {
    let d1 = dim as f64 - 1.0;
    let c = (1.0 - lambda) / d1;
    f_ratio(lambda, alpha2, c, c * (1.0 - alpha2), q)
}

/// Subspace analog of [`closed_form_f`], with `A^2` the squared share of
/// the normalized gradient inside the `d`-dimensional subspace.
pub fn closed_form_f_subspace(lambda: f64, alpha2: f64, a2: f64, d: usize, q: usize) -> f64 {
    let c = (1.0 - lambda) / d as f64;
    f_ratio(lambda, alpha2, c, c * a2, q)
}

// (l a2 + rest)^2 / ((1 - 1/q)(l^2 a2 + c rest) + (1/q)(l a2 + rest))
fn f_ratio(lambda: f64, alpha2: f64, c: f64, rest: f64, q: usize) -> f64 {
    let q = q as f64;
    let m1 = lambda * alpha2 + rest;
    let m2 = lambda * lambda * alpha2 + c * rest;
    let den = (1.0 - 1.0 / q) * m2 + m1 / q;
    if den <= 0.0 {
        0.0
    } else {
        m1 * m1 / den
    }
}

/// Sampling covariance `C = E[u u^T]` in structured form.
#[derive(Debug, Clone, Copy)]
pub enum CovarianceSpec<'a> {
    /// `I / D`.
    Isotropic,
    /// `lambda v v^T + (1 - lambda)/(D - 1) (I - v v^T)`.
    Biased { lambda: f64, v: &'a RealVec },
    /// `lambda v v^T + (1 - lambda)/d V V^T`.
    Subspace {
        lambda: f64,
        v: &'a RealVec,
        basis: &'a SubspaceBasis,
    },
}

impl CovarianceSpec<'_> {
    /// `C g`.
    pub fn apply(&self, g: &RealVec) -> RealVec {
        let dim = g.dim() as f64;
        match *self {
            CovarianceSpec::Isotropic => g.scaled(1.0 / dim),
            CovarianceSpec::Biased { lambda, v } => {
                let a = v.dot(g);
                let c = (1.0 - lambda) / (dim - 1.0);
                let mut out = g.scaled(c);
                out.axpy((lambda - c) * a, v);
                out
            }
            CovarianceSpec::Subspace { lambda, v, basis } => {
                let mut out = basis.project(g);
                out.scale((1.0 - lambda) / basis.dim() as f64);
                out.axpy(lambda * v.dot(g), v);
                out
            }
        }
    }
}

/// Expected loss `min_b E|g - b g_hat|^2` of the `q`-sample estimator
/// with sampling covariance `C`:
/// `|g|^2 - (g^T C g)^2 / ((1 - 1/q) g^T C^2 g + (1/q) g^T C g)`.
/// Returns `|g|^2` when `g^T C g = 0`.
pub fn loss_biased_sampling(g: &RealVec, cov: &CovarianceSpec<'_>, q: usize) -> f64 {
    let n2 = g.norm_sq();
    let cg = cov.apply(g);
    let gcg = g.dot(&cg);
    if gcg <= 0.0 {
        return n2;
    }
    let gc2g = cg.norm_sq();
    let q = q as f64;
    n2 - gcg * gcg / ((1.0 - 1.0 / q) * gc2g + gcg / q)
}

/// Loss of `(1 - mu) v + mu normalize(g_rgf)` given the prior cosine
/// `alpha`, the expected RGF cosine `e_beta`, and `|g|`.
pub fn loss_averaging(mu: f64, alpha: f64, e_beta: f64, norm: f64) -> f64 {
    averaging(mu, alpha, e_beta, alpha * e_beta, norm)
}

/// Subspace averaging loss; `alpha1` is the cosine of `v` with the
/// in-subspace part of the normalized gradient, `a2` that part's squared
/// norm.
pub fn loss_subspace_averaging(mu: f64, alpha: f64, alpha1: f64, a2: f64, e_beta: f64, norm: f64) -> f64 {
    let k = if a2 > 0.0 { alpha1 / a2 * e_beta } else { 0.0 };
    averaging(mu, alpha, e_beta, k, norm)
}

fn averaging(mu: f64, alpha: f64, e_beta: f64, k: f64, norm: f64) -> f64 {
    let num = (1.0 - mu) * alpha + mu * e_beta;
    let den = (1.0 - mu).powi(2) + mu * mu + 2.0 * mu * (1.0 - mu) * k;
    let ratio = if num <= 0.0 || den <= 0.0 { 0.0 } else { num * num / den };
    (1.0 - ratio) * norm * norm
}
