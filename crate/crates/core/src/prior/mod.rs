//! Transfer priors, subspace bases, and query-based estimates of the prior's
//! quality: the cosine `alpha`, the gradient norm, and the subspace share `A`.
//!
//! Every estimator here takes the baseline loss `f(x, y)` as an argument, so
//! callers decide whether that query is shared.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{project_orthogonal, sample_unit_sphere, BasisMode, RealVec, RngStream, SubspaceBasis};
use crate::oracle::LossOracle;

/// Builds a subspace basis. Thin wrapper over [`SubspaceBasis::new`].
pub fn make_subspace(ambient: usize, dim: usize, mode: BasisMode) -> Result<SubspaceBasis> {
    SubspaceBasis::new(ambient, dim, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { target_cosine: f64 },
    External,
}

/// Normalized transfer gradient `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPrior {
    v: RealVec,
    provenance: Provenance,
}

impl TransferPrior {
    /// Wraps an arbitrary nonzero direction, normalizing it.
    pub fn external(direction: &RealVec) -> Result<Self> {
        let v = direction.normalized().ok_or(Error::DegenerateGradient)?;
        Ok(Self {
            v,
            provenance: Provenance::External,
        })
    }

    pub fn v(&self) -> &RealVec {
        &self.v
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.v.dim()
    }
}

/// `v = c g/|g| + sqrt(1 - c^2) r`, with `r` a uniformly random unit vector
/// orthogonal to `g`.
pub fn make_synthetic_prior(true_grad: &RealVec, target_cosine: f64, rng: &mut RngStream) -> Result<TransferPrior> {
    if !(0.0..=1.0).contains(&target_cosine) {
        return Err(Error::config(format!("target cosine {target_cosine} outside [0, 1]")));
    }
    let g = true_grad.normalized().ok_or(Error::DegenerateGradient)?;
    if target_cosine == 1.0 || g.dim() == 1 {
        return prior_from_residual(true_grad, target_cosine, &g);
    }
    let r = loop {
        let xi = sample_unit_sphere(g.dim(), rng)?;
        if project_orthogonal(&xi, &g).normalized().is_some() {
            break xi;
        }
    };
    prior_from_residual(true_grad, target_cosine, &r)
}

/// `v = c g/|g| + sqrt(1 - c^2) r`, with `r` the normalized component of
/// `residual` orthogonal to `g`. A fixed `residual` gives priors whose
/// error keeps a consistent direction as `g` changes.
pub fn prior_from_residual(true_grad: &RealVec, target_cosine: f64, residual: &RealVec) -> Result<TransferPrior> {
    if !(0.0..=1.0).contains(&target_cosine) {
        return Err(Error::config(format!("target cosine {target_cosine} outside [0, 1]")));
    }
    if residual.dim() != true_grad.dim() {
        return Err(Error::DimMismatch {
            expected: true_grad.dim(),
            got: residual.dim(),
        });
    }
    let g = true_grad.normalized().ok_or(Error::DegenerateGradient)?;
    let v = if target_cosine == 1.0 {
        g
    } else {
        let r = project_orthogonal(residual, &g)
            .normalized()
            .ok_or_else(|| Error::config("prior residual is parallel to the gradient"))?;
        let s = (1.0 - target_cosine * target_cosine).sqrt();
        let raw = RealVec::from_raw(g.iter().zip(r.iter()).map(|(a, b)| target_cosine * a + s * b).collect());
        // Renormalize away rounding; the cosine moves by O(1e-16).
        raw.normalized().expect("unit combination")
    };
    Ok(TransferPrior {
        v,
        provenance: Provenance::Synthetic { target_cosine },
    })
}

/// Cached prior-quality estimates for one attack.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorStats {
    pub alpha_hat: Option<f64>,
    pub a_hat: Option<f64>,
    pub grad_norm_hat: Option<f64>,
    pub subspace_norm_hat: Option<f64>,
    /// Estimator calls since the norms were last refreshed.
    pub age: u32,
}

impl PriorStats {
    pub fn needs_refresh(&self, period: u32) -> bool {
        self.grad_norm_hat.is_none() || self.age >= period
    }
}

/// `(f(x + sigma d) - f0) / sigma`. One query.
pub fn estimate_inner_product(
    oracle: &dyn LossOracle,
    x: &RealVec,
    label: i64,
    f0: f64,
    direction: &[f64],
    sigma: f64,
) -> Result<f64> {
    check_sigma(sigma)?;
    let f = oracle.query(&x.offset(sigma, direction), label)?;
    Ok((f - f0) / sigma)
}

/// `sqrt((D/S) sum_s ((f(x + sigma w_s) - f0)/sigma)^2)` with `w_s` uniform
/// on the sphere. `S` queries.
pub fn estimate_grad_norm(
    oracle: &dyn LossOracle,
    x: &RealVec,
    label: i64,
    f0: f64,
    samples: usize,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    norm_from_probes(
        oracle,
        x,
        label,
        f0,
        samples,
        sigma,
        x.dim(),
        |rng| sample_unit_sphere(x.dim(), rng),
        rng,
    )
}

/// Norm of the gradient's projection onto the subspace, probing only along
/// `w_s = V xi_s`. `S` queries.
#[allow(clippy::too_many_arguments)]
pub fn estimate_subspace_norm(
    oracle: &dyn LossOracle,
    x: &RealVec,
    label: i64,
    f0: f64,
    basis: &SubspaceBasis,
    samples: usize,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    if basis.ambient_dim() != x.dim() {
        return Err(Error::DimMismatch {
            expected: x.dim(),
            got: basis.ambient_dim(),
        });
    }
    norm_from_probes(
        oracle,
        x,
        label,
        f0,
        samples,
        sigma,
        basis.dim(),
        |rng| Ok(basis.apply(&sample_unit_sphere(basis.dim(), rng)?)),
        rng,
    )
}

#[allow(clippy::too_many_arguments)]
fn norm_from_probes(
    oracle: &dyn LossOracle,
    x: &RealVec,
    label: i64,
    f0: f64,
    samples: usize,
    sigma: f64,
    dim: usize,
    mut draw: impl FnMut(&mut RngStream) -> Result<RealVec>,
    rng: &mut RngStream,
) -> Result<f64> {
    check_sigma(sigma)?;
    if samples == 0 {
        return Err(Error::config("norm estimation needs at least one sample"));
    }
    let mut acc = 0.0;
    for _ in 0..samples {
        let w = draw(rng)?;
        let d = estimate_inner_product(oracle, x, label, f0, &w, sigma)?;
        acc += d * d;
    }
    Ok((dim as f64 / samples as f64 * acc).sqrt())
}

/// Cosine between `v` and the gradient from one probe along `v` and the
/// cached norm, clamped to `[-1, 1]`. One query.
///
/// Fails with [`Error::DegenerateGradient`] when the cached norm is zero.
pub fn estimate_alpha(
    oracle: &dyn LossOracle,
    x: &RealVec,
    label: i64,
    f0: f64,
    prior: &TransferPrior,
    stats: &mut PriorStats,
    sigma: f64,
) -> Result<f64> {
    let norm = cached_norm(stats)?;
    let ip = estimate_inner_product(oracle, x, label, f0, prior.v(), sigma)?;
    let alpha = (ip / norm).clamp(-1.0, 1.0);
    stats.alpha_hat = Some(alpha);
    Ok(alpha)
}

/// Share of the gradient norm inside the subspace, clamped to `[0, 1]`.
/// `S` queries.
#[allow(clippy::too_many_arguments)]
pub fn estimate_a(
    oracle: &dyn LossOracle,
    x: &RealVec,
    label: i64,
    f0: f64,
    basis: &SubspaceBasis,
    stats: &mut PriorStats,
    samples: usize,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    let norm = cached_norm(stats)?;
    let h = estimate_subspace_norm(oracle, x, label, f0, basis, samples, sigma, rng)?;
    stats.subspace_norm_hat = Some(h);
    let a = (h / norm).clamp(0.0, 1.0);
    stats.a_hat = Some(a);
    Ok(a)
}

fn cached_norm(stats: &PriorStats) -> Result<f64> {
    match stats.grad_norm_hat {
        None => Err(Error::config("gradient norm has not been estimated")),
        Some(n) if n <= 0.0 || !n.is_finite() => Err(Error::DegenerateGradient),
        Some(n) => Ok(n),
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("sigma must be positive, got {sigma}")))
    }
}
