//! Unit-hypersphere sampling and the prior-biased direction samplers.
//!
//! With bias direction `v` and coefficient `lambda`, a sample is
//! `u = sqrt(lambda) v + sqrt(1 - lambda) normalize((I - v v^T) xi)`, where
//! `xi` is uniform on the ambient sphere or, with a subspace basis `V`,
//! `xi = V zeta` for `zeta` uniform on the `d`-sphere. The full-space form
//! has covariance `lambda v v^T + (1 - lambda)/(D - 1) (I - v v^T)`; the
//! subspace form approximates `lambda v v^T + (1 - lambda)/d V V^T`.

use crate::error::{Error, Result};
use crate::math::{RealVec, RngStream, SubspaceBasis};

/// Tolerance on `||v|| = 1` for bias directions.
pub const UNIT_TOL: f64 = 1e-9;

/// Parameters of one biased draw.
#[derive(Debug, Clone, Copy)]
pub struct SamplerSpec<'a> {
    pub dim: usize,
    pub bias_direction: Option<&'a RealVec>,
    pub bias_coefficient: f64,
    pub subspace: Option<&'a SubspaceBasis>,
}

impl<'a> SamplerSpec<'a> {
    /// Uniform sampling on the full sphere.
    pub fn uniform(dim: usize) -> Self {
        Self {
            dim,
            bias_direction: None,
            bias_coefficient: 0.0,
            subspace: None,
        }
    }

    pub fn biased(v: &'a RealVec, lambda: f64) -> Self {
        Self {
            dim: v.dim(),
            bias_direction: Some(v),
            bias_coefficient: lambda,
            subspace: None,
        }
    }

    pub fn with_subspace(mut self, basis: Option<&'a SubspaceBasis>) -> Self {
        self.subspace = basis;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if !(0.0..=1.0).contains(&self.bias_coefficient) {
            return Err(Error::config(format!(
                "bias coefficient {} outside [0, 1]",
                self.bias_coefficient
            )));
        }
        if let Some(v) = self.bias_direction {
            if v.dim() != self.dim {
                return Err(Error::DimMismatch {
                    expected: self.dim,
                    got: v.dim(),
                });
            }
            if (v.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::config("bias direction must have unit norm"));
            }
        }
        if let Some(b) = self.subspace {
            if b.ambient_dim() != self.dim {
                return Err(Error::DimMismatch {
                    expected: self.dim,
                    got: b.ambient_dim(),
                });
            }
        }
        Ok(())
    }
}

/// Uniform draw from the unit sphere in `R^dim` (normalized Gaussian).
pub fn sample_unit_sphere(dim: usize, rng: &mut RngStream) -> Result<RealVec> {
    if dim == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let mut buf = vec![0.0; dim];
    loop {
        rng.fill_normal(&mut buf);
        let n = super::vector::dot(&buf, &buf).sqrt();
        if n > 0.0 {
            for b in &mut buf {
                *b /= n;
            }
            return Ok(RealVec::from_raw(buf));
        }
    }
}

/// `(I - v v^T) x` for unit `v`.
pub fn project_orthogonal(x: &[f64], v: &RealVec) -> RealVec {
    let c = v.dot(x);
    RealVec::from_raw(x.iter().zip(v.iter()).map(|(a, b)| a - c * b).collect())
}

/// Draws one direction according to `spec`.
pub fn sample_biased(spec: &SamplerSpec<'_>, rng: &mut RngStream) -> Result<RealVec> {
    spec.validate()?;
    let lambda = spec.bias_coefficient;
    let Some(v) = spec.bias_direction else {
        return base_draw(spec, rng);
    };
    if lambda == 1.0 {
        return Ok(v.clone());
    }
    // (I - v v^T) xi vanishes with probability zero; allow one retry.
    for _ in 0..2 {
        let xi = base_draw(spec, rng)?;
        let r = project_orthogonal(&xi, v);
        let n = r.norm();
        if n > 1e-12 {
            let a = lambda.sqrt();
            let b = (1.0 - lambda).sqrt() / n;
            return Ok(RealVec::from_raw(
                v.iter().zip(r.iter()).map(|(vi, ri)| a * vi + b * ri).collect(),
            ));
        }
    }
    Err(Error::DegenerateSample)
}

fn base_draw(spec: &SamplerSpec<'_>, rng: &mut RngStream) -> Result<RealVec> {
    match spec.subspace {
        Some(basis) => {
            let zeta = sample_unit_sphere(basis.dim(), rng)?;
            Ok(basis.apply(&zeta))
        }
        None => sample_unit_sphere(spec.dim, rng),
    }
}
