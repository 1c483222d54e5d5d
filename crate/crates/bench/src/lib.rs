//! Shared fixtures for the criterion benchmarks.

use std::sync::Arc;

use prgf_core::math::{BasisMode, RealVec, RngStream, SubspaceBasis};
use prgf_core::oracle::{ModelKind, SyntheticModel, SyntheticModelSpec};
use prgf_core::prior::{make_synthetic_prior, TransferPrior};

/// A softplus classifier with a point, its label, a transfer prior at
/// cosine 0.4 and a block subspace.
pub struct Fixture {
    pub model: Arc<SyntheticModel>,
    pub x: RealVec,
    pub label: i64,
    pub prior: TransferPrior,
    pub basis: SubspaceBasis,
}

impl Fixture {
    pub fn new(dim: usize, subspace_dim: usize) -> Self {
        let mut spec = SyntheticModelSpec::new(ModelKind::Softplus, dim, 0);
        spec.smooth_block = Some(dim / subspace_dim);
        spec.roughness = Some(0.1);
        let model = Arc::new(spec.build().expect("valid model"));
        let mut rng = RngStream::new(0, 0);
        let mut x = vec![0.0; dim];
        rng.fill_normal(&mut x);
        let x = RealVec::new(x).expect("finite point");
        let label = model.predict(&x);
        let grad = model.gradient(&x, label);
        let prior = make_synthetic_prior(&grad, 0.4, &mut rng).expect("non-degenerate gradient");
        let basis = SubspaceBasis::new(dim, subspace_dim, BasisMode::Block).expect("valid subspace");
        Self {
            model,
            x,
            label,
            prior,
            basis,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_prior_has_requested_cosine() {
        let f = Fixture::new(64, 8);
        let g = f.model.gradient(&f.x, f.label);
        assert!((f.prior.v().cosine(&g) - 0.4).abs() < 1e-9);
    }
}
