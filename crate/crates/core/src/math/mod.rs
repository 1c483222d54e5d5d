//! Vector math, seeded randomness and direction samplers.

mod rng;
mod sampling;
mod subspace;
mod vector;

pub use rng::RngStream;
pub use sampling::{project_orthogonal, sample_biased, sample_unit_sphere, SamplerSpec, UNIT_TOL};
pub use subspace::{BasisMode, SubspaceBasis};
pub use vector::{dot, RealVec};
