//! Prior-guided random gradient-free estimation for black-box losses:
//! direction samplers, optimal bias and averaging coefficients, metered
//! oracles (local and remote), PGD attacks, experiment sweeps and numerical
//! verification suites.

pub mod attack;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod math;
pub mod oracle;
pub mod prior;
pub mod verify;

pub use attack::{AttackConfig, AttackTrace, Norm, Outcome, SuccessRule, Summary};
pub use error::{Error, OracleError, Result};
pub use estimator::{EstimatorConfig, GradientEstimate, Method};
pub use experiment::{RunConfig, RunOutput};
pub use math::{RealVec, RngStream, SubspaceBasis};
pub use oracle::{LocalOracle, LossOracle, RemoteOracle, SyntheticModel, SyntheticModelSpec};
pub use prior::TransferPrior;
