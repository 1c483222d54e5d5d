//! Numeric adjudication of the estimator closed forms: exact losses,
//! brute-force optimizers, Monte Carlo runners and named suites.

mod closed_form;
mod grid;
mod monte_carlo;
mod suites;

pub use closed_form::{
    closed_form_f, closed_form_f_subspace, loss_averaging, loss_biased_sampling, loss_subspace_averaging,
    CovarianceSpec,
};
pub use grid::{grid_argmax, grid_argmax_lambda, grid_argmax_lambda_subspace, grid_argmin_mu};
pub use monte_carlo::{
    loss_of_estimates, mc_estimates, mc_loss_averaging, mc_loss_prgf, mc_loss_rgf, pooled_loss, simulate_expected_beta,
    McLossReport, DEFAULT_TRIALS,
};
pub use suites::{
    beta_checks, covariance_checks, lambda_checks, loss_checks, monotonic_checks, mu_checks, norm_checks, run_suite,
    sigma_sweep_checks, Check, Suite, SuiteReport, MC_SIGMAS,
};
