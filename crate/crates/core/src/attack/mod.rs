//! Query-limited projected gradient ascent on a black-box loss, driven by
//! any of the estimators.

mod report;

use serde::{Deserialize, Serialize};
use tracing::debug;

pub use report::{
    aggregate, median_queries, success_curve, write_curve_csv, write_summary_csv, write_traces_jsonl, CurvePoint,
    Summary,
};

use crate::error::{Error, OracleError, Result};
use crate::estimator::{estimate, EstimatorConfig, Method, QueryBreakdown};
use crate::math::{RealVec, RngStream, SubspaceBasis};
use crate::oracle::{BudgetedOracle, LossOracle, SyntheticModel};
use crate::prior::{make_synthetic_prior, prior_from_residual, PriorStats, TransferPrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L2,
    Linf,
}

impl Norm {
    pub fn as_str(self) -> &'static str {
        match self {
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::Linf),
            _ => Err(Error::config(format!("unknown norm '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuccessRule {
    /// The loss strictly exceeds `threshold`.
    LossAbove { threshold: f64 },
    /// The oracle's predicted class differs from the label. Costs one extra
    /// query per check.
    Misclassified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub norm: Norm,
    pub epsilon: f64,
    pub eta: f64,
    pub max_queries: u64,
    pub success_rule: SuccessRule,
    /// Per-coordinate `[lo, hi]` clip applied after the ball projection.
    #[serde(default, rename = "box")]
    pub bounds: Option<[f64; 2]>,
}

impl AttackConfig {
    pub const DEFAULT_MAX_QUERIES: u64 = 10_000;
    pub const L2_ETA: f64 = 2.0;
    pub const LINF_EPSILON: f64 = 0.05;
    pub const LINF_ETA: f64 = 0.005;

    /// `epsilon = sqrt(0.001 D)`, `eta = 2`.
    pub fn l2(dim: usize, success_rule: SuccessRule) -> Self {
        Self {
            norm: Norm::L2,
            epsilon: (1e-3 * dim as f64).sqrt(),
            eta: Self::L2_ETA,
            max_queries: Self::DEFAULT_MAX_QUERIES,
            success_rule,
            bounds: None,
        }
    }

    /// `epsilon = 0.05`, `eta = 0.005`.
    pub fn linf(success_rule: SuccessRule) -> Self {
        Self {
            norm: Norm::Linf,
            epsilon: Self::LINF_EPSILON,
            eta: Self::LINF_ETA,
            max_queries: Self::DEFAULT_MAX_QUERIES,
            success_rule,
            bounds: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::config("eta must be positive"));
        }
        if self.max_queries == 0 {
            return Err(Error::config("max_queries must be positive"));
        }
        if let Some([lo, hi]) = self.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config("box must satisfy lo <= hi"));
            }
        }
        if let SuccessRule::LossAbove { threshold } = self.success_rule {
            if !threshold.is_finite() {
                return Err(Error::config("success threshold must be finite"));
            }
        }
        Ok(())
    }
}

/// One ascent step from `x_t` along `g_hat`, projected onto the
/// `epsilon`-ball around `x0` and then onto the box.
///
/// Returns the new iterate and whether the step was skipped because the
/// estimate carried no direction.
pub fn pgd_step(x_t: &RealVec, g_hat: &RealVec, x0: &RealVec, cfg: &AttackConfig) -> (RealVec, bool) {
    let mut x = x_t.clone();
    let skipped = match cfg.norm {
        Norm::L2 => match g_hat.normalized() {
            Some(dir) => {
                x.axpy(cfg.eta, &dir);
                let mut delta = x.sub(x0);
                let n = delta.norm();
                if n > cfg.epsilon {
                    delta.scale(cfg.epsilon / n);
                    x = x0.offset(1.0, &delta);
                }
                false
            }
            None => true,
        },
        Norm::Linf => {
            let mut any = false;
            for ((xi, gi), oi) in x.iter_mut().zip(g_hat.iter()).zip(x0.iter()) {
                if *gi != 0.0 {
                    any = true;
                    *xi += cfg.eta * gi.signum();
                }
                *xi = xi.clamp(oi - cfg.epsilon, oi + cfg.epsilon);
            }
            !any
        }
    };
    if let Some([lo, hi]) = cfg.bounds {
        for xi in x.iter_mut() {
            *xi = xi.clamp(lo, hi);
        }
    }
    (x, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Re-synthesize the prior at every iterate from the current gradient.
    Rederive,
    /// Synthesize once at `x0` and keep it.
    Frozen,
    /// Re-synthesize at every iterate, keeping the error component aligned
    /// with one random direction drawn at the start of the attack, so the
    /// prior is wrong in a consistent way as a surrogate model would be.
    Persistent,
}

/// Where the transfer prior comes from during an attack.
#[derive(Debug, Clone, Copy)]
pub enum PriorSource<'a> {
    None,
    Fixed(&'a TransferPrior),
    /// Prior at fixed cosine to `model`'s exact gradient. The model is only
    /// read for its gradient; it is never charged as a query.
    Synthetic {
        model: &'a SyntheticModel,
        target_cosine: f64,
        mode: PriorMode,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    /// Cumulative queries after this iteration.
    pub queries: u64,
    /// Loss at the iterate this estimate was taken at.
    pub loss: f64,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub a_hat: Option<f64>,
    pub shortcut: bool,
    pub breakdown: Option<QueryBreakdown>,
    /// The estimate had no direction and the iterate did not move.
    pub zero_step: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Success { queries: u64 },
    BudgetExhausted { queries: u64 },
    Aborted { queries: u64, reason: String },
}

impl Outcome {
    pub fn queries(&self) -> u64 {
        match self {
            Outcome::Success { queries } | Outcome::BudgetExhausted { queries } | Outcome::Aborted { queries, .. } => {
                *queries
            }
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub method: Method,
    pub norm: Norm,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    pub outcome: Outcome,
    pub final_loss: Option<f64>,
}

enum Check {
    Done(Outcome),
    Loss(f64),
}

fn check_point(oracle: &BudgetedOracle<'_>, x: &RealVec, label: i64, rule: &SuccessRule) -> Check {
    let stop = |e: OracleError| {
        let queries = oracle.queries_used();
        if e.is_budget_exhausted() {
            Outcome::BudgetExhausted { queries }
        } else {
            Outcome::Aborted {
                queries,
                reason: e.to_string(),
            }
        }
    };
    let f = match oracle.query(x, label) {
        Ok(f) => f,
        Err(e) => return Check::Done(stop(e)),
    };
    let success = match rule {
        SuccessRule::LossAbove { threshold } => f > *threshold,
        SuccessRule::Misclassified => match oracle.predict(x) {
            Some(Ok(y)) => y != label,
            Some(Err(e)) => return Check::Done(stop(e)),
            None => {
                return Check::Done(Outcome::Aborted {
                    queries: oracle.queries_used(),
                    reason: "oracle cannot predict labels".into(),
                })
            }
        },
    };
    if success {
        Check::Done(Outcome::Success {
            queries: oracle.queries_used(),
        })
    } else {
        Check::Loss(f)
    }
}

fn synthetic_prior(
    model: &SyntheticModel,
    x: &RealVec,
    label: i64,
    target_cosine: f64,
    rng: &mut RngStream,
) -> Result<TransferPrior> {
    let g = model.gradient(x, label);
    match make_synthetic_prior(&g, target_cosine, rng) {
        Err(Error::DegenerateGradient) => {
            // No gradient to correlate with: any direction is as good.
            let r = crate::math::sample_unit_sphere(x.dim(), rng)?;
            TransferPrior::external(&r)
        }
        other => other,
    }
}

/// Runs one attack from `x0` until success, budget exhaustion, or an oracle
/// failure. Every oracle call counts against `cfg.max_queries`, including
/// the success check at each iterate.
#[allow(clippy::too_many_arguments)]
pub fn run_attack(
    oracle: &dyn LossOracle,
    x0: &RealVec,
    label: i64,
    prior_source: PriorSource<'_>,
    basis: Option<&SubspaceBasis>,
    cfg: &AttackConfig,
    est_cfg: &EstimatorConfig,
    seed: u64,
    rng: &mut RngStream,
) -> Result<AttackTrace> {
    cfg.validate()?;
    est_cfg.validate()?;
    if oracle.dim() != x0.dim() {
        return Err(Error::DimMismatch {
            expected: oracle.dim(),
            got: x0.dim(),
        });
    }
    if let PriorSource::Synthetic {
        model, target_cosine, ..
    } = prior_source
    {
        if model.dim() != x0.dim() {
            return Err(Error::DimMismatch {
                expected: x0.dim(),
                got: model.dim(),
            });
        }
        if !(0.0..=1.0).contains(&target_cosine) {
            return Err(Error::config("target cosine must lie in [0, 1]"));
        }
    }
    if est_cfg.method.uses_prior() && matches!(prior_source, PriorSource::None) {
        return Err(Error::config(format!("{} needs a prior source", est_cfg.method)));
    }

    let budgeted = BudgetedOracle::new(oracle, cfg.max_queries);
    let mut stats = PriorStats::default();
    let mut records = Vec::new();
    let mut x = x0.clone();
    let mut frozen: Option<TransferPrior> = None;
    let mut residual: Option<RealVec> = None;
    let mut last_loss = None;

    let mut iteration = 0u64;
    let outcome = 'attack: loop {
        let f = match check_point(&budgeted, &x, label, &cfg.success_rule) {
            Check::Done(o) => break 'attack o,
            Check::Loss(f) => f,
        };
        last_loss = Some(f);

        let prior = if est_cfg.method.uses_prior() {
            match prior_source {
                PriorSource::None => None,
                PriorSource::Fixed(p) => Some(p.clone()),
                PriorSource::Synthetic {
                    model,
                    target_cosine,
                    mode,
                } => match (mode, &frozen) {
                    (PriorMode::Frozen, Some(p)) => Some(p.clone()),
                    (PriorMode::Persistent, _) => {
                        if residual.is_none() {
                            residual = Some(crate::math::sample_unit_sphere(x.dim(), rng)?);
                        }
                        let g = model.gradient(&x, label);
                        let r = residual.as_ref().expect("drawn above");
                        Some(match prior_from_residual(&g, target_cosine, r) {
                            Err(Error::DegenerateGradient) => TransferPrior::external(r)?,
                            other => other?,
                        })
                    }
                    _ => {
                        let p = synthetic_prior(model, &x, label, target_cosine, rng)?;
                        if mode == PriorMode::Frozen {
                            frozen = Some(p.clone());
                        }
                        Some(p)
                    }
                },
            }
        } else {
            None
        };

        let est = estimate(
            &budgeted,
            &x,
            label,
            Some(f),
            prior.as_ref(),
            basis,
            est_cfg,
            &mut stats,
            rng,
        );
        let est = match est {
            Ok(e) => e,
            Err(e) => {
                let queries = budgeted.queries_used();
                records.push(IterationRecord {
                    iteration,
                    queries,
                    loss: f,
                    lambda: None,
                    mu: None,
                    alpha_hat: None,
                    a_hat: None,
                    shortcut: false,
                    breakdown: None,
                    zero_step: true,
                });
                match e.oracle_error() {
                    Some(oe) if oe.is_budget_exhausted() => break 'attack Outcome::BudgetExhausted { queries },
                    Some(oe) => {
                        break 'attack Outcome::Aborted {
                            queries,
                            reason: oe.to_string(),
                        }
                    }
                    None => return Err(e),
                }
            }
        };

        let (next, zero_step) = pgd_step(&x, &est.g_hat, x0, cfg);
        if zero_step {
            debug!(iteration, "zero gradient estimate; iterate unchanged");
        }
        x = next;
        records.push(IterationRecord {
            iteration,
            queries: budgeted.queries_used(),
            loss: f,
            lambda: est.lambda_used,
            mu: est.mu_used,
            alpha_hat: est.alpha_hat,
            a_hat: est.a_hat,
            shortcut: est.shortcut,
            breakdown: Some(est.breakdown),
            zero_step,
        });
        iteration += 1;
    };

    Ok(AttackTrace {
        method: est_cfg.method,
        norm: cfg.norm,
        seed,
        records,
        outcome,
        final_loss: last_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::LocalOracle;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn linf_cfg() -> AttackConfig {
        AttackConfig {
            bounds: Some([0.0, 1.0]),
            ..AttackConfig::linf(SuccessRule::LossAbove { threshold: 0.0 })
        }
    }

    #[test]
    fn linf_step_inside_ball_and_box() {
        let x = RealVec::new(vec![0.5]).unwrap();
        let g = RealVec::new(vec![2.0]).unwrap();
        let (y, skipped) = pgd_step(&x, &g, &x, &linf_cfg());
        assert!(!skipped);
        assert!((y[0] - 0.505).abs() < 1e-12);
    }

    #[test]
    fn linf_step_at_face_stays_put() {
        let cfg = linf_cfg();
        let x0 = RealVec::new(vec![0.5, 0.5]).unwrap();
        let xt = RealVec::new(vec![0.55, 0.5]).unwrap();
        let g = RealVec::new(vec![1.0, -1.0]).unwrap();
        let (y, _) = pgd_step(&xt, &g, &x0, &cfg);
        assert!((y[0] - 0.55).abs() < 1e-12);
        assert!((y[1] - 0.495).abs() < 1e-12);
    }

    #[test]
    fn l2_step_lands_on_sphere_when_leaving_ball() {
        let cfg = AttackConfig::l2(4, SuccessRule::LossAbove { threshold: 0.0 });
        let x0 = RealVec::zeros(4);
        let g = RealVec::new(vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let (y, _) = pgd_step(&x0, &g, &x0, &cfg);
        assert!((y.norm() - cfg.epsilon).abs() < 1e-9);
        assert!(y.cosine(&g) > 1.0 - 1e-12);
    }

    #[test]
    fn zero_estimate_is_a_noop() {
        let cfg = AttackConfig::l2(3, SuccessRule::LossAbove { threshold: 0.0 });
        let x0 = RealVec::new(vec![0.1, 0.2, 0.3]).unwrap();
        let (y, skipped) = pgd_step(&x0, &RealVec::zeros(3), &x0, &cfg);
        assert!(skipped);
        assert_eq!(y, x0);
    }

    proptest! {
        #[test]
        fn iterates_stay_feasible(
            x0 in proptest::collection::vec(0.0f64..1.0, 6),
            steps in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 6), 1..30),
            linf in any::<bool>(),
        ) {
            let x0 = RealVec::new(x0).unwrap();
            let mut cfg = if linf {
                AttackConfig::linf(SuccessRule::LossAbove { threshold: 0.0 })
            } else {
                AttackConfig::l2(6, SuccessRule::LossAbove { threshold: 0.0 })
            };
            cfg.eta = if linf { 0.02 } else { 0.05 };
            cfg.bounds = Some([0.0, 1.0]);
            let mut x = x0.clone();
            for s in steps {
                x = pgd_step(&x, &RealVec::new(s).unwrap(), &x0, &cfg).0;
                let d = x.sub(&x0);
                let n = match cfg.norm {
                    Norm::L2 => d.norm(),
                    Norm::Linf => d.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                };
                prop_assert!(n <= cfg.epsilon + 1e-9);
                prop_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    fn linear(d: usize) -> Arc<SyntheticModel> {
        Arc::new(SyntheticModel::linear(
            RealVec::new((1..=d).map(|i| i as f64 / d as f64).collect()).unwrap(),
        ))
    }

    #[test]
    fn success_at_start_costs_one_query() {
        let m = linear(8);
        let o = LocalOracle::new(m.clone());
        let x0 = RealVec::new(vec![1.0; 8]).unwrap();
        let cfg = AttackConfig::l2(8, SuccessRule::LossAbove { threshold: 0.0 });
        let est = EstimatorConfig::new(Method::Rgf, 8);
        let t = run_attack(
            &o,
            &x0,
            0,
            PriorSource::None,
            None,
            &cfg,
            &est,
            0,
            &mut RngStream::new(0, 2),
        )
        .unwrap();
        assert_eq!(t.outcome, Outcome::Success { queries: 1 });
        assert!(t.records.is_empty());
        assert_eq!(o.queries_used(), 1);
    }

    #[test]
    fn tiny_budget_exhausts_with_nonempty_trace() {
        let m = linear(8);
        let o = LocalOracle::new(m.clone());
        let x0 = RealVec::zeros(8);
        let mut cfg = AttackConfig::l2(8, SuccessRule::LossAbove { threshold: 100.0 });
        cfg.max_queries = 20;
        let est = EstimatorConfig::new(Method::Prgf, 8);
        let src = PriorSource::Synthetic {
            model: &m,
            target_cosine: 0.5,
            mode: PriorMode::Rederive,
        };
        let t = run_attack(&o, &x0, 0, src, None, &cfg, &est, 0, &mut RngStream::new(0, 2)).unwrap();
        assert_eq!(t.outcome, Outcome::BudgetExhausted { queries: 20 });
        assert!(!t.records.is_empty());
        assert_eq!(o.queries_used(), 20);
    }

    #[test]
    fn attack_is_reproducible_and_accounted() {
        let m = linear(16);
        let x0 = RealVec::zeros(16);
        let mut cfg = AttackConfig::l2(16, SuccessRule::LossAbove { threshold: 0.9 });
        cfg.eta = 0.02;
        cfg.max_queries = 3000;
        let mut est = EstimatorConfig::new(Method::Prgf, 16);
        est.q = 5;
        let run = || {
            let o = LocalOracle::new(m.clone());
            let src = PriorSource::Synthetic {
                model: &m,
                target_cosine: 0.3,
                mode: PriorMode::Rederive,
            };
            let t = run_attack(&o, &x0, 0, src, None, &cfg, &est, 3, &mut RngStream::new(3, 2)).unwrap();
            assert_eq!(t.outcome.queries(), o.queries_used());
            t
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.records.windows(2).all(|w| w[0].queries <= w[1].queries));
        assert!(a.records.iter().all(|r| r.queries <= cfg.max_queries));
    }

    #[test]
    fn misclassified_rule_needs_a_classifier() {
        let m = linear(4);
        let o = LocalOracle::new(m);
        let x0 = RealVec::zeros(4);
        let cfg = AttackConfig::l2(4, SuccessRule::Misclassified);
        let est = EstimatorConfig::new(Method::Rgf, 4);
        let t = run_attack(
            &o,
            &x0,
            0,
            PriorSource::None,
            None,
            &cfg,
            &est,
            0,
            &mut RngStream::new(0, 2),
        )
        .unwrap();
        assert!(matches!(t.outcome, Outcome::Aborted { .. }));
    }
}
