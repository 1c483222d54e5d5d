//! Black-box loss oracles and query accounting.
//!
//! Estimators and attacks only see [`LossOracle`]: a metered map from
//! `(x, label)` to a scalar loss. Synthetic models additionally expose their
//! exact gradient through [`LocalOracle::true_gradient`]; that path is for
//! verification and for synthesizing transfer priors, never for estimation.

mod remote;
mod server;
mod synthetic;
pub mod wire;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use remote::{parse_endpoint, RemoteOracle};
pub use server::{serve, OracleServer};
pub use synthetic::{ModelKind, SoftplusClassifier, SyntheticModel, SyntheticModelSpec};

use crate::error::OracleError;
use crate::math::RealVec;

/// Query counter with an optional hard cap. Updates are atomic.
#[derive(Debug, Default)]
pub struct QueryLedger {
    used: AtomicU64,
    budget: Option<u64>,
}

impl QueryLedger {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn with_budget(budget: u64) -> Self {
        Self {
            used: AtomicU64::new(0),
            budget: Some(budget),
        }
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b.saturating_sub(self.used()))
    }

    /// Reserves one query, failing once the budget is spent.
    pub fn charge(&self) -> Result<u64, OracleError> {
        let mut cur = self.used.load(Ordering::SeqCst);
        loop {
            if let Some(b) = self.budget {
                if cur >= b {
                    return Err(OracleError::BudgetExhausted { used: cur });
                }
            }
            match self
                .used
                .compare_exchange(cur, cur + 1, Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => return Ok(cur + 1),
                Err(actual) => cur = actual,
            }
        }
    }

    /// Returns a reservation whose query never happened.
    pub(crate) fn refund(&self) {
        self.used.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Metered black-box loss `f(x, y)`.
pub trait LossOracle: Send + Sync {
    fn dim(&self) -> usize;

    /// One metered evaluation.
    fn query(&self, x: &[f64], label: i64) -> Result<f64, OracleError>;

    /// Queries answered so far.
    fn queries_used(&self) -> u64;

    /// Predicted class, for oracles that are classifiers. Counts as a query.
    fn predict(&self, _x: &[f64]) -> Option<Result<i64, OracleError>> {
        None
    }
}

/// In-process oracle backed by a synthetic model.
#[derive(Debug)]
pub struct LocalOracle {
    model: Arc<SyntheticModel>,
    ledger: QueryLedger,
}

impl LocalOracle {
    pub fn new(model: Arc<SyntheticModel>) -> Self {
        Self {
            model,
            ledger: QueryLedger::unlimited(),
        }
    }

    pub fn with_budget(model: Arc<SyntheticModel>, budget: u64) -> Self {
        Self {
            model,
            ledger: QueryLedger::with_budget(budget),
        }
    }

    pub fn model(&self) -> &Arc<SyntheticModel> {
        &self.model
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    /// Exact gradient. Not metered.
    pub fn true_gradient(&self, x: &[f64], label: i64) -> RealVec {
        self.model.gradient(x, label)
    }
}

impl LossOracle for LocalOracle {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn query(&self, x: &[f64], label: i64) -> Result<f64, OracleError> {
        self.model.check_input(x, label)?;
        self.ledger.charge()?;
        let loss = self.model.loss(x, label);
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(OracleError::NonFinite)
        }
    }

    fn queries_used(&self) -> u64 {
        self.ledger.used()
    }

    fn predict(&self, x: &[f64]) -> Option<Result<i64, OracleError>> {
        self.model.is_classifier().then(|| {
            self.model.check_input(x, 0)?;
            self.ledger.charge()?;
            Ok(self.model.predict(x))
        })
    }
}

/// Caps an inner oracle at a fixed number of additional queries.
pub struct BudgetedOracle<'a> {
    inner: &'a dyn LossOracle,
    ledger: QueryLedger,
}

impl<'a> BudgetedOracle<'a> {
    pub fn new(inner: &'a dyn LossOracle, budget: u64) -> Self {
        Self {
            inner,
            ledger: QueryLedger::with_budget(budget),
        }
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }
}

impl LossOracle for BudgetedOracle<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn query(&self, x: &[f64], label: i64) -> Result<f64, OracleError> {
        self.ledger.charge()?;
        self.inner.query(x, label).inspect_err(|e| {
            // The inner oracle refused before answering; the query was not spent.
            if e.is_budget_exhausted() || matches!(e, OracleError::DimMismatch { .. }) {
                self.ledger.refund();
            }
        })
    }

    fn queries_used(&self) -> u64 {
        self.ledger.used()
    }

    fn predict(&self, x: &[f64]) -> Option<Result<i64, OracleError>> {
        if let Err(e) = self.ledger.charge() {
            return Some(Err(e));
        }
        let out = self.inner.predict(x);
        match &out {
            None | Some(Err(_)) => self.ledger.refund(),
            Some(Ok(_)) => {}
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(g: Vec<f64>) -> Arc<SyntheticModel> {
        Arc::new(SyntheticModel::linear(RealVec::new(g).unwrap()))
    }

    #[test]
    fn budget_of_one_allows_exactly_one_query() {
        let o = LocalOracle::with_budget(linear(vec![1.0, 2.0]), 1);
        assert!(o.query(&[0.0, 0.0], 0).is_ok());
        let err = o.query(&[0.0, 0.0], 0).unwrap_err();
        assert_eq!(err, OracleError::BudgetExhausted { used: 1 });
        assert_eq!(o.queries_used(), 1);
    }

    #[test]
    fn linear_loss_at_origin_is_zero() {
        let o = LocalOracle::new(linear(vec![3.0, -1.0]));
        assert_eq!(o.query(&[0.0, 0.0], 5).unwrap(), 0.0);
    }

    #[test]
    fn ledger_counts_every_query() {
        let o = LocalOracle::new(linear(vec![1.0; 4]));
        for i in 0..37 {
            o.query(&[i as f64; 4], 0).unwrap();
        }
        assert_eq!(o.queries_used(), 37);
    }

    #[test]
    fn dimension_mismatch_is_not_charged() {
        let o = LocalOracle::new(linear(vec![1.0; 4]));
        assert!(matches!(
            o.query(&[0.0; 3], 0),
            Err(OracleError::DimMismatch { expected: 4, got: 3 })
        ));
        assert_eq!(o.queries_used(), 0);
    }

    #[test]
    fn budgeted_wrapper_refunds_inner_exhaustion() {
        let inner = LocalOracle::with_budget(linear(vec![1.0; 2]), 2);
        let outer = BudgetedOracle::new(&inner, 5);
        outer.query(&[0.0; 2], 0).unwrap();
        outer.query(&[0.0; 2], 0).unwrap();
        assert!(outer.query(&[0.0; 2], 0).unwrap_err().is_budget_exhausted());
        assert_eq!(outer.queries_used(), 2);
        assert_eq!(inner.queries_used(), 2);
    }

    #[test]
    fn ledger_is_consistent_across_threads() {
        let ledger = Arc::new(QueryLedger::with_budget(1000));
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let l = Arc::clone(&ledger);
                std::thread::spawn(move || (0..400).filter(|_| l.charge().is_ok()).count())
            })
            .collect();
        let granted: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(granted, 1000);
        assert_eq!(ledger.used(), 1000);
    }
}
