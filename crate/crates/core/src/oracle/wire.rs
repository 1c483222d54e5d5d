//! Line-delimited JSON protocol spoken between [`RemoteOracle`] and the
//! oracle server. One UTF-8 JSON object per line in each direction:
//!
//! ```text
//! -> {"id":1,"op":"loss","x":[0.0,0.0],"label":0}
//! <- {"id":1,"loss":0.0,"queries_used":1}
//! <- {"id":2,"error":"budget_exhausted"}
//! ```
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! loss crosses the wire bit-for-bit.
//!
//! [`RemoteOracle`]: super::RemoteOracle

use serde::{Deserialize, Serialize};

use crate::error::OracleError;
use crate::oracle::{QueryLedger, SyntheticModel};

pub const OP_LOSS: &str = "loss";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRequest {
    pub id: u64,
    pub op: String,
    pub x: Vec<f64>,
    pub label: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireError {
    BudgetExhausted,
    Malformed,
    DimMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Loss { id: u64, loss: f64, queries_used: u64 },
    Error { id: u64, error: WireError },
}

impl Response {
    pub fn id(&self) -> u64 {
        match self {
            Response::Loss { id, .. } | Response::Error { id, .. } => *id,
        }
    }
}

/// Answers one request line against `model`, charging `ledger`.
///
/// Lines that are not valid requests get a `malformed` reply carrying the
/// request id when one can be recovered, else id 0.
pub fn handle_line(model: &SyntheticModel, ledger: &QueryLedger, line: &str) -> Response {
    let value: serde_json::Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(_) => {
            return Response::Error {
                id: 0,
                error: WireError::Malformed,
            }
        }
    };
    let id = value.get("id").and_then(|v| v.as_u64()).unwrap_or(0);
    let malformed = Response::Error {
        id,
        error: WireError::Malformed,
    };
    let req: LossRequest = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(_) => return malformed,
    };
    if req.op != OP_LOSS {
        return malformed;
    }
    match model.check_input(&req.x, req.label) {
        Ok(()) => {}
        Err(OracleError::DimMismatch { .. }) => {
            return Response::Error {
                id,
                error: WireError::DimMismatch,
            }
        }
        Err(_) => return malformed,
    }
    if ledger.charge().is_err() {
        return Response::Error {
            id,
            error: WireError::BudgetExhausted,
        };
    }
    let loss = model.loss(&req.x, req.label);
    if !loss.is_finite() {
        return malformed;
    }
    Response::Loss {
        id,
        loss,
        queries_used: ledger.used(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::RealVec;
    use proptest::prelude::*;

    fn linear() -> SyntheticModel {
        SyntheticModel::linear(RealVec::new(vec![1.5, -2.0]).unwrap())
    }

    #[test]
    fn loss_request_round_trip() {
        let ledger = QueryLedger::with_budget(10);
        let r = handle_line(&linear(), &ledger, r#"{"id":1,"op":"loss","x":[0,0],"label":0}"#);
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"id":1,"loss":0.0,"queries_used":1}"#
        );
    }

    #[test]
    fn budget_exhaustion_reply() {
        let ledger = QueryLedger::with_budget(1);
        let m = linear();
        handle_line(&m, &ledger, r#"{"id":1,"op":"loss","x":[1,1],"label":0}"#);
        let r = handle_line(&m, &ledger, r#"{"id":7,"op":"loss","x":[1,1],"label":0}"#);
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"id":7,"error":"budget_exhausted"}"#
        );
    }

    #[test]
    fn malformed_and_mismatched_requests() {
        let ledger = QueryLedger::unlimited();
        let m = linear();
        let cases = [
            ("not json", 0, WireError::Malformed),
            (r#"{"id":3,"op":"grad","x":[1,1],"label":0}"#, 3, WireError::Malformed),
            (r#"{"id":4,"op":"loss","x":"nope","label":0}"#, 4, WireError::Malformed),
            (
                r#"{"id":5,"op":"loss","x":[1,1,1],"label":0}"#,
                5,
                WireError::DimMismatch,
            ),
        ];
        for (line, id, error) in cases {
            assert_eq!(handle_line(&m, &ledger, line), Response::Error { id, error });
        }
        assert_eq!(ledger.used(), 0);
    }

    proptest! {
        #[test]
        fn floats_round_trip_bit_exactly(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let r = Response::Loss { id: 1, loss: v, queries_used: 1 };
            let back: Response = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            match back {
                Response::Loss { loss, .. } => prop_assert_eq!(loss.to_bits(), v.to_bits()),
                other => prop_assert!(false, "unexpected {:?}", other),
            }
        }

        #[test]
        fn request_vectors_round_trip(xs in proptest::collection::vec(-1e300f64..1e300, 1..16)) {
            let req = LossRequest { id: 9, op: OP_LOSS.into(), x: xs.clone(), label: -3 };
            let back: LossRequest = serde_json::from_str(&serde_json::to_string(&req).unwrap()).unwrap();
            prop_assert_eq!(back, req);
        }
    }
}
