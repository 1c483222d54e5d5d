use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attack::{AttackTrace, Norm};
use crate::error::Result;

/// One CSV row: `method,norm,ASR,avg_queries,seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub norm: Norm,
    #[serde(rename = "ASR")]
    pub asr: f64,
    /// Mean queries over successful attacks; absent when none succeeded.
    pub avg_queries: Option<f64>,
    /// Median queries over all attacks with failures ranked last; absent
    /// when the median falls on a failure. Not part of the CSV.
    pub median_queries: Option<f64>,
    pub seeds: usize,
}

/// Success rate and mean queries over successes.
pub fn aggregate(method: &str, norm: Norm, traces: &[AttackTrace]) -> Summary {
    let wins: Vec<u64> = traces
        .iter()
        .filter(|t| t.outcome.is_success())
        .map(|t| t.outcome.queries())
        .collect();
    let asr = if traces.is_empty() {
        0.0
    } else {
        wins.len() as f64 / traces.len() as f64
    };
    let avg_queries = (!wins.is_empty()).then(|| wins.iter().map(|&q| q as f64).sum::<f64>() / wins.len() as f64);
    Summary {
        method: method.to_string(),
        norm,
        asr,
        avg_queries,
        median_queries: median_queries(traces),
        seeds: traces.len(),
    }
}

/// Median of the per-attack query counts, counting failures as infinite.
pub fn median_queries(traces: &[AttackTrace]) -> Option<f64> {
    if traces.is_empty() {
        return None;
    }
    let mut qs: Vec<f64> = traces
        .iter()
        .map(|t| {
            if t.outcome.is_success() {
                t.outcome.queries() as f64
            } else {
                f64::INFINITY
            }
        })
        .collect();
    qs.sort_by(f64::total_cmp);
    let n = qs.len();
    let m = if n % 2 == 1 {
        qs[n / 2]
    } else {
        0.5 * (qs[n / 2 - 1] + qs[n / 2])
    };
    m.is_finite().then_some(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub success_rate: f64,
    pub avg_queries: f64,
}

/// Mean queries per success at each attainable success rate, taking the
/// cheapest successes first.
pub fn success_curve(traces: &[AttackTrace]) -> Vec<CurvePoint> {
    let mut wins: Vec<u64> = traces
        .iter()
        .filter(|t| t.outcome.is_success())
        .map(|t| t.outcome.queries())
        .collect();
    wins.sort_unstable();
    let total = traces.len() as f64;
    let mut acc = 0.0;
    wins.iter()
        .enumerate()
        .map(|(k, &q)| {
            acc += q as f64;
            CurvePoint {
                success_rate: (k + 1) as f64 / total,
                avg_queries: acc / (k + 1) as f64,
            }
        })
        .collect()
}

pub fn write_traces_jsonl<W: Write>(mut w: W, traces: &[AttackTrace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[Summary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "norm", "ASR", "avg_queries", "seeds"])?;
    for r in rows {
        out.write_record([
            r.method.clone(),
            r.norm.to_string(),
            r.asr.to_string(),
            r.avg_queries.map(|q| q.to_string()).unwrap_or_default(),
            r.seeds.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Rows of `method,success_rate,avg_queries`.
pub fn write_curve_csv<W: Write>(w: W, curves: &[(String, Vec<CurvePoint>)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "success_rate", "avg_queries"])?;
    for (method, pts) in curves {
        for p in pts {
            out.write_record([method.clone(), p.success_rate.to_string(), p.avg_queries.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
