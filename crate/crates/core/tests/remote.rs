use std::sync::Arc;

use prgf_core::attack::{Outcome, SuccessRule};
use prgf_core::estimator::Method;
use prgf_core::experiment::{run_experiment, MethodSpec, RunConfig, SeedSpec, SubspaceSettings};
use prgf_core::math::{BasisMode, RngStream};
use prgf_core::oracle::{serve, LocalOracle, LossOracle, ModelKind, RemoteOracle, SyntheticModel, SyntheticModelSpec};
use prgf_core::OracleError;

fn model(kind: ModelKind, dim: usize) -> Arc<SyntheticModel> {
    Arc::new(SyntheticModelSpec::new(kind, dim, 9).build().unwrap())
}

#[test]
fn round_trips_are_counted_identically_on_both_sides() {
    let m = model(ModelKind::Softplus, 24);
    let server = serve(m.clone(), "127.0.0.1:0", 5000).unwrap();
    let remote = RemoteOracle::connect(server.local_addr(), 24).unwrap();
    let local = LocalOracle::new(m);
    let mut rng = RngStream::new(3, 0);
    for _ in 0..1000 {
        let mut x = vec![0.0; 24];
        rng.fill_normal(&mut x);
        let a = remote.query(&x, 2).unwrap();
        let b = local.query(&x, 2).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(remote.queries_used(), 1000);
    assert_eq!(remote.server_queries_used(), 1000);
    assert_eq!(server.queries_served(), 1000);
}

#[test]
fn server_budget_is_exact_and_per_connection() {
    let server = serve(model(ModelKind::Linear, 4), "127.0.0.1:0", 10_000).unwrap();
    let x = [0.5, -1.0, 2.0, 0.0];
    let first = RemoteOracle::connect(server.local_addr(), 4).unwrap();
    for _ in 0..10_000 {
        first.query(&x, 0).unwrap();
    }
    let err = first.query(&x, 0).unwrap_err();
    assert!(err.is_budget_exhausted(), "{err}");
    assert_eq!(first.server_queries_used(), 10_000);

    let second = RemoteOracle::connect(server.local_addr(), 4).unwrap();
    assert!(second.query(&x, 0).is_ok());
    assert_eq!(second.server_queries_used(), 1);
}

#[test]
fn malformed_input_is_rejected_without_charge() {
    let server = serve(model(ModelKind::Linear, 4), "127.0.0.1:0", 10).unwrap();
    let remote = RemoteOracle::connect(server.local_addr(), 4).unwrap();
    assert!(matches!(
        remote.query(&[1.0, 2.0], 0),
        Err(OracleError::DimMismatch { .. })
    ));
    assert!(remote.query(&[1.0, 2.0, 3.0, 4.0], 0).is_ok());
    assert_eq!(remote.server_queries_used(), 1);
}

#[test]
fn concurrent_connections_keep_separate_counts() {
    let server = serve(model(ModelKind::Quadratic, 8), "127.0.0.1:0", 300).unwrap();
    let addr = server.local_addr();
    let handles: Vec<_> = (0..4)
        .map(|t| {
            std::thread::spawn(move || {
                let oracle = RemoteOracle::connect(addr, 8).unwrap();
                let x = vec![t as f64; 8];
                let mut ok = 0;
                while oracle.query(&x, 0).is_ok() {
                    ok += 1;
                }
                ok
            })
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), 300);
    }
    assert_eq!(server.queries_served(), 1200);
}

fn small_config() -> RunConfig {
    let mut spec = SyntheticModelSpec::new(ModelKind::Softplus, 64, 5);
    spec.smooth_block = Some(8);
    spec.roughness = Some(0.2);
    let mut cfg = RunConfig::new(spec);
    cfg.methods = vec![
        MethodSpec::new(Method::Rgf),
        MethodSpec::new(Method::Prgf),
        MethodSpec::new(Method::PrgfD),
        MethodSpec::new(Method::Avg),
    ];
    cfg.subspace = Some(SubspaceSettings {
        dim: 8,
        mode: BasisMode::Block,
    });
    cfg.estimator.q = Some(10);
    cfg.attack.max_queries = Some(1500);
    cfg.seeds = Some(SeedSpec::Range { start: 0, count: 3 });
    cfg
}

#[test]
fn remote_runs_reproduce_local_traces_bit_for_bit() {
    let cfg = small_config();
    let server = serve(Arc::new(cfg.model.build().unwrap()), "127.0.0.1:0", 1_000_000).unwrap();
    let local = run_experiment(&cfg).unwrap();
    let mut remote_cfg = cfg.clone();
    remote_cfg.oracle = Some(format!("remote://{}", server.local_addr()));
    let remote = run_experiment(&remote_cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&local.runs).unwrap(),
        serde_json::to_string(&remote.runs).unwrap()
    );
    assert_eq!(local.summaries, remote.summaries);
}

#[test]
fn remote_attack_stops_at_the_server_budget() {
    let mut cfg = small_config();
    cfg.methods = vec![MethodSpec::new(Method::Prgf)];
    cfg.attack.max_queries = Some(20_000);
    cfg.attack.success_rule = Some(SuccessRule::LossAbove { threshold: 1e12 });
    let server = serve(Arc::new(cfg.model.build().unwrap()), "127.0.0.1:0", 10_000).unwrap();
    cfg.oracle = Some(format!("remote://{}", server.local_addr()));
    let out = run_experiment(&cfg).unwrap();
    assert!(out.all_completed());
    for t in &out.runs[0].traces {
        assert_eq!(t.outcome, Outcome::BudgetExhausted { queries: 10_000 });
    }
}
