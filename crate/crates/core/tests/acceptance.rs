//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use prgf_core::attack::{Outcome, SuccessRule};
use prgf_core::estimator::Method;
use prgf_core::experiment::{run_experiment, MethodSpec, RunConfig, RunOutput, SeedSpec, SubspaceSettings};
use prgf_core::math::BasisMode;
use prgf_core::oracle::{serve, LossOracle, ModelKind, RemoteOracle, SyntheticModelSpec};
use prgf_core::verify::{run_suite, Check, Suite};

const SEED: u64 = 1;

type Criterion<'a> = (&'static str, &'static str, Box<dyn FnOnce() -> Verdict + 'a>);

struct Verdict {
    passed: bool,
    detail: String,
}

fn checks_verdict(checks: &[&Check]) -> Verdict {
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    Verdict {
        passed: !checks.is_empty() && failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} checks", checks.len())
        } else {
            format!(
                "{} of {} checks failed: {}",
                failed.len(),
                checks.len(),
                failed.join("; ")
            )
        },
    }
}

fn suite_checks(suite: Suite) -> (Vec<Check>, Duration) {
    let start = Instant::now();
    let report = run_suite(suite, SEED).expect("suite runs");
    (report.checks, start.elapsed())
}

fn monte_carlo_loss() -> Verdict {
    let (checks, elapsed) = suite_checks(Suite::Loss);
    let mc_points = checks.iter().filter(|c| c.detail.contains("trials=")).count();
    let all: Vec<&Check> = checks.iter().collect();
    let mut v = checks_verdict(&all);
    let in_time = elapsed < Duration::from_secs(300);
    v.passed &= mc_points >= 20 && in_time;
    v.detail = format!(
        "{}, {mc_points} Monte Carlo points at 3 se, {:.1}s",
        v.detail,
        elapsed.as_secs_f64()
    );
    v
}

fn full_space_lambda(lambda: &[Check], monotonic: &[Check]) -> Verdict {
    let mut picked: Vec<&Check> = lambda.iter().filter(|c| c.name.starts_with("full-space")).collect();
    picked.extend(
        monotonic
            .iter()
            .filter(|c| c.name.contains("non-decreasing") || c.name.contains("in q")),
    );
    checks_verdict(&picked)
}

fn subspace_lambda(lambda: &[Check]) -> Verdict {
    let picked: Vec<&Check> = lambda.iter().filter(|c| c.name.starts_with("subspace")).collect();
    checks_verdict(&picked)
}

fn whole_suite(suite: Suite) -> Verdict {
    let (checks, elapsed) = suite_checks(suite);
    let all: Vec<&Check> = checks.iter().collect();
    let mut v = checks_verdict(&all);
    v.detail = format!("{}, {:.1}s", v.detail, elapsed.as_secs_f64());
    v
}

fn median(out: &RunOutput, variant: &str) -> f64 {
    out.summary(variant)
        .and_then(|s| s.median_queries)
        .unwrap_or(f64::INFINITY)
}

fn benchmark_trend() -> Verdict {
    let start = Instant::now();
    let out = run_experiment(&RunConfig::standard_benchmark()).expect("benchmark runs");
    let elapsed = start.elapsed();
    let m = |v: &str| median(&out, v);
    let worse_fixed = m("prgf(lambda=0.5)").max(m("prgf(lambda=0.05)"));
    let orderings = [
        ("prgf < worse fixed lambda", m("prgf") < worse_fixed),
        ("prgf < rgf", m("prgf") < m("rgf")),
        ("rgf_d < rgf", m("rgf_d") < m("rgf")),
        ("prgf_d < prgf", m("prgf_d") < m("prgf")),
    ];
    let medians: Vec<String> = out
        .summaries
        .iter()
        .map(|s| {
            format!(
                "{}={}",
                s.method,
                s.median_queries.map_or("inf".into(), |q| q.to_string())
            )
        })
        .collect();
    let verdicts: Vec<String> = orderings
        .iter()
        .map(|(name, ok)| format!("{name}: {}", if *ok { "ok" } else { "violated" }))
        .collect();
    let in_time = elapsed < Duration::from_secs(600);
    Verdict {
        passed: orderings.iter().all(|(_, ok)| *ok) && in_time,
        detail: format!(
            "median queries {}; {}; {:.1}s",
            medians.join(" "),
            verdicts.join(", "),
            elapsed.as_secs_f64()
        ),
    }
}

fn remote_equivalence() -> Verdict {
    let mut spec = SyntheticModelSpec::new(ModelKind::Softplus, 128, 2);
    spec.smooth_block = Some(8);
    spec.roughness = Some(0.2);
    let mut cfg = RunConfig::new(spec);
    cfg.methods = [
        Method::Rgf,
        Method::Prgf,
        Method::RgfD,
        Method::PrgfD,
        Method::Avg,
        Method::AvgD,
    ]
    .into_iter()
    .map(MethodSpec::new)
    .collect();
    cfg.subspace = Some(SubspaceSettings {
        dim: 16,
        mode: BasisMode::Block,
    });
    cfg.estimator.q = Some(20);
    cfg.seeds = Some(SeedSpec::Range { start: 0, count: 5 });
    let model = Arc::new(cfg.model.build().expect("model builds"));

    let server = serve(model.clone(), "127.0.0.1:0", 1_000_000).expect("server starts");
    let local = run_experiment(&cfg).expect("local run");
    let mut remote_cfg = cfg.clone();
    remote_cfg.oracle = Some(format!("remote://{}", server.local_addr()));
    let remote = run_experiment(&remote_cfg).expect("remote run");
    let identical = serde_json::to_string(&local.runs).unwrap() == serde_json::to_string(&remote.runs).unwrap();
    let traces: usize = local.runs.iter().map(|r| r.traces.len()).sum();

    // An attack that cannot succeed must spend exactly the server budget.
    const BUDGET: u64 = 10_000;
    let limited = serve(model, "127.0.0.1:0", BUDGET).expect("server starts");
    let mut capped = cfg.clone();
    capped.methods = vec![MethodSpec::new(Method::Prgf)];
    capped.seeds = Some(SeedSpec::List(vec![0]));
    capped.attack.max_queries = Some(2 * BUDGET);
    capped.attack.success_rule = Some(SuccessRule::LossAbove { threshold: 1e12 });
    capped.oracle = Some(format!("remote://{}", limited.local_addr()));
    let run = run_experiment(&capped).expect("capped run");
    let outcome = &run.runs[0].traces[0].outcome;
    let attack_exact = *outcome == Outcome::BudgetExhausted { queries: BUDGET };

    let probe = RemoteOracle::connect(limited.local_addr(), 128).expect("connects");
    let x = vec![0.0; 128];
    let answered = (0..BUDGET + 5).take_while(|_| probe.query(&x, 0).is_ok()).count() as u64;
    let probe_exact = answered == BUDGET && probe.server_queries_used() == BUDGET;

    Verdict {
        passed: identical && attack_exact && probe_exact,
        detail: format!(
            "{traces} traces bit-identical: {identical}; attack outcome {outcome:?}; \
             {answered} of {} probe queries answered",
            BUDGET + 5
        ),
    }
}

fn main() -> ExitCode {
    let (lambda, _) = suite_checks(Suite::Lambda);
    let (monotonic, _) = suite_checks(Suite::Monotonic);
    let criteria: Vec<Criterion> = vec![
        (
            "AC1",
            "Monte Carlo loss matches the closed form",
            Box::new(monte_carlo_loss),
        ),
        (
            "AC2",
            "full-space optimal coefficient and monotonicity",
            Box::new(|| full_space_lambda(&lambda, &monotonic)),
        ),
        (
            "AC3",
            "subspace optimal coefficient and boundary identities",
            Box::new(|| subspace_lambda(&lambda)),
        ),
        ("AC4", "norm estimation", Box::new(|| whole_suite(Suite::Norm))),
        ("AC5", "averaging weight", Box::new(|| whole_suite(Suite::Mu))),
        (
            "AC6",
            "sampling covariance",
            Box::new(|| whole_suite(Suite::Covariance)),
        ),
        ("AC7", "end-to-end benchmark ordering", Box::new(benchmark_trend)),
        (
            "AC8",
            "remote oracle equivalence and exact budget",
            Box::new(remote_equivalence),
        ),
    ];
    let mut all = true;
    for (id, title, run) in criteria {
        let v = run();
        all &= v.passed;
        println!("{id} {} {title}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
