use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use prgf_core::attack::Norm;
use prgf_core::experiment::{
    run_experiment, write_outputs, MethodSpec, RunConfig, RunOutput, SeedSpec, CURVE_FILE, SUMMARY_FILE,
};
use prgf_core::oracle::{serve, ModelKind, SyntheticModelSpec};
use prgf_core::verify::{run_suite, Suite, SuiteReport};

/// Environment variable holding the default seed.
const SEED_ENV: &str = "PRGF_SEED";

#[derive(Parser)]
#[command(name = "prgf", version, about = "Prior-guided gradient-free black-box attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an attack sweep from a JSON config and write traces and summaries.
    Attack(AttackArgs),
    /// Compare methods on a benchmark (the standard one by default).
    Bench(BenchArgs),
    /// Run numerical verification suites.
    Verify(VerifyArgs),
    /// Serve a synthetic model's loss over the line-delimited JSON protocol.
    Serve(ServeArgs),
}

/// Flags that override values from a config file.
#[derive(Args)]
struct Overrides {
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `local` or `remote://HOST:PORT`.
    #[arg(long)]
    oracle: Option<String>,
    /// Run this single seed. Without it, and when the config lists no
    /// seeds, the seed comes from PRGF_SEED.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seeds as a comma-separated list or a half-open range `START..END`.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated methods, e.g. `rgf,prgf,prgf:lambda=0.5`.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodSpec>>,
    /// Directions per gradient estimate.
    #[arg(long)]
    q: Option<usize>,
    /// Query budget per attack.
    #[arg(long)]
    budget: Option<u64>,
    /// `l2` or `linf`.
    #[arg(long)]
    norm: Option<Norm>,
}

#[derive(Args)]
struct AttackArgs {
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON run config; the standard benchmark when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite name, a comma-separated list, or `all`.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Directory for one JSON report per suite.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON reports to stdout instead of the text summary.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Take the model from this run config instead of the model flags.
    #[arg(long, conflicts_with_all = ["model", "dim"])]
    model_config: Option<PathBuf>,
    #[arg(long, required_unless_present = "model_config")]
    model: Option<ModelKind>,
    #[arg(long, required_unless_present = "model_config")]
    dim: Option<usize>,
    /// Model seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    smooth_block: Option<usize>,
    #[arg(long)]
    roughness: Option<f64>,
    /// Queries allowed per connection.
    #[arg(long, default_value_t = 10_000)]
    budget: u64,
    /// Address to bind; port 0 picks a free port.
    #[arg(long, alias = "addr", default_value = "127.0.0.1:0")]
    listen: String,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Attack(a) => cmd_attack(a),
        Command::Bench(b) => cmd_bench(b),
        Command::Verify(v) => cmd_verify(v),
        Command::Serve(s) => cmd_serve(s),
    }
}

fn parse_seeds(text: &str) -> Result<SeedSpec> {
    if let Some((a, b)) = text.split_once("..") {
        let start: u64 = a.trim().parse().context("bad range start")?;
        let end: u64 = b.trim().parse().context("bad range end")?;
        if end <= start {
            bail!("empty seed range '{text}'");
        }
        return Ok(SeedSpec::Range {
            start,
            count: end - start,
        });
    }
    let seeds = text
        .split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed '{s}'")))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedSpec::List(seeds))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => Ok(Some(
            s.trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}='{s}' is not a seed"))?,
        )),
        Err(_) => Ok(None),
    }
}

/// Applies flag overrides and resolves the config, returning it with the
/// output directory. Nothing is written here.
fn prepare(mut cfg: RunConfig, o: Overrides, default_out: &str) -> Result<(RunConfig, PathBuf)> {
    if let Some(oracle) = o.oracle {
        cfg.oracle = Some(oracle);
    }
    if let Some(seeds) = o.seeds {
        cfg.seeds = Some(parse_seeds(&seeds)?);
    } else if let Some(seed) = o.seed {
        cfg.seeds = Some(SeedSpec::List(vec![seed]));
    } else if cfg.seeds.is_none() {
        if let Some(seed) = env_seed()? {
            cfg.seeds = Some(SeedSpec::List(vec![seed]));
        }
    }
    if let Some(methods) = o.methods {
        cfg.methods = methods;
    }
    if let Some(q) = o.q {
        cfg.estimator.q = Some(q);
    }
    if let Some(budget) = o.budget {
        cfg.attack.max_queries = Some(budget);
    }
    if let Some(norm) = o.norm {
        if cfg.attack.norm != Some(norm) {
            // Radius and step defaults differ between norms.
            cfg.attack.epsilon = None;
            cfg.attack.eta = None;
        }
        cfg.attack.norm = Some(norm);
    }
    let out = o
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(default_out));
    let cfg = cfg.resolve().context("invalid config")?;
    Ok((cfg, out))
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::from_path(path).with_context(|| format!("reading config {}", path.display()))
}

fn print_summary_table(out: &RunOutput) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |q| format!("{q:.1}"));
    let width = out.summaries.iter().map(|s| s.method.len()).max().unwrap_or(6).max(6);
    println!(
        "{:<width$}  {:>6}  {:>9}  {:>9}  {:>5}",
        "method", "ASR", "AVG.Q", "MEDIAN.Q", "seeds"
    );
    for s in &out.summaries {
        println!(
            "{:<width$}  {:>6.3}  {:>9}  {:>9}  {:>5}",
            s.method,
            s.asr,
            fmt(s.avg_queries),
            fmt(s.median_queries),
            s.seeds
        );
    }
}

fn completion_code(out: &RunOutput) -> ExitCode {
    if out.all_completed() {
        ExitCode::SUCCESS
    } else {
        eprintln!("some attacks aborted before success or budget exhaustion");
        ExitCode::from(2)
    }
}

fn cmd_attack(a: AttackArgs) -> Result<ExitCode> {
    let (cfg, dir) = prepare(load_config(&a.config)?, a.overrides, "out")?;
    let out = run_experiment(&cfg)?;
    write_outputs(&out, &dir).with_context(|| format!("writing outputs to {}", dir.display()))?;
    print_summary_table(&out);
    println!("wrote {}", dir.display());
    Ok(completion_code(&out))
}

fn cmd_bench(b: BenchArgs) -> Result<ExitCode> {
    let base = match &b.config {
        Some(path) => load_config(path)?,
        None => RunConfig::standard_benchmark(),
    };
    let (cfg, dir) = prepare(base, b.overrides, "bench")?;
    let started = std::time::Instant::now();
    let out = run_experiment(&cfg)?;
    write_outputs(&out, &dir).with_context(|| format!("writing outputs to {}", dir.display()))?;
    print_summary_table(&out);
    println!(
        "{} runs in {:.1}s; wrote {} and {} to {}",
        cfg.methods.len() * cfg.seed_list().len(),
        started.elapsed().as_secs_f64(),
        SUMMARY_FILE,
        CURVE_FILE,
        dir.display()
    );
    Ok(completion_code(&out))
}

fn parse_suites(text: &str) -> Result<Vec<Suite>> {
    if text == "all" {
        return Ok(Suite::ALL.to_vec());
    }
    text.split(',')
        .map(|s| s.trim().parse::<Suite>().map_err(anyhow::Error::from))
        .collect()
}

fn cmd_verify(v: VerifyArgs) -> Result<ExitCode> {
    let suites = parse_suites(&v.suite)?;
    if let Some(dir) = &v.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut reports: Vec<SuiteReport> = Vec::with_capacity(suites.len());
    for suite in suites {
        let report = run_suite(suite, v.seed).with_context(|| format!("suite {suite}"))?;
        if !v.json {
            println!("{report}");
        }
        if let Some(dir) = &v.out {
            let path = dir.join(format!("{suite}.json"));
            fs::write(&path, serde_json::to_string_pretty(&report)?)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        reports.push(report);
    }
    if v.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    }
    let passed = reports.iter().all(|r| r.passed);
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_serve(s: ServeArgs) -> Result<ExitCode> {
    let spec = match &s.model_config {
        Some(path) => load_config(path)?.model,
        None => {
            let kind = s.model.context("--model is required")?;
            let dim = s.dim.context("--dim is required")?;
            let mut spec = SyntheticModelSpec::new(kind, dim, s.seed);
            if let Some(scale) = s.scale {
                spec.scale = scale;
            }
            spec.classes = s.classes;
            spec.hidden = s.hidden;
            spec.smooth_block = s.smooth_block;
            spec.roughness = s.roughness;
            spec
        }
    };
    let model = Arc::new(spec.build().context("invalid model")?);
    let server = serve(model, s.listen.as_str(), s.budget).with_context(|| format!("binding {}", s.listen))?;
    println!("listening on {}", server.local_addr());
    std::io::stdout().flush()?;
    server.wait();
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_parse_as_range_or_list() {
        assert_eq!(parse_seeds("3..6").unwrap().seeds(), vec![3, 4, 5]);
        assert_eq!(parse_seeds("1, 4,9").unwrap().seeds(), vec![1, 4, 9]);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn suites_parse() {
        assert_eq!(parse_suites("all").unwrap().len(), Suite::ALL.len());
        assert_eq!(parse_suites("lambda,mu").unwrap(), vec![Suite::Lambda, Suite::Mu]);
        assert!(parse_suites("nope").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn explicit_flags_override_config() {
        let cfg = RunConfig::new(SyntheticModelSpec::new(ModelKind::Linear, 8, 0));
        let o = Overrides {
            out: None,
            oracle: None,
            seed: Some(7),
            seeds: None,
            methods: Some(vec!["prgf:lambda=0.5".parse().unwrap()]),
            q: Some(3),
            budget: Some(99),
            norm: Some(Norm::Linf),
        };
        let (cfg, dir) = prepare(cfg, o, "x").unwrap();
        assert_eq!(cfg.seed_list(), vec![7]);
        assert_eq!(cfg.estimator.q, Some(3));
        assert_eq!(cfg.attack.max_queries, Some(99));
        assert_eq!(cfg.attack.epsilon, Some(0.05));
        assert_eq!(cfg.methods[0].lambda, Some(0.5));
        assert_eq!(dir, PathBuf::from("x"));
    }
}
