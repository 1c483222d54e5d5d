//! Seeded attack sweeps driven by a JSON run configuration.
//!
//! A [`RunConfig`] names a synthetic model, a list of method variants,
//! estimator and attack settings, a prior recipe, and a seed list. Missing
//! values are filled by [`RunConfig::resolve`]; the resolved config is what
//! gets embedded in every report, and running it again reproduces the same
//! traces bit for bit.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{
    aggregate, run_attack, success_curve, write_curve_csv, write_summary_csv, AttackConfig, AttackTrace, CurvePoint,
    Norm, Outcome, PriorMode, PriorSource, SuccessRule, Summary,
};
use crate::error::{Error, Result};
use crate::estimator::{
    default_sigma, EstimatorConfig, Method, DEFAULT_NORM_REFRESH, DEFAULT_NORM_SAMPLES, DEFAULT_Q, DEFAULT_THRESHOLD_C,
};
use crate::math::{BasisMode, RealVec, RngStream, SubspaceBasis};
use crate::oracle::{
    parse_endpoint, LocalOracle, LossOracle, ModelKind, RemoteOracle, SyntheticModel, SyntheticModelSpec,
};

/// One estimator variant of a sweep: a method with optional fixed
/// coefficients. Written in JSON either as a bare method name or as an
/// object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "MethodEntry", into = "MethodEntry")]
pub struct MethodSpec {
    pub method: Method,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            lambda: None,
            mu: None,
        }
    }

    pub fn with_lambda(method: Method, lambda: f64) -> Self {
        Self {
            lambda: Some(lambda),
            ..Self::new(method)
        }
    }

    /// Row label: the method name, plus any fixed coefficient.
    pub fn label(&self) -> String {
        match (self.lambda, self.mu) {
            (Some(l), _) => format!("{}(lambda={l})", self.method),
            (None, Some(m)) => format!("{}(mu={m})", self.method),
            (None, None) => self.method.to_string(),
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parses `prgf`, `prgf:lambda=0.5` or `avg:mu=0.3`.
impl std::str::FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) => (n, Some(r)),
            None => (s, None),
        };
        let mut spec = MethodSpec::new(name.trim().parse()?);
        if let Some(rest) = rest {
            let (key, value) = rest
                .split_once('=')
                .ok_or_else(|| Error::config(format!("expected key=value after ':' in '{s}'")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("bad number in '{s}'")))?;
            match key.trim() {
                "lambda" => spec.lambda = Some(value),
                "mu" => spec.mu = Some(value),
                other => return Err(Error::config(format!("unknown coefficient '{other}' in '{s}'"))),
            }
        }
        Ok(spec)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MethodEntry {
    Name(Method),
    Full {
        method: Method,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<f64>,
    },
}

impl From<MethodEntry> for MethodSpec {
    fn from(e: MethodEntry) -> Self {
        match e {
            MethodEntry::Name(method) => MethodSpec::new(method),
            MethodEntry::Full { method, lambda, mu } => MethodSpec { method, lambda, mu },
        }
    }
}

impl From<MethodSpec> for MethodEntry {
    fn from(s: MethodSpec) -> Self {
        if s.lambda.is_none() && s.mu.is_none() {
            MethodEntry::Name(s.method)
        } else {
            MethodEntry::Full {
                method: s.method,
                lambda: s.lambda,
                mu: s.mu,
            }
        }
    }
}

/// Estimator settings shared by every variant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_refresh: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_c: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<Norm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_queries: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_rule: Option<SuccessRule>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
}

fn default_cosine() -> f64 {
    0.4
}

fn default_prior_mode() -> PriorMode {
    PriorMode::Rederive
}

/// Synthetic transfer prior at a fixed cosine to the true gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSettings {
    #[serde(default = "default_cosine")]
    pub target_cosine: f64,
    #[serde(default = "default_prior_mode")]
    pub mode: PriorMode,
}

impl Default for PriorSettings {
    fn default() -> Self {
        Self {
            target_cosine: default_cosine(),
            mode: default_prior_mode(),
        }
    }
}

fn default_basis_mode() -> BasisMode {
    BasisMode::Block
}

/// Search subspace for the `_d` methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceSettings {
    pub dim: usize,
    #[serde(default = "default_basis_mode")]
    pub mode: BasisMode,
}

fn default_x0_scale() -> f64 {
    1.0
}

/// How starting points are drawn: uniformly in the box when one is set,
/// otherwise `N(0, scale^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSettings {
    #[serde(default = "default_x0_scale")]
    pub scale: f64,
}

impl Default for StartSettings {
    fn default() -> Self {
        Self {
            scale: default_x0_scale(),
        }
    }
}

/// Either an explicit list or a contiguous range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(s) => s.clone(),
            SeedSpec::Range { start, count } => (*start..start + count).collect(),
        }
    }
}

fn default_methods() -> Vec<MethodSpec> {
    vec![MethodSpec::new(Method::Rgf), MethodSpec::new(Method::Prgf)]
}

fn is_local(oracle: &Option<String>) -> bool {
    oracle.as_deref().is_none_or(|o| o == "local")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: SyntheticModelSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub attack: AttackSettings,
    #[serde(default)]
    pub prior: PriorSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subspace: Option<SubspaceSettings>,
    #[serde(default)]
    pub start: StartSettings,
    /// Defaults to the single seed 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<SeedSpec>,
    /// `local` (default) or `remote://HOST:PORT`. The model spec must match
    /// the served model; it is used locally for starting points and priors.
    #[serde(default, skip_serializing_if = "is_local")]
    pub oracle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(model: SyntheticModelSpec) -> Self {
        Self {
            model,
            methods: default_methods(),
            estimator: EstimatorSettings::default(),
            attack: AttackSettings::default(),
            prior: PriorSettings::default(),
            subspace: None,
            start: StartSettings::default(),
            seeds: None,
            oracle: None,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The benchmark used for method comparisons: a 512-dimensional
    /// softplus classifier whose first-layer weights are mostly constant on
    /// runs of 16 coordinates, a 32-dimensional block subspace, 50 seeds, a
    /// re-derived prior at cosine 0.4, and a 10,000-query l2 budget. The
    /// step is an eighth of the radius so an attack takes many iterations.
    /// With 100 directions per estimate the squared prior cosine stays below
    /// the level at which the full-space coefficient saturates at 1, so every
    /// method actually samples directions.
    pub fn standard_benchmark() -> Self {
        const DIM: usize = 512;
        let mut model = SyntheticModelSpec::new(ModelKind::Softplus, DIM, 0);
        model.smooth_block = Some(16);
        model.roughness = Some(0.1);
        let mut cfg = Self::new(model);
        cfg.methods = vec![
            MethodSpec::new(Method::Rgf),
            MethodSpec::new(Method::Prgf),
            MethodSpec::with_lambda(Method::Prgf, 0.5),
            MethodSpec::with_lambda(Method::Prgf, 0.05),
            MethodSpec::new(Method::RgfD),
            MethodSpec::new(Method::PrgfD),
        ];
        cfg.estimator.q = Some(100);
        cfg.attack.eta = Some((1e-3 * DIM as f64).sqrt() / 8.0);
        cfg.start.scale = 0.5;
        cfg.subspace = Some(SubspaceSettings {
            dim: 32,
            mode: BasisMode::Block,
        });
        cfg.seeds = Some(SeedSpec::Range { start: 0, count: 50 });
        cfg
    }

    /// Fills every defaulted field, then validates.
    pub fn resolve(&self) -> Result<Self> {
        let mut r = self.clone();
        r.model = r.model.resolved();
        let dim = r.model.dim;
        let e = &mut r.estimator;
        e.q.get_or_insert(DEFAULT_Q);
        e.sigma.get_or_insert(default_sigma(dim));
        e.norm_samples.get_or_insert(DEFAULT_NORM_SAMPLES);
        e.norm_refresh.get_or_insert(DEFAULT_NORM_REFRESH);
        e.threshold_c.get_or_insert(DEFAULT_THRESHOLD_C);
        let a = &mut r.attack;
        let norm = *a.norm.get_or_insert(Norm::L2);
        let defaults = match norm {
            Norm::L2 => AttackConfig::l2(dim, SuccessRule::Misclassified),
            Norm::Linf => AttackConfig::linf(SuccessRule::Misclassified),
        };
        a.epsilon.get_or_insert(defaults.epsilon);
        a.eta.get_or_insert(defaults.eta);
        a.max_queries.get_or_insert(defaults.max_queries);
        a.success_rule.get_or_insert(SuccessRule::LossAbove { threshold: 0.0 });
        r.seeds = Some(SeedSpec::List(r.seed_list()));
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.methods.is_empty() {
            return Err(Error::config("at least one method is required"));
        }
        if self.seed_list().is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if !(0.0..=1.0).contains(&self.prior.target_cosine) {
            return Err(Error::config("prior target_cosine must lie in [0, 1]"));
        }
        if !(self.start.scale.is_finite() && self.start.scale > 0.0) {
            return Err(Error::config("start scale must be positive"));
        }
        if let Some(o) = &self.oracle {
            if o != "local" && parse_endpoint(o).is_none() {
                return Err(Error::config(format!(
                    "oracle must be 'local' or 'remote://ADDR', got '{o}'"
                )));
            }
        }
        self.attack_config()?.validate()?;
        if self.methods.iter().any(|m| m.method.uses_subspace()) {
            self.basis()?;
        }
        for m in &self.methods {
            self.estimator_config(m)?.validate()?;
        }
        Ok(())
    }

    /// The seeds to run, in order.
    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.as_ref().map_or_else(|| vec![0], SeedSpec::seeds)
    }

    fn attack_config(&self) -> Result<AttackConfig> {
        let a = &self.attack;
        let missing = || Error::config("attack settings are not resolved");
        Ok(AttackConfig {
            norm: a.norm.ok_or_else(missing)?,
            epsilon: a.epsilon.ok_or_else(missing)?,
            eta: a.eta.ok_or_else(missing)?,
            max_queries: a.max_queries.ok_or_else(missing)?,
            success_rule: a.success_rule.ok_or_else(missing)?,
            bounds: a.bounds,
        })
    }

    fn estimator_config(&self, m: &MethodSpec) -> Result<EstimatorConfig> {
        let e = &self.estimator;
        let missing = || Error::config("estimator settings are not resolved");
        Ok(EstimatorConfig {
            method: m.method,
            q: e.q.ok_or_else(missing)?,
            sigma: e.sigma.ok_or_else(missing)?,
            norm_samples: e.norm_samples.ok_or_else(missing)?,
            norm_refresh: e.norm_refresh.ok_or_else(missing)?,
            lambda_override: m.lambda,
            mu_override: m.mu,
            threshold_c: e.threshold_c.ok_or_else(missing)?,
        })
    }

    fn basis(&self) -> Result<SubspaceBasis> {
        let s = self
            .subspace
            .as_ref()
            .ok_or_else(|| Error::config("subspace methods need a 'subspace' section"))?;
        SubspaceBasis::new(self.model.dim, s.dim, s.mode)
    }
}

/// Traces of one variant, in seed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub variant: String,
    pub traces: Vec<AttackTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    /// The fully resolved configuration that produced this output.
    pub config: RunConfig,
    pub runs: Vec<VariantRun>,
    pub summaries: Vec<Summary>,
}

impl RunOutput {
    /// Every attack ended in success or clean budget exhaustion.
    pub fn all_completed(&self) -> bool {
        self.runs
            .iter()
            .flat_map(|r| &r.traces)
            .all(|t| !matches!(t.outcome, Outcome::Aborted { .. }))
    }

    pub fn summary(&self, variant: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.method == variant)
    }

    pub fn curves(&self) -> Vec<(String, Vec<CurvePoint>)> {
        self.runs
            .iter()
            .map(|r| (r.variant.clone(), success_curve(&r.traces)))
            .collect()
    }
}

/// Starting point and label for `seed`, drawn from `RngStream(seed, 1)`.
/// Points that already satisfy the success rule are redrawn.
pub fn starting_point(model: &SyntheticModel, cfg: &RunConfig, seed: u64) -> Result<(RealVec, i64)> {
    const MAX_DRAWS: usize = 1000;
    let attack = cfg.attack_config()?;
    let dim = model.dim();
    let mut rng = RngStream::new(seed, 1);
    for _ in 0..MAX_DRAWS {
        let x: Vec<f64> = match attack.bounds {
            Some([lo, hi]) => (0..dim).map(|_| lo + (hi - lo) * rng.uniform()).collect(),
            None => (0..dim).map(|_| cfg.start.scale * rng.standard_normal()).collect(),
        };
        let x = RealVec::new(x)?;
        let label = model.predict(&x);
        let done = match attack.success_rule {
            SuccessRule::LossAbove { threshold } => model.loss(&x, label) > threshold,
            // The label is the model's own prediction.
            SuccessRule::Misclassified => false,
        };
        if !done {
            return Ok((x, label));
        }
    }
    Err(Error::config(format!(
        "no starting point below the success threshold in {MAX_DRAWS} draws for seed {seed}"
    )))
}

fn open_oracle(cfg: &RunConfig, model: &Arc<SyntheticModel>) -> Result<Box<dyn LossOracle>> {
    match cfg.oracle.as_deref().and_then(parse_endpoint) {
        Some(addr) => Ok(Box::new(RemoteOracle::connect(addr, model.dim())?)),
        None => Ok(Box::new(LocalOracle::new(model.clone()))),
    }
}

/// One attack of one variant. The starting point comes from
/// `RngStream(seed, 1)` and the attack's own randomness from
/// `RngStream(seed, 2)`, so variants are paired by seed.
pub fn run_single(
    cfg: &RunConfig,
    model: &Arc<SyntheticModel>,
    basis: Option<&SubspaceBasis>,
    variant: &MethodSpec,
    seed: u64,
) -> Result<AttackTrace> {
    let (x0, label) = starting_point(model, cfg, seed)?;
    let oracle = open_oracle(cfg, model)?;
    let prior = if variant.method.uses_prior() {
        PriorSource::Synthetic {
            model: model.as_ref(),
            target_cosine: cfg.prior.target_cosine,
            mode: cfg.prior.mode,
        }
    } else {
        PriorSource::None
    };
    let basis = if variant.method.uses_subspace() { basis } else { None };
    let mut rng = RngStream::new(seed, 2);
    run_attack(
        oracle.as_ref(),
        &x0,
        label,
        prior,
        basis,
        &cfg.attack_config()?,
        &cfg.estimator_config(variant)?,
        seed,
        &mut rng,
    )
}

/// Resolves `cfg` and runs every variant on every seed, in parallel.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput> {
    let cfg = cfg.resolve()?;
    let model = Arc::new(cfg.model.build()?);
    let basis = match cfg.subspace {
        Some(_) => Some(cfg.basis()?),
        None => None,
    };
    let seeds = cfg.seed_list();
    let jobs: Vec<(usize, u64)> = (0..cfg.methods.len())
        .flat_map(|m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let traces: Vec<AttackTrace> = jobs
        .par_iter()
        .map(|&(m, seed)| run_single(&cfg, &model, basis.as_ref(), &cfg.methods[m], seed))
        .collect::<Result<_>>()?;
    let norm = cfg.attack_config()?.norm;
    let mut runs = Vec::with_capacity(cfg.methods.len());
    let mut summaries = Vec::with_capacity(cfg.methods.len());
    for (m, chunk) in cfg.methods.iter().zip(traces.chunks(seeds.len())) {
        let variant = m.label();
        summaries.push(aggregate(&variant, norm, chunk));
        runs.push(VariantRun {
            variant,
            traces: chunk.to_vec(),
        });
    }
    Ok(RunOutput {
        config: cfg,
        runs,
        summaries,
    })
}

/// File names written by [`write_outputs`].
pub const TRACES_FILE: &str = "traces.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Serialize)]
struct TraceLine<'a> {
    variant: &'a str,
    #[serde(flatten)]
    trace: &'a AttackTrace,
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a RunConfig,
    summaries: &'a [Summary],
}

/// Writes traces (one JSON object per line, tagged with the variant), the
/// summary and curve CSVs, and a JSON report holding the resolved config
/// and the summaries.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(TRACES_FILE))?);
    for run in &out.runs {
        for trace in &run.traces {
            serde_json::to_writer(
                &mut w,
                &TraceLine {
                    variant: &run.variant,
                    trace,
                },
            )?;
            std::io::Write::write_all(&mut w, b"\n")?;
        }
    }
    std::io::Write::flush(&mut w)?;
    write_summary_csv(BufWriter::new(File::create(dir.join(SUMMARY_FILE))?), &out.summaries)?;
    write_curve_csv(BufWriter::new(File::create(dir.join(CURVE_FILE))?), &out.curves())?;
    let report = Report {
        config: &out.config,
        summaries: &out.summaries,
    };
    let mut w = BufWriter::new(File::create(dir.join(REPORT_FILE))?);
    serde_json::to_writer_pretty(&mut w, &report)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}
