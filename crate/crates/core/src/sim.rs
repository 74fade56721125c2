//! Monte Carlo harness: the two simulation scenarios, the replication engine
//! and the metrics tables.
//!
//! Scenario I fuses an ATE estimate with an external OLS fit of `Y` on
//! `(1, X, T)`. Scenario II fuses a joint regression on `(X1, X2)` with
//! external marginal regressions, optionally with measurement error in the
//! external `X2`.
//!
//! Every replication draws from its own ChaCha8 stream (`set_stream(rep)`), so
//! results do not depend on the thread schedule.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debias::{estimate_dbs, estimate_orc, DebiasConfig};
use crate::error::{Error, Result};
use crate::functionals::{evaluate_binding, expit, FunctionalDescriptor};
use crate::fusion::{estimate_crude, estimate_eff, estimate_int, estimate_knw, FusionProblem};
use crate::model::{validate_dataset, validate_summary, InternalDataset, Method, Roles, SummaryStatistic};
use crate::normal;

/// Nominal confidence level of the coverage metric.
pub const COVERAGE_LEVEL: f64 = 0.95;
/// Share of failed replications per method tolerated before aborting.
pub const MAX_FAILURE_SHARE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "II_biased")]
    IiBiased,
    #[serde(rename = "II_unbiased")]
    IiUnbiased,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::I => "I",
            Scenario::IiBiased => "II_biased",
            Scenario::IiUnbiased => "II_unbiased",
        }
    }

    pub fn default_methods(self) -> Vec<Method> {
        match self {
            Scenario::I => vec![Method::Int, Method::Crd, Method::Eff, Method::Knw],
            _ => vec![Method::Int, Method::Eff, Method::Dbs, Method::Orc],
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(Scenario::I),
            "II_biased" | "II-biased" | "2b" => Ok(Scenario::IiBiased),
            "II_unbiased" | "II-unbiased" | "2u" => Ok(Scenario::IiUnbiased),
            other => Err(Error::InvalidConfig(format!(
                "unknown scenario `{other}` (expected I, II_biased or II_unbiased)"
            ))),
        }
    }
}

fn default_n() -> usize {
    1000
}

fn default_reps() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    #[serde(default = "default_n")]
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to [`Scenario::default_methods`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
    #[serde(default)]
    pub debias: DebiasConfig,
    /// True `(tau1, tau2)` for Scenario II.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<[f64; 2]>,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, n: usize, m: usize, reps: usize, seed: u64) -> Self {
        Self {
            scenario,
            n,
            m,
            reps,
            seed,
            methods: None,
            debias: DebiasConfig::default(),
            tau: None,
        }
    }

    pub fn with_methods(mut self, methods: Vec<Method>) -> Self {
        self.methods = Some(methods);
        self
    }

    pub fn methods(&self) -> Vec<Method> {
        self.methods
            .clone()
            .unwrap_or_else(|| self.scenario.default_methods())
    }

    pub fn tau2(&self) -> [f64; 2] {
        self.tau.unwrap_or([1.0, 1.0])
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("n", self.n), ("m", self.m), ("reps", self.reps)] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        let methods = self.methods();
        if methods.is_empty() {
            return Err(Error::InvalidConfig("methods must be non-empty".into()));
        }
        if methods.contains(&Method::Ivw) {
            return Err(Error::InvalidConfig(
                "IVW needs the summary to estimate the target itself; no built-in scenario has that structure".into(),
            ));
        }
        if self.tau.is_some() && self.scenario == Scenario::I {
            return Err(Error::InvalidConfig("tau is configurable only in Scenario II".into()));
        }
        if let Some(t) = self.tau {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("tau must be finite".into()));
            }
        }
        if methods.contains(&Method::Dbs) {
            self.debias.validate()?;
        }
        Ok(())
    }

    /// Reads a JSON or TOML config (TOML when the extension is `.toml`).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let cfg: Self = if is_toml {
            toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Population values the estimators target.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub tau: DVector<f64>,
    /// Internal-law value of the bound functionals.
    pub beta: DVector<f64>,
}

/// One simulated internal sample with its external summary.
#[derive(Debug, Clone)]
pub struct ScenarioDraw {
    pub internal: InternalDataset,
    pub summary: SummaryStatistic,
    pub tau: FunctionalDescriptor,
    pub truth: Truth,
    /// Summary coordinates that are unbiased for the internal `beta`.
    pub unbiased: Vec<usize>,
}

pub fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn std_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn table(cols: Vec<(&str, Vec<f64>)>) -> Result<InternalDataset> {
    validate_dataset(
        cols.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        Roles::default(),
    )
}

fn summarise(external: &InternalDataset, binding: Vec<FunctionalDescriptor>, source: &str) -> Result<SummaryStatistic> {
    let fit = evaluate_binding(external, &binding)?;
    let sigma1 = fit.gram();
    validate_summary(fit.estimate, sigma1, external.n(), binding, source)
}

/// `(X, X^2, T, Y)` with `pr(T=1|X) = expit(1-X)` and
/// `Y = 1 + X + T X^2 + T e1 + (1-T) e0`, `e1 ~ N(0,4)`, `e0 ~ N(0,1)`.
fn scenario1_sample(size: usize, rng: &mut impl Rng) -> Result<InternalDataset> {
    let (mut x, mut xsq, mut t, mut y) = (
        Vec::with_capacity(size),
        Vec::with_capacity(size),
        Vec::with_capacity(size),
        Vec::with_capacity(size),
    );
    for _ in 0..size {
        let xi: f64 = std_normal(rng);
        let ti = if rng.random::<f64>() < expit(1.0 - xi) { 1.0 } else { 0.0 };
        let noise = if ti == 1.0 { 2.0 * std_normal(rng) } else { std_normal(rng) };
        x.push(xi);
        xsq.push(xi * xi);
        t.push(ti);
        y.push(1.0 + xi + ti * xi * xi + noise);
    }
    table(vec![("X", x), ("Xsq", xsq), ("T", t), ("Y", y)])
}

pub fn scenario1_tau() -> FunctionalDescriptor {
    FunctionalDescriptor::AipwAte {
        outcome: "Y".into(),
        treatment: "T".into(),
        covariates: vec!["X".into()],
        outcome_covariates: Some(vec!["X".into(), "Xsq".into()]),
    }
}

pub fn scenario1_binding() -> FunctionalDescriptor {
    FunctionalDescriptor::joint_ols("Y", ["X", "T"], true)
}

/// `E{X^k expit(1-X)}` for standard normal `X`, by composite Simpson's rule.
pub fn treated_moment(k: i32) -> f64 {
    let (lo, hi, steps) = (-12.0_f64, 12.0_f64, 24_000usize);
    let h = (hi - lo) / steps as f64;
    let f = |x: f64| x.powi(k) * expit(1.0 - x) * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = f(lo) + f(hi);
    for i in 1..steps {
        let coef = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += coef * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// Scenario I truth: ATE 1 and the population OLS of `Y` on `(1, X, T)`.
pub fn scenario1_truth() -> &'static Truth {
    static TRUTH: OnceLock<Truth> = OnceLock::new();
    TRUTH.get_or_init(|| {
        let e: Vec<f64> = (0..4).map(treated_moment).collect();
        let gram = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, e[0], 0.0, 1.0, e[1], e[0], e[1], e[0]]);
        let moment = DVector::from_vec(vec![1.0 + e[2], 1.0 + e[3], e[0] + e[1] + e[2]]);
        let beta = gram.lu().solve(&moment).expect("population gram is invertible");
        Truth {
            tau: DVector::from_element(1, 1.0),
            beta,
        }
    })
}

pub fn gen_scenario1(n: usize, m: usize, rng: &mut impl Rng) -> Result<ScenarioDraw> {
    let internal = scenario1_sample(n, rng)?;
    let external = scenario1_sample(m, rng)?;
    let summary = summarise(&external, vec![scenario1_binding()], "scenario-I")?;
    Ok(ScenarioDraw {
        internal,
        summary,
        tau: scenario1_tau(),
        truth: scenario1_truth().clone(),
        unbiased: (0..3).collect(),
    })
}

/// Correlation of `X1` and `X2` in Scenario II.
pub const SCENARIO2_CORR: f64 = 0.6;

/// `(Y, X1, X2)`, `Y = X1 tau1 + X2 tau2 + e`, `e ~ N(0,4)`. With
/// `measurement_error`, the recorded `X2` carries extra `N(0,1)` noise.
fn scenario2_sample(size: usize, tau: [f64; 2], measurement_error: bool, rng: &mut impl Rng) -> Result<InternalDataset> {
    let s = (1.0 - SCENARIO2_CORR * SCENARIO2_CORR).sqrt();
    let (mut y, mut x1, mut x2) = (
        Vec::with_capacity(size),
        Vec::with_capacity(size),
        Vec::with_capacity(size),
    );
    for _ in 0..size {
        let z1: f64 = std_normal(rng);
        let z2: f64 = std_normal(rng);
        let a = z1;
        let b = SCENARIO2_CORR * z1 + s * z2;
        let yi = tau[0] * a + tau[1] * b + 2.0 * std_normal(rng);
        let recorded = if measurement_error { b + std_normal(rng) } else { b };
        y.push(yi);
        x1.push(a);
        x2.push(recorded);
    }
    table(vec![("Y", y), ("X1", x1), ("X2", x2)])
}

pub fn scenario2_tau() -> FunctionalDescriptor {
    FunctionalDescriptor::joint_ols("Y", ["X1", "X2"], false)
}

pub fn scenario2_binding() -> Vec<FunctionalDescriptor> {
    vec![
        FunctionalDescriptor::marginal_ols("Y", "X1"),
        FunctionalDescriptor::marginal_ols("Y", "X2"),
    ]
}

pub fn scenario2_truth(tau: [f64; 2]) -> Truth {
    Truth {
        tau: DVector::from_vec(tau.to_vec()),
        beta: DVector::from_vec(vec![
            tau[0] + SCENARIO2_CORR * tau[1],
            tau[1] + SCENARIO2_CORR * tau[0],
        ]),
    }
}

pub fn gen_scenario2(n: usize, m: usize, biased: bool, tau: [f64; 2], rng: &mut impl Rng) -> Result<ScenarioDraw> {
    let internal = scenario2_sample(n, tau, false, rng)?;
    let external = scenario2_sample(m, tau, biased, rng)?;
    let summary = summarise(&external, scenario2_binding(), "scenario-II")?;
    Ok(ScenarioDraw {
        internal,
        summary,
        tau: scenario2_tau(),
        truth: scenario2_truth(tau),
        unbiased: if biased { vec![0] } else { vec![0, 1] },
    })
}

pub fn generate(config: &ScenarioConfig, rng: &mut impl Rng) -> Result<ScenarioDraw> {
    match config.scenario {
        Scenario::I => gen_scenario1(config.n, config.m, rng),
        Scenario::IiBiased => gen_scenario2(config.n, config.m, true, config.tau2(), rng),
        Scenario::IiUnbiased => gen_scenario2(config.n, config.m, false, config.tau2(), rng),
    }
}

/// One method's result in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRecord {
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub covered: Vec<bool>,
    /// Retained summary coordinates (DBS only).
    pub selected: Option<Vec<usize>>,
}

/// All methods' results in one replication, in configured method order.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub rep: usize,
    pub outcomes: Vec<(Method, std::result::Result<MethodRecord, String>)>,
}

fn record(result: &crate::model::FusionResult, truth: &DVector<f64>, crit: f64) -> MethodRecord {
    let p = result.estimate.len();
    MethodRecord {
        estimate: result.estimate.iter().copied().collect(),
        se: result.se.iter().copied().collect(),
        covered: (0..p)
            .map(|j| (result.estimate[j] - truth[j]).abs() <= crit * result.se[j])
            .collect(),
        selected: None,
    }
}

/// Runs every configured method on replication `rep`.
pub fn run_rep(config: &ScenarioConfig, rep: usize) -> RepRecord {
    let methods = config.methods();
    let fail_all = |e: Error| RepRecord {
        rep,
        outcomes: methods.iter().map(|&m| (m, Err(e.to_string()))).collect(),
    };
    let mut rng = rep_rng(config.seed, rep);
    let draw = match generate(config, &mut rng) {
        Ok(d) => d,
        Err(e) => return fail_all(e),
    };
    let cv_seed: u64 = rng.random();
    let crit = normal::quantile(0.5 + COVERAGE_LEVEL / 2.0);
    let truth = draw.truth.clone();
    let unbiased = draw.unbiased.clone();
    let problem = FusionProblem::new(draw.internal, draw.tau, vec![draw.summary]);
    let inputs = match problem.inputs() {
        Ok(i) => i,
        Err(e) => return fail_all(e),
    };
    let debias = DebiasConfig {
        seed: cv_seed,
        ..config.debias.clone()
    };
    let outcomes = methods
        .iter()
        .map(|&method| {
            let out = match method {
                Method::Int => Ok(record(&estimate_int(&inputs), &truth.tau, crit)),
                Method::Crd => estimate_crude(&inputs).map(|r| record(&r, &truth.tau, crit)),
                Method::Eff => estimate_eff(&inputs).map(|r| record(&r, &truth.tau, crit)),
                Method::Knw => estimate_knw(&inputs, &truth.beta).map(|r| record(&r, &truth.tau, crit)),
                Method::Orc => estimate_orc(&inputs, &unbiased).map(|r| record(&r, &truth.tau, crit)),
                Method::Dbs => estimate_dbs(&inputs, &problem, &debias).map(|(r, s)| MethodRecord {
                    selected: Some(s.selected),
                    ..record(&r, &truth.tau, crit)
                }),
                Method::Ivw => Err(Error::InvalidConfig("IVW is not available in simulation".into())),
            };
            (method, out.map_err(|e| e.to_string()))
        })
        .collect();
    RepRecord { rep, outcomes }
}

/// Aggregated performance of one method on one parameter, ×100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: Scenario,
    pub method: Method,
    pub n: usize,
    pub m: usize,
    /// 1-based parameter index.
    pub param: usize,
    pub reps_used: usize,
    pub bias: f64,
    pub rmse: f64,
    pub ase: f64,
    pub cp: f64,
    pub mc_se_bias: f64,
    pub mc_se_rmse: f64,
    pub mc_se_ase: f64,
    pub mc_se_cp: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub config: ScenarioConfig,
    pub rows: Vec<MetricsRow>,
    pub records: Vec<RepRecord>,
    /// Number of DBS replications retaining each coordinate set.
    pub selection_counts: BTreeMap<Vec<usize>, usize>,
    pub warnings: Vec<String>,
}

impl SimulationOutput {
    pub fn row(&self, method: Method, param: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.param == param)
    }

    /// Share of successful DBS replications retaining exactly `set`.
    pub fn selection_frequency(&self, set: &[usize]) -> f64 {
        let total: usize = self.selection_counts.values().sum();
        if total == 0 {
            return 0.0;
        }
        *self.selection_counts.get(set).unwrap_or(&0) as f64 / total as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mu = mean(v);
    (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn metrics(config: &ScenarioConfig, method: Method, param: usize, truth: f64, recs: &[&MethodRecord]) -> MetricsRow {
    let r = recs.len() as f64;
    let err: Vec<f64> = recs.iter().map(|x| x.estimate[param] - truth).collect();
    let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
    let se: Vec<f64> = recs.iter().map(|x| x.se[param]).collect();
    let cover = recs.iter().filter(|x| x.covered[param]).count() as f64 / r;
    let mse = mean(&sq);
    let rmse = mse.sqrt();
    let mc_rmse = if rmse > 0.0 { sd(&sq) / r.sqrt() / (2.0 * rmse) } else { 0.0 };
    MetricsRow {
        scenario: config.scenario,
        method,
        n: config.n,
        m: config.m,
        param: param + 1,
        reps_used: recs.len(),
        bias: 100.0 * mean(&err),
        rmse: 100.0 * rmse,
        ase: 100.0 * mean(&se),
        cp: 100.0 * cover,
        mc_se_bias: 100.0 * sd(&err) / r.sqrt(),
        mc_se_rmse: 100.0 * mc_rmse,
        mc_se_ase: 100.0 * sd(&se) / r.sqrt(),
        mc_se_cp: 100.0 * (cover * (1.0 - cover) / r).sqrt(),
    }
}

pub fn run_replications(config: &ScenarioConfig) -> Result<SimulationOutput> {
    run_replications_with_threads(config, None)
}

/// Runs the replications on a pool of `threads` workers (rayon's global pool
/// when `None`). Output is independent of the thread count.
pub fn run_replications_with_threads(config: &ScenarioConfig, threads: Option<usize>) -> Result<SimulationOutput> {
    config.validate()?;
    let work = || {
        (0..config.reps)
            .into_par_iter()
            .map(|rep| run_rep(config, rep))
            .collect::<Vec<_>>()
    };
    let records = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    aggregate(config, records)
}

fn aggregate(config: &ScenarioConfig, records: Vec<RepRecord>) -> Result<SimulationOutput> {
    let truth = match config.scenario {
        Scenario::I => scenario1_truth().clone(),
        _ => scenario2_truth(config.tau2()),
    };
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut selection_counts = BTreeMap::new();
    for (slot, method) in config.methods().into_iter().enumerate() {
        let mut ok = Vec::with_capacity(records.len());
        let mut failures = Vec::new();
        for rec in &records {
            match &rec.outcomes[slot].1 {
                Ok(m) => ok.push(m),
                Err(e) => failures.push((rec.rep, e.clone())),
            }
        }
        if !failures.is_empty() {
            if failures.len() as f64 >= MAX_FAILURE_SHARE * config.reps as f64 {
                return Err(Error::ReplicationFailures {
                    method: method.to_string(),
                    failed: failures.len(),
                    reps: config.reps,
                });
            }
            warnings.push(format!(
                "{method}: {} of {} replications failed and were excluded (first: rep {}: {})",
                failures.len(),
                config.reps,
                failures[0].0,
                failures[0].1
            ));
        }
        for rec in &ok {
            if let Some(sel) = &rec.selected {
                *selection_counts.entry(sel.clone()).or_insert(0) += 1;
            }
        }
        for param in 0..truth.tau.len() {
            rows.push(metrics(config, method, param, truth.tau[param], &ok));
        }
    }
    Ok(SimulationOutput {
        config: config.clone(),
        rows,
        records,
        selection_counts,
        warnings,
    })
}

/// Runs one configuration per external sample size in `ms`.
pub fn run_grid(base: &ScenarioConfig, ms: &[usize], threads: Option<usize>) -> Result<Vec<SimulationOutput>> {
    ms.iter()
        .map(|&m| {
            let cfg = ScenarioConfig { m, ..base.clone() };
            run_replications_with_threads(&cfg, threads)
        })
        .collect()
}

const METRIC_HEADER: [&str; 14] = [
    "scenario",
    "method",
    "n",
    "m",
    "param",
    "reps_used",
    "bias",
    "rmse",
    "ase",
    "cp",
    "mc_se_bias",
    "mc_se_rmse",
    "mc_se_ase",
    "mc_se_cp",
];

/// 17 significant digits: round-trips any f64.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no metrics rows to export".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(METRIC_HEADER).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.scenario.to_string(),
            r.method.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.param.to_string(),
            r.reps_used.to_string(),
        ];
        rec.extend(
            [r.bias, r.rmse, r.ase, r.cp, r.mc_se_bias, r.mc_se_rmse, r.mc_se_ase, r.mc_se_cp]
                .into_iter()
                .map(fmt_float),
        );
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_metrics_csv<R: Read>(reader: R) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_reader(reader);
    let parse_err = |e: &dyn std::fmt::Display| Error::Parse(e.to_string());
    let header = rd.headers().map_err(|e| parse_err(&e))?.clone();
    if header.iter().ne(METRIC_HEADER.iter().copied()) {
        return Err(Error::Parse(format!("unexpected metrics header: {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| parse_err(&e))?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| parse_err(&e));
        let u = |i: usize| rec[i].parse::<usize>().map_err(|e| parse_err(&e));
        rows.push(MetricsRow {
            scenario: rec[0].parse()?,
            method: rec[1].parse()?,
            n: u(2)?,
            m: u(3)?,
            param: u(4)?,
            reps_used: u(5)?,
            bias: f(6)?,
            rmse: f(7)?,
            ase: f(8)?,
            cp: f(9)?,
            mc_se_bias: f(10)?,
            mc_se_rmse: f(11)?,
            mc_se_ase: f(12)?,
            mc_se_cp: f(13)?,
        });
    }
    Ok(rows)
}

/// Long format, one line per (replication, method, parameter).
pub fn write_replicates_csv<W: Write>(outputs: &[SimulationOutput], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["scenario", "m", "rep", "method", "param", "estimate", "se", "covered", "selected"])
        .map_err(csv_err)?;
    for out in outputs {
        for rec in &out.records {
            for (method, outcome) in &rec.outcomes {
                let Ok(mr) = outcome else { continue };
                let selected = mr.selected.as_ref().map_or(String::new(), |s| {
                    s.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" ")
                });
                for j in 0..mr.estimate.len() {
                    w.write_record([
                        out.config.scenario.to_string(),
                        out.config.m.to_string(),
                        rec.rep.to_string(),
                        method.to_string(),
                        (j + 1).to_string(),
                        fmt_float(mr.estimate[j]),
                        fmt_float(mr.se[j]),
                        u8::from(mr.covered[j]).to_string(),
                        selected.clone(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `metrics.csv` and `replicates.csv` into `dir`.
pub fn export_tables(outputs: &[SimulationOutput], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let rows: Vec<MetricsRow> = outputs.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no metrics rows to export".into()));
    }
    std::fs::create_dir_all(dir)?;
    let metrics_path = dir.join("metrics.csv");
    let reps_path = dir.join("replicates.csv");
    write_metrics_csv(&rows, std::io::BufWriter::new(std::fs::File::create(&metrics_path)?))?;
    write_replicates_csv(outputs, std::io::BufWriter::new(std::fs::File::create(&reps_path)?))?;
    Ok((metrics_path, reps_path))
}

/// Human-readable table, two decimals.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let mut out = format!(
        "{:<12} {:<6} {:>6} {:>5} {:>8} {:>8} {:>8} {:>7}\n",
        "scenario", "method", "m", "param", "bias", "rmse", "ase", "cp"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:<6} {:>6} {:>5} {:>8.2} {:>8.2} {:>8.2} {:>7.2}\n",
            r.scenario.as_str(),
            r.method.as_str(),
            r.m,
            r.param,
            r.bias,
            r.rmse,
            r.ase,
            r.cp
        ));
    }
    out
}
