//! `datafuse` command-line interface.
//!
//! `datafuse estimate` fuses an internal CSV with one or more external
//! summary files; `datafuse simulate` runs the Monte Carlo scenarios.
//! Results go to stdout (or `--out`), warnings and errors to stderr.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use datafuse::debias::{estimate_dbs, DebiasConfig};
use datafuse::fusion::{self, wald_inference, FusionProblem, Side};
use datafuse::nalgebra::DVector;
use datafuse::sim::{self, Scenario, ScenarioConfig};
use datafuse::{Error, ErrorClass, FunctionalDescriptor, InternalDataset, Method, Roles, SummaryStatistic};

const SEED_ENV: &str = "DATAFUSE_SEED";

#[derive(Parser)]
#[command(name = "datafuse", version, about = "Fuse internal data with external summary statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a functional from internal data and external summaries.
    Estimate(EstimateArgs),
    /// Run a simulation scenario and write metrics tables.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Internal individual-level data (CSV with a header row).
    #[arg(long)]
    internal: PathBuf,
    /// External summary statistic (JSON); repeat for several sources.
    #[arg(long = "summary", required = true)]
    summaries: Vec<PathBuf>,
    /// Functional of interest as JSON, or @path to a JSON file.
    #[arg(long)]
    tau: String,
    /// Replacement binding for the summaries: a JSON array of functionals
    /// (or @path), consumed in summary order.
    #[arg(long)]
    beta: Option<String>,
    /// Comma-separated methods among int, crd, eff, dbs.
    #[arg(long, default_value = "eff")]
    method: String,
    /// Debiasing options (JSON or TOML file).
    #[arg(long)]
    debias_config: Option<PathBuf>,
    #[arg(long, default_value_t = fusion::DEFAULT_LEVEL)]
    level: f64,
    /// Null value(s), comma-separated; a single value applies to every component.
    #[arg(long, default_value = "0")]
    null: String,
    /// Alternative: upper, lower or two-sided.
    #[arg(long, default_value = "upper")]
    side: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the cross-validation folds (falls back to DATAFUSE_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Output format: json or table.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario configuration (JSON or TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// I, II_biased or II_unbiased.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// External sample size(s), comma-separated.
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated methods.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long, default_value = "sim-output")]
    out_dir: PathBuf,
    /// Worker threads for the replications.
    #[arg(long)]
    threads: Option<usize>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn env_seed() -> Result<Option<u64>, Error> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| invalid(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn inline_or_file(arg: &str) -> Result<String, Error> {
    match arg.strip_prefix('@') {
        Some(path) => Ok(fs::read_to_string(path)?),
        None => Ok(arg.to_string()),
    }
}

fn parse_list<T>(text: &str, what: &str) -> Result<Vec<T>, Error>
where
    T: std::str::FromStr,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| invalid(format!("invalid {what} `{s}`"))))
        .collect()
}

fn parse_methods(text: &str) -> Result<Vec<Method>, Error> {
    let methods = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse::<Method>)
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(invalid("no methods given"));
    }
    Ok(methods)
}

/// Splits a flat binding list into per-summary groups by dimension.
fn rebind(summaries: Vec<SummaryStatistic>, binding: Vec<FunctionalDescriptor>) -> Result<Vec<SummaryStatistic>, Error> {
    let mut rest = binding.into_iter().peekable();
    let mut out = Vec::with_capacity(summaries.len());
    for s in summaries {
        let mut group = Vec::new();
        let mut dim = 0;
        while dim < s.q() {
            let Some(d) = rest.next() else { break };
            dim += d.dim();
            group.push(d);
        }
        out.push(s.rebind(group)?);
    }
    if rest.peek().is_some() {
        return Err(Error::DimensionMismatch(
            "binding has more functionals than the summaries report".into(),
        ));
    }
    Ok(out)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn warn(msg: &str) {
    eprintln!("{}", json!({ "warning": msg }));
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), Error> {
    let tau = FunctionalDescriptor::from_json(&inline_or_file(&args.tau)?)?;
    let methods = parse_methods(&args.method)?;
    if let Some(m) = methods
        .iter()
        .find(|m| !matches!(m, Method::Int | Method::Crd | Method::Eff | Method::Dbs))
    {
        return Err(invalid(format!("{m} is available only in simulation")));
    }
    let side: Side = args.side.parse()?;
    if !matches!(args.format.as_str(), "json" | "table") {
        return Err(invalid(format!("unknown format `{}`", args.format)));
    }
    let mut summaries = args
        .summaries
        .iter()
        .map(|p| SummaryStatistic::from_json(&fs::read_to_string(p)?))
        .collect::<Result<Vec<_>, Error>>()?;
    if let Some(beta) = &args.beta {
        let binding: Vec<FunctionalDescriptor> =
            serde_json::from_str(&inline_or_file(beta)?).map_err(|e| Error::Parse(e.to_string()))?;
        summaries = rebind(summaries, binding)?;
    }
    let mut debias = match &args.debias_config {
        Some(path) => DebiasConfig::from_path(path)?,
        None => DebiasConfig::default(),
    };
    if let Some(seed) = args.seed.or(env_seed()?) {
        debias.seed = seed;
    }

    let data = InternalDataset::from_csv(fs::File::open(&args.internal)?, Roles::from_descriptor(&tau))?;
    let problem = FusionProblem::new(data, tau, summaries);
    let inputs = problem.inputs()?;
    let p = inputs.p();
    let nulls: Vec<f64> = parse_list(&args.null, "null value")?;
    let null = match nulls.len() {
        1 => DVector::from_element(p, nulls[0]),
        k if k == p => DVector::from_vec(nulls),
        k => return Err(Error::DimensionMismatch(format!("{k} null values for {p} components"))),
    };

    let mut reports = Vec::new();
    let mut table = format!(
        "{:<6} {:<28} {:>14} {:>14} {:>10}\n",
        "method", "parameter", "estimate", "se", "p-value"
    );
    for method in methods {
        let (result, selection) = match method {
            Method::Int => (fusion::estimate_int(&inputs), None),
            Method::Crd => (fusion::estimate_crude(&inputs)?, None),
            Method::Eff => (fusion::estimate_eff(&inputs)?, None),
            Method::Dbs => {
                let (r, s) = estimate_dbs(&inputs, &problem, &debias)?;
                (r, Some(s))
            }
            _ => unreachable!("filtered above"),
        };
        let inference = wald_inference(&result, &null, side, args.level)?;
        for w in &result.warnings {
            warn(&format!("{method}: {w}"));
        }
        for j in 0..p {
            table.push_str(&format!(
                "{:<6} {:<28} {:>14.4} {:>14.4} {:>10.4}\n",
                method.as_str(),
                result.labels[j],
                result.estimate[j],
                result.se[j],
                inference.p_one_sided[j]
            ));
        }
        let mut report = fusion::result_json(&result, &inference);
        if let Some(s) = selection {
            report["selection"] = s.to_json();
        }
        reports.push(report);
    }
    let text = match args.format.as_str() {
        "table" => table,
        _ => {
            let doc: Value = json!({ "results": reports });
            serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse(e.to_string()))? + "\n"
        }
    };
    emit(&args.out, &text)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let mut base = match &args.config {
        Some(path) => ScenarioConfig::from_path(path)?,
        None => {
            let scenario: Scenario = args
                .scenario
                .as_deref()
                .ok_or_else(|| invalid("either --config or --scenario is required"))?
                .parse()?;
            if args.m.is_none() {
                return Err(invalid("--m is required without --config"));
            }
            ScenarioConfig::new(scenario, 1000, 1, 1000, 0)
        }
    };
    if args.config.is_some() {
        if let Some(s) = &args.scenario {
            base.scenario = s.parse()?;
        }
    }
    if let Some(n) = args.n {
        base.n = n;
    }
    if let Some(reps) = args.reps {
        base.reps = reps;
    }
    match (args.seed, args.config.is_some()) {
        (Some(seed), _) => base.seed = seed,
        (None, false) => base.seed = env_seed()?.unwrap_or(0),
        (None, true) => {}
    }
    if let Some(methods) = &args.methods {
        base.methods = Some(parse_methods(methods)?);
    }
    let ms: Vec<usize> = match &args.m {
        Some(text) => parse_list(text, "sample size")?,
        None => vec![base.m],
    };
    if ms.is_empty() {
        return Err(invalid("no external sample sizes given"));
    }
    if args.threads == Some(0) {
        return Err(invalid("--threads must be positive"));
    }
    for &m in &ms {
        ScenarioConfig { m, ..base.clone() }.validate()?;
    }
    let outputs = sim::run_grid(&base, &ms, args.threads)?;
    for out in &outputs {
        for w in &out.warnings {
            warn(w);
        }
    }
    sim::export_tables(&outputs, &args.out_dir)?;
    let rows: Vec<_> = outputs.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    emit(&None, &sim::format_table(&rows))
}

fn fail(kind: &str, detail: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "detail": detail } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return fail("Usage", e.to_string().trim(), 2);
        }
    };
    let outcome = match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match e.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Numerical => 3,
            };
            fail(e.kind(), &e.to_string(), code)
        }
    }
}
