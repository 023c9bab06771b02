//! The `qclose` command line: tests on CSV data, Monte Carlo studies and
//! analytic power tables.
//!
//! Exit codes: 0 on success, 2 for invalid input (bad flags, unreadable or
//! malformed files, validation failures), 3 for numerical failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::datamodel::{validate, Dataset, HypothesisSubset, QuantileSpec};
use crate::error::{Error, Result};
use crate::linalg::{principal_submatrix, subvector};
use crate::multiplicity::{ClosureReport, MAX_HYPOTHESES};
use crate::qrsolver;
use crate::rankscore::{
    delta_matrix, noncentrality_standard, power_generalized, power_standard, score_state, statistic_generalized,
    WeightingKind, WeightingMatrix,
};
use crate::simulation::{run_monte_carlo, Method, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qclose", version, about = "Simultaneous inference across quantile levels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test the target coefficient at every level and close the family.
    Test(TestArgs),
    /// Run a Monte Carlo study from a scenario.
    Simulate(SimulateArgs),
    /// Analytic power of every subset test under a local alternative.
    Power(PowerArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub response: String,
    /// Column whose coefficient is tested.
    #[arg(long)]
    pub target: String,
    /// Nuisance columns; an intercept is always added.
    #[arg(long, value_delimiter = ',')]
    pub nuisance: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub taus: Vec<f64>,
    /// Hypothesized coefficient per level (default all zero).
    #[arg(long, value_delimiter = ',')]
    pub null_values: Option<Vec<f64>>,
    /// identity, inverse, diag-delta, density:normal, density:t<df> or custom:<path>.
    #[arg(long, default_value = "identity")]
    pub weighting: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Also report every intersection hypothesis.
    #[arg(long)]
    pub verbose: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Bundled scenario name or path to a scenario file.
    #[arg(long)]
    pub scenario: String,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the replication count.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Overrides the scenario methods (comma list).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub verbose: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub taus: Vec<f64>,
    /// Local alternative on the score scale, one entry per level.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub g: Vec<f64>,
    /// Scale of the score covariance `A = vn * Delta`.
    #[arg(long, default_value_t = 1.0)]
    pub vn: f64,
    #[arg(long, default_value = "identity")]
    pub weighting: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Reports go to stdout or `--out`, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a).and_then(|r| emit(&a.output, &r)),
        Command::Simulate(a) => cmd_simulate(a).and_then(|r| emit(&a.output, &r)),
        Command::Power(a) => cmd_power(a).and_then(|r| emit(&a.output, &r)),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_INPUT
    } else {
        EXIT_NUMERIC
    }
}

/// A finished report in both output formats.
pub struct Rendered {
    pub json: String,
    pub csv: String,
}

fn emit(output: &OutputArgs, report: &Rendered) -> Result<()> {
    let text = match output.format {
        Format::Json => &report.json,
        Format::Csv => &report.csv,
    };
    match &output.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::InvalidArgument(format!("cannot write '{}': {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Error::InvalidArgument(format!("stdout: {e}")))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

/// Reads the named columns of a comma-separated file with a header row and
/// builds a dataset with an intercept prepended to the nuisance columns.
pub fn read_dataset(path: &Path, response: &str, target: &str, nuisance: &[String]) -> Result<Dataset> {
    let input = |msg: String| Error::InvalidArgument(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input(e.to_string()))?;
    let headers = reader.headers().map_err(|e| input(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| input(format!("column '{name}' not found in header")))
    };
    let mut wanted = vec![column(response)?, column(target)?];
    for name in nuisance {
        wanted.push(column(name)?);
    }
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    for record in reader.records() {
        let record = record.map_err(|e| input(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        for (slot, &c) in wanted.iter().enumerate() {
            let field = &record[c];
            let v: f64 = field.parse().map_err(|_| {
                input(format!("line {line}, column '{}': '{field}' is not a number", &headers[c]))
            })?;
            values[slot].push(v);
        }
    }
    let y = values.remove(0);
    let x = values.remove(0);
    Ok(Dataset::with_intercept(y, x, &values))
}

/// Refuses lists: one weighting per inference run.
fn single_weighting(text: &str) -> Result<WeightingKind> {
    if !text.starts_with("custom:") && text.contains(',') {
        return Err(Error::InvalidArgument(
            "exactly one weighting may be used per test; choose it before looking at the data".into(),
        ));
    }
    text.parse()
}

/// A user-supplied matrix that is not positive definite is bad input.
fn weighting_input(e: Error) -> Error {
    match e {
        Error::NotPositiveDefinite(m) => Error::InvalidArgument(format!("weighting matrix: {m}")),
        e => e,
    }
}

#[derive(Debug, Serialize)]
struct HypothesisRow {
    index: usize,
    tau: f64,
    null_value: f64,
    beta_hat: f64,
    local_p: f64,
    adjusted_p: f64,
    rejected: bool,
}

#[derive(Debug, Serialize)]
struct SubsetRow {
    subset: HypothesisSubset,
    label: String,
    statistic: f64,
    local_p: f64,
    adjusted_p: f64,
    rejected: bool,
}

#[derive(Debug, Serialize)]
struct TestReport {
    weighting: String,
    alpha: f64,
    n: usize,
    hypotheses: Vec<HypothesisRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subsets: Option<Vec<SubsetRow>>,
}

pub fn cmd_test(args: &TestArgs) -> Result<Rendered> {
    let kind = single_weighting(&args.weighting)?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {} is not in (0, 1)", args.alpha)));
    }
    if args.taus.len() > MAX_HYPOTHESES {
        return Err(Error::TooManyHypotheses { found: args.taus.len(), max: MAX_HYPOTHESES });
    }
    let dataset = read_dataset(&args.input, &args.response, &args.target, &args.nuisance)?;
    let spec = match &args.null_values {
        Some(v) => QuantileSpec::with_null_values(args.taus.clone(), v.clone()),
        None => QuantileSpec::new(args.taus.clone()),
    };
    let problem = validate(dataset, spec)?;
    let state = score_state(&problem)?;
    let weighting = WeightingMatrix::for_state(kind, &state).map_err(weighting_input)?;
    let k = state.k();

    let outcomes = (1u32..(1u32 << k))
        .map(|mask| statistic_generalized(&state, &HypothesisSubset::from_mask(mask).unwrap(), &weighting))
        .collect::<Result<Vec<_>>>()?;
    let closure = ClosureReport::from_local_p(k, outcomes.iter().map(|o| o.p_value).collect(), args.alpha)?;

    let full = problem.dataset().full_design();
    let y = &problem.dataset().y;
    let mut hypotheses = Vec::with_capacity(k);
    for j in 0..k {
        let tau = problem.spec().taus[j];
        let fit = qrsolver::fit(&full, y, tau)?;
        let single = HypothesisSubset::singleton(j);
        hypotheses.push(HypothesisRow {
            index: j + 1,
            tau,
            null_value: problem.spec().null_values[j],
            beta_hat: *fit.gamma_hat.last().unwrap(),
            local_p: closure.local_p(&single),
            adjusted_p: closure.adjusted_p[j],
            rejected: closure.rejected[j],
        });
    }
    let subsets = args.verbose.then(|| {
        closure
            .subset_records()
            .into_iter()
            .zip(&outcomes)
            .map(|(r, o)| SubsetRow {
                label: r.subset.to_string(),
                subset: r.subset,
                statistic: o.statistic,
                local_p: r.local_p,
                adjusted_p: r.adjusted_p,
                rejected: r.rejected,
            })
            .collect::<Vec<_>>()
    });
    let report = TestReport {
        weighting: weighting.kind().name(),
        alpha: args.alpha,
        n: problem.dataset().n(),
        hypotheses,
        subsets,
    };

    let mut rows: Vec<Vec<String>> = report
        .hypotheses
        .iter()
        .map(|h| {
            vec![
                "hypothesis".into(),
                HypothesisSubset::singleton(h.index - 1).to_string(),
                h.tau.to_string(),
                h.null_value.to_string(),
                h.beta_hat.to_string(),
                String::new(),
                h.local_p.to_string(),
                h.adjusted_p.to_string(),
                h.rejected.to_string(),
            ]
        })
        .collect();
    for s in report.subsets.iter().flatten() {
        rows.push(vec![
            "subset".into(),
            s.label.clone(),
            String::new(),
            String::new(),
            String::new(),
            s.statistic.to_string(),
            s.local_p.to_string(),
            s.adjusted_p.to_string(),
            s.rejected.to_string(),
        ]);
    }
    let csv = csv_text(
        &["kind", "label", "tau", "null_value", "beta_hat", "statistic", "local_p", "adjusted_p", "rejected"],
        rows,
    );
    Ok(Rendered { json: to_json(&report), csv })
}

/// A bundled scenario name or a path to a scenario file.
pub fn load_scenario(spec: &str) -> Result<Scenario> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read '{spec}': {e}")))?;
        return Scenario::parse(&text).map_err(|e| Error::InvalidArgument(format!("{spec}: {e}")));
    }
    Scenario::bundled(spec).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "'{spec}' is neither a scenario file nor a bundled scenario ({})",
            Scenario::bundled_names().join(", ")
        ))
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Rendered> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(r) = args.replications {
        scenario.replications = r;
    }
    if let Some(methods) = &args.methods {
        scenario.methods = methods.iter().map(|m| m.parse::<Method>()).collect::<Result<_>>()?;
    }
    scenario.check()?;
    eprintln!("seed: {}", scenario.seed);
    if args.verbose {
        eprint!("{}", scenario.to_text());
    }
    let report = run_monte_carlo(&scenario, &scenario.methods)?;
    if report.diagnostics.failed_replications > 0 {
        eprintln!(
            "warning: {} replications failed; first: {}",
            report.diagnostics.failed_replications,
            report.diagnostics.first_failure.as_deref().unwrap_or("")
        );
    }
    Ok(Rendered { json: to_json(&report), csv: report.to_csv() })
}

#[derive(Debug, Serialize)]
struct PowerRow {
    subset: HypothesisSubset,
    label: String,
    noncentrality: f64,
    standard_power: f64,
    weighted_power: f64,
}

#[derive(Debug, Serialize)]
struct PowerReport {
    taus: Vec<f64>,
    g: Vec<f64>,
    vn: f64,
    weighting: String,
    alpha: f64,
    subsets: Vec<PowerRow>,
}

pub fn cmd_power(args: &PowerArgs) -> Result<Rendered> {
    let kind = single_weighting(&args.weighting)?;
    let k = args.taus.len();
    if args.g.len() != k {
        return Err(Error::DimensionMismatch(format!("g has length {}, expected {k}", args.g.len())));
    }
    if k == 0 || k > MAX_HYPOTHESES {
        return Err(Error::TooManyHypotheses { found: k, max: MAX_HYPOTHESES });
    }
    if !(args.vn > 0.0 && args.vn.is_finite()) {
        return Err(Error::InvalidArgument(format!("vn = {} must be positive", args.vn)));
    }
    if args.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || args.taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("levels must be strictly increasing inside (0, 1)".into()));
    }
    let a = delta_matrix(&args.taus) * args.vn;
    let weighting = WeightingMatrix::new(kind, &args.taus, args.vn).map_err(weighting_input)?;
    let mut subsets = Vec::with_capacity((1 << k) - 1);
    for mask in 1u32..(1u32 << k) {
        let subset = HypothesisSubset::from_mask(mask).unwrap();
        let g: Vec<f64> = subvector(&args.g, subset.indices()).iter().copied().collect();
        let a_c = principal_submatrix(&a, subset.indices());
        let b_c = weighting.restrict(&subset)?;
        subsets.push(PowerRow {
            label: subset.to_string(),
            noncentrality: noncentrality_standard(&g, &a_c)?,
            standard_power: power_standard(&g, &a_c, args.alpha)?,
            weighted_power: power_generalized(&g, &a_c, &b_c, args.alpha)?,
            subset,
        });
    }
    let report = PowerReport {
        taus: args.taus.clone(),
        g: args.g.clone(),
        vn: args.vn,
        weighting: weighting.kind().name(),
        alpha: args.alpha,
        subsets,
    };
    let rows = report
        .subsets
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.noncentrality.to_string(),
                r.standard_power.to_string(),
                r.weighted_power.to_string(),
            ]
        })
        .collect();
    let csv = csv_text(&["label", "noncentrality", "standard_power", "weighted_power"], rows);
    Ok(Rendered { json: to_json(&report), csv })
}
