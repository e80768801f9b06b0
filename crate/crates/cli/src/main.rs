use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use plrm::inference::wald_statistic;
use plrm::report::{sha256_hex, FitSummary, InfluenceRow, Issue, Provenance, Report, TestSummary};
use plrm::robustness::{if_single_index, leverage_probe, ContaminationPoint};
use plrm::simulation::StudyFile;
use plrm::tuning::{lambda_grid, select_lambda, TuningConfig};
use plrm::{fit_mdpde, fit_path, load_dataset, Dataset, Error, FitOptions, FitResult, LinearHypothesis, SchemaSpec};

const THREADS_ENV: &str = "PLRM_THREADS";

#[derive(Parser)]
#[command(name = "plrm", version, about = "Robust polytomous logistic regression by density power divergence")]
struct Cli {
    /// Worker threads (defaults to $PLRM_THREADS, then the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model at one or more tuning parameters.
    Fit(FitArgs),
    /// Wald-type test of a linear hypothesis.
    Test(TestArgs),
    /// Data-driven choice of the tuning parameter.
    SelectLambda(SelectArgs),
    /// Influence function of the estimator at a contaminated row.
    Influence(InfluenceArgs),
    /// Run a Monte-Carlo study described by a design file.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Schema file (TOML, or JSON with a .json extension).
    #[arg(long)]
    schema: PathBuf,
    /// Merge rows with identical covariates into grouped counts.
    #[arg(long)]
    collapse: bool,
    /// Score grouped rows per trial instead of with (nπ)^λ scaling.
    #[arg(long)]
    per_trial: bool,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
}

#[derive(Args)]
struct OutputArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// A value, a comma list, or a grid `start:step:end`.
    #[arg(long, default_value = "0")]
    lambda: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "0")]
    lambda: String,
    /// CSV file holding Lᵀ, one restriction per row.
    #[arg(long, conflicts_with = "coef")]
    contrast: Option<PathBuf>,
    /// Right-hand side, comma separated; zero when omitted.
    #[arg(long, requires = "contrast", allow_hyphen_values = true)]
    h: Option<String>,
    /// `NAME=VALUE` for a single coefficient; may be repeated.
    #[arg(long)]
    coef: Vec<String>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "0:0.05:1")]
    grid: String,
    #[arg(long, default_value_t = 0.3)]
    pilot: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct InfluenceArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "0")]
    lambda: String,
    /// Contaminated row, counted from 1 in the loaded dataset.
    #[arg(long)]
    row: usize,
    /// Response level placed at the contaminated row.
    #[arg(long)]
    category: String,
    /// Norms of leverage probes along the row's covariate direction.
    #[arg(long, value_delimiter = ',')]
    x_scale: Vec<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    design: PathBuf,
    /// Overrides the seed in the design file.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: OutputArgs,
}

enum Outcome {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads(cli.threads).and_then(|()| run(cli.command));
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: at least one fit did not converge");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a count"))?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Fit(args) => cmd_fit(args),
        Command::Test(args) => cmd_test(args),
        Command::SelectLambda(args) => cmd_select(args),
        Command::Influence(args) => cmd_influence(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

struct Loaded {
    data: Dataset,
    provenance: Provenance,
    opts: FitOptions,
}

fn load(args: &DataArgs) -> anyhow::Result<Loaded> {
    let schema_bytes = fs::read(&args.schema).with_context(|| format!("reading {}", args.schema.display()))?;
    let data_bytes = fs::read(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let schema = SchemaSpec::from_path(&args.schema).with_context(|| format!("schema {}", args.schema.display()))?;
    let data = load_dataset(&args.data, &schema, args.collapse).with_context(|| format!("data {}", args.data.display()))?;
    let mut provenance = Provenance::new();
    provenance.input_hash = Some(sha256_hex(&data_bytes));
    provenance.schema_hash = Some(sha256_hex(&schema_bytes));
    let opts = FitOptions {
        grouped_scaling: !args.per_trial,
        max_iter: args.max_iter,
        ..FitOptions::default()
    };
    Ok(Loaded { data, provenance, opts })
}

/// `0.5`, `0,0.3,0.7` or `0:0.1:1`.
fn parse_lambdas(spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let values = match parts.as_slice() {
        [start, step, end] => lambda_grid(number(start)?, number(step)?, number(end)?)?,
        [list] => list.split(',').map(number).collect::<anyhow::Result<Vec<_>>>()?,
        _ => bail!("invalid lambda specification '{spec}'"),
    };
    if values.is_empty() {
        bail!("empty lambda specification");
    }
    Ok(values)
}

fn number(s: &str) -> anyhow::Result<f64> {
    s.trim().parse().map_err(|_| anyhow!("'{s}' is not a number"))
}

/// Fits every λ, recording failed points as issues. Fails only when no
/// point could be fitted.
fn fits_with_issues(data: &Dataset, lambdas: &[f64], opts: &FitOptions) -> anyhow::Result<(Vec<FitResult>, Vec<Issue>)> {
    let mut fits = Vec::new();
    let mut issues = Vec::new();
    let mut first_err = None;
    for (lambda, res) in lambdas.iter().zip(fit_path(data, lambdas, opts)?) {
        match res {
            Ok(fit) => fits.push(fit),
            Err(e) => {
                issues.push(Issue {
                    lambda: Some(*lambda),
                    message: e.to_string(),
                });
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) if fits.is_empty() => Err(e.into()),
        _ => Ok((fits, issues)),
    }
}

fn cmd_fit(args: FitArgs) -> anyhow::Result<Outcome> {
    let lambdas = parse_lambdas(&args.lambda)?;
    let Loaded { data, provenance, opts } = load(&args.data)?;
    let (fits, issues) = fits_with_issues(&data, &lambdas, &opts)?;
    let mut report = Report::new("fit", provenance);
    let names = data.coefficient_names();
    report.fits = fits.iter().map(|f| FitSummary::from_fit(f, &names)).collect();
    report.issues = issues;
    finish(&report, &args.output)
}

fn hypothesis(args: &TestArgs, data: &Dataset) -> anyhow::Result<(LinearHypothesis, String)> {
    let nu = data.dims().nu();
    if let Some(path) = &args.contrast {
        let rows = read_matrix(path)?;
        let h = match &args.h {
            Some(h) => h.split(',').map(number).collect::<anyhow::Result<Vec<_>>>()?,
            None => vec![0.0; rows.len()],
        };
        let label = format!("contrast {} (r = {})", path.display(), rows.len());
        return Ok((LinearHypothesis::from_rows(nu, &rows, h)?, label));
    }
    if args.coef.is_empty() {
        bail!("give either --contrast or at least one --coef NAME=VALUE");
    }
    let names = data.coefficient_names();
    let mut rows = Vec::new();
    let mut h = Vec::new();
    for item in &args.coef {
        let (name, value) = item
            .rsplit_once('=')
            .ok_or_else(|| anyhow!("--coef expects NAME=VALUE, got '{item}'"))?;
        let index = names
            .iter()
            .position(|n| n == name.trim())
            .ok_or_else(|| anyhow!("unknown coefficient '{name}'; available: {}", names.join(", ")))?;
        let mut row = vec![0.0; nu];
        row[index] = 1.0;
        rows.push(row);
        h.push(number(value)?);
    }
    Ok((LinearHypothesis::from_rows(nu, &rows, h)?, args.coef.join(";")))
}

/// Numeric CSV without header; a non-numeric first line is skipped.
fn read_matrix(path: &Path) -> anyhow::Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(_) => bail!("{}: line {} is not numeric", path.display(), i + 1),
        }
    }
    if rows.is_empty() {
        bail!("{}: no contrast rows", path.display());
    }
    Ok(rows)
}

fn cmd_test(args: TestArgs) -> anyhow::Result<Outcome> {
    let lambdas = parse_lambdas(&args.lambda)?;
    let Loaded { data, provenance, opts } = load(&args.data)?;
    let (hyp, label) = hypothesis(&args, &data)?;
    let (fits, issues) = fits_with_issues(&data, &lambdas, &opts)?;
    let mut report = Report::new("test", provenance);
    let names = data.coefficient_names();
    for fit in &fits {
        let wald = wald_statistic(fit, &hyp)?;
        report.tests.push(TestSummary::new(fit.lambda, &label, &wald));
        report.fits.push(FitSummary::from_fit(fit, &names));
    }
    report.issues = issues;
    finish(&report, &args.output)
}

fn cmd_select(args: SelectArgs) -> anyhow::Result<Outcome> {
    let grid = parse_lambdas(&args.grid)?;
    let Loaded { data, provenance, opts } = load(&args.data)?;
    let cfg = TuningConfig {
        pilot_lambda: args.pilot,
        grid,
        fit: opts.clone(),
    };
    let mut report = Report::new("select-lambda", provenance);
    match select_lambda(&data, &cfg) {
        Ok(trace) => {
            report.issues = trace
                .skipped
                .iter()
                .map(|s| Issue {
                    lambda: Some(s.lambda),
                    message: s.reason.clone(),
                })
                .collect();
            let fit = fit_mdpde(&data, trace.lambda_opt, &opts.with_init(trace.beta_opt.clone()))?;
            report.fits.push(FitSummary::from_fit(&fit, &data.coefficient_names()));
            report.tuning = Some(trace);
            finish(&report, &args.output)
        }
        Err(e @ Error::TuningFailed) => {
            report.issues.push(Issue {
                lambda: None,
                message: e.to_string(),
            });
            emit(&report, &args.output)?;
            Ok(Outcome::NotConverged)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_influence(args: InfluenceArgs) -> anyhow::Result<Outcome> {
    let lambdas = parse_lambdas(&args.lambda)?;
    let Loaded { data, provenance, opts } = load(&args.data)?;
    if args.row == 0 || args.row > data.len() {
        bail!("--row must lie in 1..={}", data.len());
    }
    let index = args.row - 1;
    let categories = data.category_names();
    let category = categories
        .iter()
        .position(|c| *c == args.category)
        .ok_or_else(|| anyhow!("unknown category '{}'; levels: {}", args.category, categories.join(", ")))?;
    let base = ContaminationPoint::at_category(index, category, categories.len())?;
    let mut probes = vec![(None, base.clone())];
    for &scale in &args.x_scale {
        let x = leverage_probe(&data.rows()[index].x, scale)?;
        probes.push((Some(scale), base.clone().with_covariates(x)));
    }

    let (fits, issues) = fits_with_issues(&data, &lambdas, &opts)?;
    let mut report = Report::new("influence", provenance);
    let names = data.coefficient_names();
    for fit in &fits {
        for (scale, cp) in &probes {
            let influence = if_single_index(&fit.beta_hat, &data, fit.lambda, cp)?;
            report.influence.push(InfluenceRow {
                lambda: fit.lambda,
                row: args.row,
                category: args.category.clone(),
                x_scale: *scale,
                norm: influence.norm(),
                influence: influence.iter().copied().collect(),
            });
        }
        report.fits.push(FitSummary::from_fit(fit, &names));
    }
    report.issues = issues;
    finish(&report, &args.output)
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<Outcome> {
    let text = fs::read_to_string(&args.design).with_context(|| format!("reading {}", args.design.display()))?;
    let mut file = StudyFile::from_toml(&text).with_context(|| format!("design {}", args.design.display()))?;
    if let Some(seed) = args.seed {
        file.design.seed = seed;
    }
    let study = file.run()?;
    match args.output.format {
        Format::Csv => {
            let mut buf = Vec::new();
            study.write_csv(&mut buf)?;
            write_output(&buf, args.output.out.as_deref())?;
        }
        Format::Json => {
            let mut provenance = Provenance::new();
            provenance.input_hash = Some(sha256_hex(text.as_bytes()));
            provenance.seed = Some(file.design.seed);
            let mut report = Report::new("simulate", provenance);
            report.study = Some(study);
            emit(&report, &args.output)?;
        }
    }
    Ok(Outcome::Done)
}

fn finish(report: &Report, output: &OutputArgs) -> anyhow::Result<Outcome> {
    emit(report, output)?;
    Ok(if report.converged() {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn emit(report: &Report, output: &OutputArgs) -> anyhow::Result<()> {
    let bytes = match output.format {
        Format::Json => report.to_json()?.into_bytes(),
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            buf
        }
    };
    write_output(&bytes, output.out.as_deref())
}

fn write_output(bytes: &[u8], path: Option<&Path>) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}
