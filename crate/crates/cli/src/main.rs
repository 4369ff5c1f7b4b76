//! `tfh`: fit, predict, MSE, simulation and D-iteration commands.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tfh::io::{estimate_d_iterative, format_sig, read_dataset, read_panels, RunConfig};
use tfh::simulation::{self, ScenarioConfig};
use tfh::{eblup, mse_estimate, BootstrapConfig, Dataset, Error, FitResult, TransformKind, VarianceMethod};

#[derive(Parser)]
#[command(name = "tfh", version, about = "Dual-power transformed Fay-Herriot small-area estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate (beta, A, lambda) and write the fit as JSON.
    Fit(DataArgs),
    /// Write EBLUPs per area as CSV.
    Predict(DataArgs),
    /// Write EBLUPs with the bootstrap MSE estimate as CSV.
    Mse(DataArgs),
    /// Run a simulation scenario; writes <stem>.csv and <stem>.json into the output directory.
    Simulate(SimArgs),
    /// Iterate the sampling variances from historical panels; writes JSON.
    EstimateD(EstimateDArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    Pr,
    Fh,
    Ml,
    Reml,
}

impl From<Estimator> for VarianceMethod {
    fn from(e: Estimator) -> Self {
        match e {
            Estimator::Pr => VarianceMethod::PR,
            Estimator::Fh => VarianceMethod::FH,
            Estimator::Ml => VarianceMethod::ML,
            Estimator::Reml => VarianceMethod::REML,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    Dp,
    Log,
}

impl From<TransformArg> for TransformKind {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Dp => TransformKind::DualPower,
            TransformArg::Log => TransformKind::Log,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Area file with header area_id,y,D,x1,...,xp.
    #[arg(long)]
    input: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "reml")]
    estimator: Estimator,
    #[arg(long, value_enum, default_value = "dp")]
    transform: TransformArg,
    /// Bootstrap replicates for the MSE estimate.
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Skip lambda estimation and use this value.
    #[arg(long)]
    fixed_lambda: Option<f64>,
    /// Prepend a constant column to the covariates.
    #[arg(long)]
    add_intercept: bool,
}

impl DataArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            estimator: self.estimator.into(),
            transform: self.transform.into(),
            bootstrap_b: self.bootstrap,
            seed: self.seed,
            fixed_lambda: self.fixed_lambda,
            ..RunConfig::default()
        }
    }
}

#[derive(Args)]
struct SimArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario bootstrap size.
    #[arg(long)]
    bootstrap: Option<usize>,
}

#[derive(Args)]
struct EstimateDArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Historical panel file with header area_id,t,y.
    #[arg(long)]
    panels: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iterations: usize,
}

/// Failure carrying the process exit status.
struct Failure {
    code: u8,
    message: String,
    diagnostic: Option<serde_json::Value>,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: exit_code(&e), message: e.to_string(), diagnostic: None }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Json(_) | Error::Io(_) => 2,
        Error::NotConverged(_) | Error::Solver(_) => 3,
        Error::AtLambda { source, .. } => exit_code(source),
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a, false),
        Command::Mse(a) => cmd_predict(a, true),
        Command::Simulate(a) => cmd_simulate(a),
        Command::EstimateD(a) => cmd_estimate_d(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            if let Some(d) = f.diagnostic {
                eprintln!("{}", serde_json::to_string_pretty(&d).unwrap_or_default());
            }
            ExitCode::from(f.code)
        }
    }
}

fn load(a: &DataArgs) -> Result<Dataset, Failure> {
    let file = File::open(&a.input).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", a.input.display()),
        diagnostic: None,
    })?;
    Ok(read_dataset(io::BufReader::new(file), a.add_intercept)?)
}

fn fitted(a: &DataArgs, ds: &Dataset) -> Result<FitResult, Failure> {
    let fit = a.config().fit(ds)?;
    if fit.converged {
        Ok(fit)
    } else {
        Err(not_converged(&fit))
    }
}

fn not_converged(fit: &FitResult) -> Failure {
    Failure {
        code: 3,
        message: format!("{} fit did not converge", fit.method.name()),
        diagnostic: serde_json::to_value(fit).ok(),
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| Failure {
                code: 4,
                message: format!("{}: {e}", p.display()),
                diagnostic: None,
            })?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<(), Failure> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(Error::from)?;
    writeln!(out).and_then(|_| out.flush()).map_err(Error::from)?;
    Ok(())
}

fn cmd_fit(a: &DataArgs) -> Result<(), Failure> {
    let ds = load(a)?;
    let fit = a.config().fit(&ds)?;
    write_json(&fit, a.output.as_deref())?;
    if fit.converged {
        Ok(())
    } else {
        Err(not_converged(&fit))
    }
}

fn cmd_predict(a: &DataArgs, with_mse: bool) -> Result<(), Failure> {
    let ds = load(a)?;
    let fit = fitted(a, &ds)?;
    let preds = eblup(&ds, &fit)?;
    let mse = if with_mse {
        let cfg = BootstrapConfig { b: a.bootstrap, seed: a.seed, ..BootstrapConfig::default() };
        let report = mse_estimate(&ds, &fit, &cfg)?;
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        if report.unreliable {
            eprintln!("warning: {} of {} bootstrap replicates failed", report.failed_replicates, report.requested_b);
        }
        Some(report)
    } else {
        None
    };

    let mut out = sink(a.output.as_deref())?;
    let mut header = vec!["area_id", "D", "h_y", "x_beta", "eta_eb", "y_scale"];
    if with_mse {
        header.push("mse");
    }
    let mut lines = vec![header.join(",")];
    for (i, p) in preds.iter().enumerate() {
        let mut row = vec![
            csv_field(&p.area_id),
            format_sig(p.d),
            format_sig(p.h_direct),
            format_sig(p.synthetic),
            format_sig(p.eta_hat),
            format_sig(p.y_scale_value),
        ];
        if let Some(r) = &mse {
            row.push(format_sig(r.areas[i].total));
        }
        lines.push(row.join(","));
    }
    writeln!(out, "{}", lines.join("\n")).and_then(|_| out.flush()).map_err(Error::from)?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_simulate(a: &SimArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.scenario).map_err(Error::from)?;
    let mut cfg: ScenarioConfig = serde_json::from_str(&text).map_err(Error::from)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(b) = a.bootstrap {
        cfg.n_bootstrap = b;
    }
    let report = simulation::run(&cfg)?;
    fs::create_dir_all(&a.output).map_err(Error::from)?;
    let stem = cfg.file_stem();
    let csv_path = a.output.join(format!("{stem}.csv"));
    let mut csv_out = sink(Some(&csv_path))?;
    report.write_csv(&mut csv_out)?;
    csv_out.flush().map_err(Error::from)?;
    write_json(&report, Some(&a.output.join(format!("{stem}.json"))))?;
    eprintln!("{} finished in {:.1} s", cfg.label, report.wall_clock_secs);
    Ok(())
}

fn cmd_estimate_d(a: &EstimateDArgs) -> Result<(), Failure> {
    let ds = load(&a.data)?;
    let file = File::open(&a.panels).map_err(Error::from)?;
    let panels = read_panels(io::BufReader::new(file))?;
    let cfg = RunConfig { d_iteration_tol: a.tol, d_max_iterations: a.max_iterations, ..a.data.config() };
    let result = estimate_d_iterative(&panels, &ds, &cfg)?;
    write_json(&result, a.data.output.as_deref())?;
    if result.converged {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            message: format!("D iteration did not converge in {} steps", result.iterations),
            diagnostic: Some(json!({ "lambda_trace": result.lambda_trace })),
        })
    }
}
