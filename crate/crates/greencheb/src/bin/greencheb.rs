//! Command-line driver for the library: generate datasets, train and
//! compress models, interpolate libraries across the operator parameter,
//! score models and assemble reports.
//!
//! Every command prints a JSON summary on stdout and exits 0 on success;
//! failures print a machine-readable `{"error", "message"}` object on
//! stderr and exit nonzero.  All randomized commands are bitwise
//! reproducible for a fixed `--seed`.  The `GREENCHEB_THREADS` environment
//! variable caps internal parallelism (default 1, which keeps runs
//! deterministic across machines).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use greencheb::pipeline::{
    build_report, exact_green, interpolate_library, load_dataset, load_model, recompress,
    relative_error, save_dataset, save_model, sha256_file, test_error, train_on, verify_orders,
    write_sigma_csv, ReportSpec, TrainOptions,
};
use greencheb::problems::{ProblemId, ProblemSpec};
use greencheb::{pipeline, Result};

#[derive(Parser)]
#[command(
    name = "greencheb",
    version,
    about = "Learn, compress and interpolate Green's functions of hidden 1-D operators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a forcing/response dataset (.gds) for a reference problem.
    Generate(GenerateArgs),
    /// Train the kernel and homogeneous networks on a dataset, compress
    /// them and write a model container (.gcm).
    Train(TrainArgs),
    /// Re-expand the network checkpoint stored in a model at a new
    /// tolerance and rank cap.
    Sve(SveArgs),
    /// Interpolate a library of models to a new parameter value θ*.
    Interpolate(InterpolateArgs),
    /// Score a model against a dataset and/or a closed-form kernel.
    Evaluate(EvaluateArgs),
    /// Recompute metrics from stored artifacts and emit a JSON report.
    Report(ReportArgs),
    /// Fit the retraction and projected-chord convergence slopes.
    VerifyOrders(VerifyOrdersArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// One of: poisson, advection_diffusion, airy, helmholtz,
    /// fractional_laplacian.
    #[arg(long)]
    problem: ProblemId,
    /// Operator parameter θ (ignored by poisson).
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Number of forcing/response pairs.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Response sensor count; defaults to the problem's standard grid.
    #[arg(long)]
    nx: Option<usize>,
    /// Forcing sensor count; defaults to the problem's standard grid.
    #[arg(long)]
    ns: Option<usize>,
    /// Normalized GP length scale of the forcing kernel.
    #[arg(long, default_value_t = 1e-2)]
    sigma: f64,
    /// Relative noise level ζ added to the responses.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// RNG seed; a fixed seed reproduces the file bitwise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path (.gds).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Input dataset (.gds).
    #[arg(long)]
    data: PathBuf,
    /// Full-batch Adam epochs.
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    /// Network initialisation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Chebyshev tolerance for compressing the trained networks.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Maximum expansion rank.
    #[arg(long, default_value_t = 50)]
    rank_cap: usize,
    /// Output model path (.gcm).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SveArgs {
    /// Input model (.gcm) carrying a network checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Chebyshev tolerance for the re-expansion.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Maximum expansion rank.
    #[arg(long, default_value_t = 50)]
    rank_cap: usize,
    /// Output model path (.gcm).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    /// Library model files, one per parameter value (at least two).
    #[arg(long, num_args = 2.., required = true)]
    models: Vec<PathBuf>,
    /// Target parameter θ*.
    #[arg(long)]
    theta: f64,
    /// Output model path (.gcm); a `.provenance.json` sidecar is written
    /// next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model to score (.gcm).
    #[arg(long)]
    model: PathBuf,
    /// Dataset to compute the test error against (.gds).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Compare against the closed-form kernel of this problem
    /// (poisson or advection_diffusion).
    #[arg(long)]
    exact: Option<ProblemId>,
    /// Write the singular-value spectrum as a CSV series.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Model to report on (.gcm).
    #[arg(long)]
    model: PathBuf,
    /// Test dataset (.gds), typically the noisy one.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Clean counterpart dataset for a second verdict.
    #[arg(long)]
    clean_data: Option<PathBuf>,
    /// Pass threshold for the relative kernel error (fraction).
    #[arg(long)]
    eps_threshold: Option<f64>,
    /// Pass threshold for the test error (percent).
    #[arg(long)]
    test_threshold: Option<f64>,
    /// Also write the report JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyOrdersArgs {
    /// Seed of the random tangent direction.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the error series as CSV (t, retraction, projection).
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// `{"path", "sha256"}` record for an artifact this command wrote or read.
fn artifact(path: &Path) -> Result<Value> {
    Ok(json!({
        "path": path.display().to_string(),
        "sha256": sha256_file(path)?,
    }))
}

fn run_generate(a: GenerateArgs) -> Result<Value> {
    let spec = ProblemSpec::new(a.problem, a.theta)?;
    let (dx, ds) = spec.default_grid_sizes();
    let data = pipeline::generate(
        &spec,
        a.sigma,
        a.n,
        a.nx.unwrap_or(dx),
        a.ns.unwrap_or(ds),
        a.noise,
        a.seed,
    )?;
    save_dataset(&a.out, &data)?;
    Ok(json!({
        "command": "generate",
        "problem": spec.id().as_str(),
        "theta": spec.theta(),
        "samples": data.nsamples(),
        "train_samples": data.train_idx().len(),
        "val_samples": data.val_idx().len(),
        "nx": data.xgrid().len(),
        "ns": data.sgrid().len(),
        "sigma": a.sigma,
        "noise": data.noise(),
        "seed": data.seed(),
        "out": artifact(&a.out)?,
    }))
}

fn run_train(a: TrainArgs) -> Result<Value> {
    let start = std::time::Instant::now();
    let data = load_dataset(&a.data)?;
    let opts = TrainOptions {
        epochs: a.epochs,
        seed: a.seed,
        tol: a.tol,
        rank_cap: a.rank_cap,
        ..TrainOptions::default()
    };
    let outcome = train_on(&data, &opts)?;
    save_model(&a.out, &outcome.container)?;
    Ok(json!({
        "command": "train",
        "problem": outcome.container.problem().map(|p| p.as_str()),
        "theta": outcome.container.model().theta(),
        "epochs": a.epochs,
        "seed": a.seed,
        "train_loss": outcome.train_loss,
        "val_loss": outcome.val_loss,
        "rank": outcome.container.model().rank(),
        "runtime_s": start.elapsed().as_secs_f64(),
        "out": artifact(&a.out)?,
    }))
}

fn run_sve(a: SveArgs) -> Result<Value> {
    let container = load_model(&a.model)?;
    let out = recompress(&container, a.tol, a.rank_cap)?;
    save_model(&a.out, &out)?;
    Ok(json!({
        "command": "sve",
        "theta": out.model().theta(),
        "tol": a.tol,
        "rank": out.model().rank(),
        "sigma": out.model().sigma(),
        "out": artifact(&a.out)?,
    }))
}

fn run_interpolate(a: InterpolateArgs) -> Result<Value> {
    let containers = a
        .models
        .iter()
        .map(|p| load_model(p))
        .collect::<Result<Vec<_>>>()?;
    let out = interpolate_library(&containers, a.theta)?;
    save_model(&a.out, &out)?;
    let provenance =
        serde_json::to_value(out.provenance().expect("interpolants carry provenance"))?;
    let sidecar = a.out.with_extension("provenance.json");
    std::fs::write(&sidecar, serde_json::to_string_pretty(&provenance)?)?;
    Ok(json!({
        "command": "interpolate",
        "theta": a.theta,
        "rank": out.model().rank(),
        "provenance": provenance,
        "provenance_file": sidecar.display().to_string(),
        "out": artifact(&a.out)?,
    }))
}

fn run_evaluate(a: EvaluateArgs) -> Result<Value> {
    let container = load_model(&a.model)?;
    let model = container.model();
    let mut summary = json!({
        "command": "evaluate",
        "problem": container.problem().map(|p| p.as_str()),
        "theta": model.theta(),
        "rank": model.rank(),
        "sigma": model.sigma(),
        "model": artifact(&a.model)?,
    });
    if let Some(p) = container.provenance() {
        summary["provenance"] = serde_json::to_value(p)?;
    }
    if let Some(id) = a.exact {
        let g = exact_green(id, model.theta())?;
        summary["relative_error"] = json!(relative_error(model, g.as_ref())?);
    }
    if let Some(path) = &a.data {
        let data = load_dataset(path)?;
        summary["test_error"] = json!(test_error(model, &data)?);
        summary["dataset"] = artifact(path)?;
    }
    if let Some(path) = &a.csv {
        write_sigma_csv(path, model)?;
        summary["csv"] = json!(path.display().to_string());
    }
    Ok(summary)
}

fn run_report(a: ReportArgs) -> Result<Value> {
    let report = build_report(&ReportSpec {
        model: &a.model,
        test_data: a.data.as_deref(),
        clean_data: a.clean_data.as_deref(),
        eps_threshold: a.eps_threshold,
        test_threshold: a.test_threshold,
    })?;
    let value = serde_json::to_value(&report)?;
    if let Some(path) = &a.out {
        std::fs::write(path, serde_json::to_string_pretty(&value)?)?;
    }
    Ok(value)
}

fn run_verify_orders(a: VerifyOrdersArgs) -> Result<Value> {
    let report = verify_orders(a.seed)?;
    if let Some(path) = &a.csv {
        let mut out = String::from("t,retraction_error,projection_error\n");
        for ((t, r), p) in report
            .ts
            .iter()
            .zip(&report.retraction_errors)
            .zip(&report.projection_errors)
        {
            out.push_str(&format!("{t},{r},{p}\n"));
        }
        std::fs::write(path, out)?;
    }
    let mut value = serde_json::to_value(&report)?;
    value["command"] = json!("verify-orders");
    value["seed"] = json!(a.seed);
    Ok(value)
}

fn run(command: Command) -> Result<Value> {
    match command {
        Command::Generate(a) => run_generate(a),
        Command::Train(a) => run_train(a),
        Command::Sve(a) => run_sve(a),
        Command::Interpolate(a) => run_interpolate(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Report(a) => run_report(a),
        Command::VerifyOrders(a) => run_verify_orders(a),
    }
}

/// Write a line, swallowing broken-pipe errors so `greencheb … | head`
/// exits cleanly.
fn emit(mut to: impl Write, value: &Value) {
    let text = serde_json::to_string_pretty(value).expect("summaries serialize");
    let _ = writeln!(to, "{text}");
}

fn main() -> ExitCode {
    greencheb::rt::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            emit(
                std::io::stderr(),
                &json!({"error": "usage", "message": e.to_string()}),
            );
            return ExitCode::from(2);
        }
        // --help and --version land here; clap prints them to stdout.
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(value) => {
            emit(std::io::stdout(), &value);
            ExitCode::SUCCESS
        }
        Err(e) => {
            emit(
                std::io::stderr(),
                &json!({"error": e.code(), "message": e.to_string()}),
            );
            ExitCode::FAILURE
        }
    }
}
