use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use vla_cli::commands;
use vla_cli::config::{Overrides, RunConfig};
use vla_cli::runner::{run_pipeline, RunControl, RunStatus};
use vla_core::eval::ReportFormat;
use vla_core::oracle::OracleConfig;
use vla_core::prompt::ResponseFormat;
use vla_core::synth::{OverlapRegime, SynthSpec};

#[derive(Parser)]
#[command(
    name = "vla",
    version,
    about = "Detect, review and correct object detections with cooperating agents"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the three-stage pipeline over a dataset.
    Run(RunArgs),
    /// Score a COCO results file against ground truth.
    Evaluate(EvaluateArgs),
    /// Recompute ED, CD and CR from an audit log.
    CorrectionReport(CorrectionArgs),
    /// Weighted entropy, global entropy and information gain per image.
    AnalyzeIg(IgArgs),
    /// Serve oracle agents over HTTP.
    ServeMock(ServeArgs),
    /// Check a transcript against the agent schemas.
    ValidateProtocol(ValidateArgs),
    /// Generate a synthetic dataset with perfect detections.
    Synth(SynthArgs),
    /// Inject label errors into a results file.
    InjectNoise(NoiseArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentsChoice {
    /// Use the endpoints from the config file.
    Config,
    /// Replace every agent with its oracle mock.
    Mock,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatChoice {
    StructuredJson,
    FreeText,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = AgentsChoice::Config)]
    agents: AgentsChoice,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    response_format: Option<FormatChoice>,
    /// Abort on the first failed image.
    #[arg(long)]
    strict: bool,
    /// Continue an interrupted run in the same output directory.
    #[arg(long)]
    resume: bool,
    /// Stop after journaling this many images (for testing resume).
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportChoice {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    /// Audit log for the correction columns.
    #[arg(long)]
    audit: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    match_iou: f64,
    #[arg(long, value_enum, default_value_t = ReportChoice::Text)]
    format: ReportChoice,
}

#[derive(Args)]
struct CorrectionArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    audit: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    match_iou: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct IgArgs {
    /// COCO results; scores are used as label probabilities.
    #[arg(long)]
    detections: PathBuf,
    /// Array of {i, j, label, relation, p}, or an object of such arrays keyed by image id.
    #[arg(long)]
    relations: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// Detections served by /detect.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    match_iou: f64,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Require the key held in this environment variable.
    #[arg(long)]
    api_key_env: Option<String>,
}

#[derive(Args)]
struct ValidateArgs {
    transcript: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeChoice {
    Disjoint,
    Clustered,
    Mixed,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    images: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    categories: usize,
    #[arg(long, default_value_t = 1)]
    min_objects: usize,
    #[arg(long, default_value_t = 6)]
    max_objects: usize,
    #[arg(long, value_enum, default_value_t = RegimeChoice::Mixed)]
    regime: RegimeChoice,
    #[arg(long, default_value_t = 640.0)]
    width: f64,
    #[arg(long, default_value_t = 480.0)]
    height: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    rate: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    match_iou: f64,
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines list of injected errors.
    #[arg(long)]
    manifest: PathBuf,
}

fn main() -> ExitCode {
    // Usage errors exit 1; clap's default of 2 would read as a partial run.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run(a) => run(a),
        Command::Evaluate(a) => {
            let format = match a.format {
                ReportChoice::Text => ReportFormat::TextTable,
                ReportChoice::Json => ReportFormat::Json,
                ReportChoice::Csv => ReportFormat::Csv,
            };
            let out = commands::evaluate(&a.annotations, &a.detections, a.audit.as_deref(), a.match_iou, format)?;
            print!("{out}");
            Ok(0)
        }
        Command::CorrectionReport(a) => {
            let report = commands::correction_report(&a.annotations, &a.audit, a.match_iou)?;
            print!("{}", commands::render_correction(&report, a.json));
            Ok(0)
        }
        Command::AnalyzeIg(a) => {
            let report = commands::analyze_ig(&a.detections, &a.relations)?;
            print!("{}", commands::render_ig(&report, a.json));
            Ok(0)
        }
        Command::ServeMock(a) => {
            let oracle = OracleConfig {
                seed: a.seed,
                match_iou: a.match_iou,
                alpha: a.alpha,
                beta: a.beta,
                gamma: a.gamma,
            };
            let key = match &a.api_key_env {
                Some(var) => {
                    Some(std::env::var(var).with_context(|| format!("environment variable {var} is not set"))?)
                }
                None => None,
            };
            let server = commands::start_mock_server(&a.bind, &a.annotations, a.detections.as_deref(), oracle, key)?;
            eprintln!("listening on {}", server.url());
            server.wait();
            Ok(0)
        }
        Command::ValidateProtocol(a) => {
            let report = commands::validate_protocol(&a.transcript)?;
            print!("{}", commands::render_validation(&report));
            Ok(if report.is_clean() { 0 } else { 1 })
        }
        Command::Synth(a) => {
            let spec = SynthSpec {
                images: a.images,
                width: a.width,
                height: a.height,
                min_objects: a.min_objects,
                max_objects: a.max_objects,
                regime: match a.regime {
                    RegimeChoice::Disjoint => OverlapRegime::Disjoint,
                    RegimeChoice::Clustered => OverlapRegime::Clustered,
                    RegimeChoice::Mixed => OverlapRegime::Mixed,
                },
                categories: a.categories,
                seed: a.seed,
            };
            commands::synth(&spec, &a.out_dir)?;
            Ok(0)
        }
        Command::InjectNoise(a) => {
            let n = commands::inject_noise(
                &a.annotations,
                &a.detections,
                a.rate,
                a.seed,
                a.match_iou,
                &a.out,
                &a.manifest,
            )?;
            eprintln!("injected {n} label error(s)");
            Ok(0)
        }
    }
}

fn run(a: RunArgs) -> Result<u8> {
    let mut cfg = RunConfig::load(&a.config)?;
    cfg.apply(&Overrides {
        seed: a.seed,
        mock_agents: matches!(a.agents, AgentsChoice::Mock),
        parallelism: a.parallelism,
        out_dir: a.out_dir,
        response_format: a.response_format.map(|f| match f {
            FormatChoice::StructuredJson => ResponseFormat::StructuredJson,
            FormatChoice::FreeText => ResponseFormat::FreeText,
        }),
        strict: a.strict,
    });
    let interrupt = Arc::new(AtomicBool::new(false));
    let flag = interrupt.clone();
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    let outcome = run_pipeline(
        &cfg,
        &RunControl {
            resume: a.resume,
            stop_after: a.stop_after,
            interrupt: Some(interrupt),
        },
    )?;
    let s = &outcome.summary;
    eprintln!(
        "{} image(s), {} detection(s), {} flagged, {} relabeled, {} failed; outputs in {}",
        s.counts.images,
        s.counts.detections,
        s.counts.flagged,
        s.counts.relabeled,
        s.counts.failed_images.len(),
        outcome.out_dir.display()
    );
    if outcome.status == RunStatus::Interrupted {
        eprintln!(
            "run stopped early with {} image(s) pending; rerun with --resume",
            s.pending_images
        );
    }
    Ok(outcome.status.exit_code() as u8)
}
