//! `adaptlaw` command-line tool.
//!
//! Exit codes: 0 success (an infeasible plan is a success), 1 configuration
//! or usage error, 2 data error, 3 fit failure.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use adaptlaw::planner::Tolerance;
use adaptlaw::{AnchorPolicy, Domain, ErrorKind, LawForm};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "adaptlaw",
    version,
    about = "Fit, compare and plan with pre-training-aware continual pre-training laws"
)]
pub struct Cli {
    /// Seed for multistart fitting and synthetic noise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for relative output paths.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Suppress summaries on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit one law form to a slice of a dataset.
    Fit(FitArgs),
    /// Score a saved fit on held-out stages, or run an in-stage oracle fit.
    Evaluate(EvaluateArgs),
    /// Fit several forms on train stages and tabulate held-out metrics.
    Compare(CompareArgs),
    /// Minimal adaptation budget and replay ratio under forgetting and target constraints.
    Plan(PlanArgs),
    /// Generate a synthetic dataset from known parameters.
    Synth(SynthArgs),
    /// Dense predictions of a saved fit over (N, r, D) at one stage.
    PredictGrid(PredictGridArgs),
}

fn parse_form(s: &str) -> Result<LawForm, String> {
    s.parse().map_err(|e: adaptlaw::Error| e.to_string())
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    s.parse().map_err(|e: adaptlaw::Error| e.to_string())
}

fn parse_anchors(s: &str) -> Result<AnchorPolicy, String> {
    s.parse().map_err(|e: adaptlaw::Error| e.to_string())
}

fn parse_tolerance(s: &str) -> Result<Tolerance, String> {
    s.parse().map_err(|e: adaptlaw::Error| e.to_string())
}

#[derive(Args, Debug, Clone)]
pub struct FitOptions {
    /// Number of multistart initializations.
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub huber_delta: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// JSON file with a full fit configuration; flags override its fields.
    #[arg(long)]
    pub fit_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_form)]
    pub form: LawForm,
    #[arg(long, value_parser = parse_domain, default_value = "target")]
    pub domain: Domain,
    /// Pre-training stages (ptpp) used for fitting; all stages when omitted.
    #[arg(long, value_delimiter = ',')]
    pub train_ptpp: Vec<f64>,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(long, default_value = "fit.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Saved fit to score (transfer mode).
    #[arg(long, required_unless_present = "oracle")]
    pub fit: Option<PathBuf>,
    /// Form fitted in oracle mode.
    #[arg(long, value_parser = parse_form, required_if_eq("oracle", "true"))]
    pub form: Option<LawForm>,
    #[arg(long, value_parser = parse_domain, default_value = "target")]
    pub domain: Domain,
    #[arg(long, value_delimiter = ',', required = true)]
    pub eval_ptpp: Vec<f64>,
    /// Fit and score on the same stage (an upper bound, not a forecast).
    #[arg(long)]
    pub oracle: bool,
    #[command(flatten)]
    pub fit_opts: FitOptions,
    #[arg(long, default_value = "evaluation.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_domain, default_value = "target")]
    pub domain: Domain,
    #[arg(long, value_delimiter = ',', required_unless_present = "oracle")]
    pub train_ptpp: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub eval_ptpp: Vec<f64>,
    /// Forms to compare; all four when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_form)]
    pub forms: Vec<LawForm>,
    /// `none`, `flags`, `auto:<k>` or `auto:<k>@<N>`.
    #[arg(long, value_parser = parse_anchors, default_value = "none")]
    pub anchors: AnchorPolicy,
    /// Fit and score each form on the evaluation stage itself.
    #[arg(long)]
    pub oracle: bool,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(long, default_value = "comparison.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Source-domain fit (forgetting constraint).
    #[arg(long)]
    pub src_fit: PathBuf,
    /// Target-domain fit (loss threshold).
    #[arg(long)]
    pub tgt_fit: PathBuf,
    /// Model size N.
    #[arg(long)]
    pub n: f64,
    /// Pre-training tokens per parameter of the model being adapted.
    #[arg(long)]
    pub ptpp: f64,
    /// `2%` is relative to the baseline source loss; a bare number is nats; `inf` disables.
    #[arg(long, value_parser = parse_tolerance, default_value = "2%")]
    pub forget: Tolerance,
    /// Target-loss threshold in nats.
    #[arg(long)]
    pub tau: f64,
    /// `law-limit` or a measured pre-adaptation source loss.
    #[arg(long, default_value = "law-limit")]
    pub baseline: String,
    #[arg(long)]
    pub r_points: Option<usize>,
    #[arg(long)]
    pub atpp_min: Option<f64>,
    #[arg(long)]
    pub atpp_max: Option<f64>,
    #[arg(long)]
    pub scan_points: Option<usize>,
    /// Landscape resolution as `<r points>x<atpp points>`.
    #[arg(long)]
    pub landscape: Option<String>,
    /// Also write SVG heatmaps of both landscapes.
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub allow_unconverged: bool,
    #[arg(long, default_value = "plan.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON synthetic specification; a built-in preset when omitted.
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// `target` (gated-plus-floor truth) or `source` (additive-floor truth).
    #[arg(long, default_value = "target")]
    pub preset: String,
    /// Standard deviation of the Gaussian noise on ln loss.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value = "synth.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictGridArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub ptpp: f64,
    /// JSON grid; otherwise built from the axis flags below.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2.41e8,5.17e8,1.4e9,8.1e9")]
    pub sizes: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5")]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub atpp_min: f64,
    #[arg(long, default_value_t = 50.0)]
    pub atpp_max: f64,
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    #[arg(long, default_value = "grid_predictions.csv")]
    pub out: PathBuf,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Fit => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let adaptlaw::Error::Fit { per_start, .. } = &e {
                eprintln!("per-start objectives: {per_start:?}");
            }
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
