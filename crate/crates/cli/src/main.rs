mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;

/// Sock-puppet audit testbed for a simulated short-video feed.
#[derive(Debug, Parser)]
#[command(name = "fypaudit", version)]
struct Cli {
    /// TOML config; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic video corpus.
    Corpus(CorpusArgs),
    /// Serve the platform simulator over HTTP.
    Serve(ServeArgs),
    /// Run the recording proxy in front of a platform.
    Proxy(ProxyArgs),
    /// Run the three-phase experiment.
    Experiment(ExperimentArgs),
    /// Clone an account by rewriting and replaying its signal trace.
    Clone(CloneArgs),
    /// Check clones against their original and baselines.
    Verify(VerifyArgs),
    /// Recompute statistics from a results directory.
    Analyze(AnalyzeArgs),
    /// Write tables, the relapse tally and plots for a results directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub listen: Option<String>,
    /// Corpus JSONL; generated from the config when the file is absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Platform seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub calibration_profile: Option<String>,
}

#[derive(Debug, Args)]
pub struct ProxyArgs {
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub upstream: Option<String>,
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Results directory; must be empty or absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Topic to audit; repeat for several.
    #[arg(long = "topic")]
    pub topics: Vec<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub phase_length: Option<usize>,
    #[arg(long)]
    pub seed_count: Option<usize>,
    #[arg(long)]
    pub page_size: Option<u32>,
    #[arg(long)]
    pub confidence: Option<f64>,
    #[arg(long)]
    pub calibration_profile: Option<String>,
    #[arg(long)]
    pub corpus_size: Option<usize>,
    #[arg(long)]
    pub corpus_seed: Option<u64>,
    /// Concurrent runs; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Drive an already running platform instead of in-process ones.
    #[arg(long)]
    pub upstream: Option<String>,
}

#[derive(Debug, Args)]
pub struct CloneArgs {
    /// Signal trace of the source account.
    #[arg(long)]
    pub trace: PathBuf,
    /// Credentials JSON of the source account.
    #[arg(long)]
    pub source: PathBuf,
    /// Credentials JSON of a target account; repeatable.
    #[arg(long = "target")]
    pub targets: Vec<PathBuf>,
    /// Fresh accounts to register and clone into.
    #[arg(long, default_value_t = 0)]
    pub count: usize,
    #[arg(long)]
    pub upstream: Option<String>,
    /// none, recorded, or a scale factor such as 0.1.
    #[arg(long, default_value = "none")]
    pub pacing: String,
    /// Where rewritten traces, credentials and replay reports go.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub clones: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub baselines: Vec<PathBuf>,
    #[arg(long)]
    pub topic: String,
    #[arg(long, default_value_t = 200)]
    pub fetch: usize,
    #[arg(long, default_value_t = 50)]
    pub page_size: u32,
    #[arg(long, default_value_t = 0.99)]
    pub confidence: f64,
    #[arg(long)]
    pub upstream: Option<String>,
    /// Also write the verdict JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long, default_value_t = 0.99)]
    pub confidence: f64,
    /// Write the tables here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.99)]
    pub confidence: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = commands::load_config(cli.config.as_deref()).and_then(|config| match cli.command {
        Command::Corpus(a) => commands::corpus(&config, a),
        Command::Serve(a) => commands::serve(&config, a),
        Command::Proxy(a) => commands::proxy(&config, a),
        Command::Experiment(a) => commands::experiment(config, a),
        Command::Clone(a) => commands::clone(&config, a),
        Command::Verify(a) => commands::verify(&config, a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Report(a) => commands::report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("fypaudit: {error:#}");
            ExitCode::from(code)
        }
    }
}
