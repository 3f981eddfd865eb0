use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use routeprobe_cli::config::ConfigError;

#[derive(Debug, Parser)]
#[command(name = "routeprobe", version, about = "Expert-routing analysis for Mixture-of-Experts models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random choice; recorded in report headers.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Tagset file: one UD tag per line, `!` prefix excludes from the global score.
    #[arg(long, global = true)]
    pub tagset: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// TOML settings file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a CoNLL-U corpus and write its POS distribution.
    Ingest(commands::IngestArgs),
    /// Train a byte-level BPE vocabulary and align subtokens with POS.
    Tokenize(commands::TokenizeArgs),
    /// Train the toy MoE language model on the corpus.
    Train(commands::TrainArgs),
    /// Write a routing trace from a trained model or a synthetic router.
    Trace(commands::TraceArgs),
    /// Specialization and KL reports for a trace.
    Metrics(commands::MetricsArgs),
    /// Train and evaluate the routing-path POS probe.
    Probe(commands::ProbeArgs),
    /// Probe accuracy with layers removed from either end of the path.
    Ablate(commands::ProbeArgs),
    /// 2D projection of routing paths with a scatter plot.
    Project(commands::ProjectArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Tokenize(_) => "tokenize",
            Command::Train(_) => "train",
            Command::Trace(_) => "trace",
            Command::Metrics(_) => "metrics",
            Command::Probe(_) => "probe",
            Command::Ablate(_) => "ablate",
            Command::Project(_) => "project",
        }
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return "config";
        }
        if cause.is::<routeprobe::corpus::CorpusError>() {
            return "corpus";
        }
        if cause.is::<routeprobe::tokenizer::TokenizerError>() {
            return "tokenizer";
        }
        if cause.is::<routeprobe::moe::MoeError>() {
            return "model";
        }
        if cause.is::<routeprobe::trace::TraceError>() {
            return "trace";
        }
        if cause.is::<routeprobe::metrics::MetricsError>() {
            return "metrics";
        }
        if cause.is::<routeprobe::probe::ProbeError>() {
            return "probe";
        }
        if cause.is::<routeprobe::projection::ProjectionError>() {
            return "projection";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "error"
}

/// One JSON object on stderr, so scripts can parse failures.
fn report_error(command: &str, kind: &str, message: &str, chain: Vec<String>) {
    let body = serde_json::json!({
        "error": { "command": command, "kind": kind, "message": message, "causes": chain }
    });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("", "usage", e.to_string().trim(), Vec::new());
            return ExitCode::from(2);
        }
    };
    let name = cli.command.name();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&cli.common, a),
        Command::Tokenize(a) => commands::tokenize(&cli.common, a),
        Command::Train(a) => commands::train(&cli.common, a),
        Command::Trace(a) => commands::trace(&cli.common, a),
        Command::Metrics(a) => commands::metrics(&cli.common, a),
        Command::Probe(a) => commands::probe(&cli.common, a),
        Command::Ablate(a) => commands::ablate(&cli.common, a),
        Command::Project(a) => commands::project(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain = e.chain().skip(1).map(|c| c.to_string()).collect();
            report_error(name, error_kind(&e), &e.to_string(), chain);
            ExitCode::FAILURE
        }
    }
}
