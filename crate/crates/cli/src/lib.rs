//! Command-line front end. Everything the binary does is reachable through
//! [`main_with_args`] and the `cmd_*` functions, so tests can drive it
//! in-process.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use biolinker::{PipelineConfig, RerankMode};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    cmd_evaluate, cmd_export_training, cmd_index, cmd_link, cmd_transfer_matrix, meta_path, Evaluation, IndexSummary,
    LinkInput, TransferRun,
};

/// Process exit status plus message.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_BACKEND,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (exit {})", self.message, self.code)
    }
}

impl std::error::Error for CliError {}

impl From<biolinker::Error> for CliError {
    fn from(e: biolinker::Error) -> Self {
        use biolinker::Error as E;
        let code = match &e {
            E::Contract(_) => EXIT_USAGE,
            E::Transport(_) | E::Protocol(_) => EXIT_BACKEND,
            E::Io { .. } | E::Parse { .. } | E::EmptyKnowledgeBase | E::Data(_) => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "biolinker", version, about = "Retrieve-and-rerank biomedical entity linking")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,

    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RerankArg {
    Setwise,
    Pointwise,
    None,
}

impl From<RerankArg> for RerankMode {
    fn from(a: RerankArg) -> Self {
        match a {
            RerankArg::Setwise => RerankMode::Setwise,
            RerankArg::Pointwise => RerankMode::Pointwise,
            RerankArg::None => RerankMode::None,
        }
    }
}

/// Flags that override values from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Index snapshot path.
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,
    /// Embedding cache file.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Aliases retrieved per mention.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Weight of the mention vector in the fused query.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true, conflicts_with = "no_genqr")]
    pub genqr: bool,
    #[arg(long = "no-genqr", global = true)]
    pub no_genqr: bool,
    #[arg(long, global = true, value_enum)]
    pub rerank: Option<RerankArg>,
    #[arg(long, global = true)]
    pub nil_sensitive: bool,
    /// Point-wise NIL threshold.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on concurrent LLM requests.
    #[arg(long, global = true)]
    pub max_inflight: Option<usize>,
    /// Use the built-in deterministic backends instead of HTTP endpoints.
    #[arg(long, global = true)]
    pub mock_backends: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed every KB alias and write an index snapshot.
    Index {
        /// Snapshot path (defaults to --index).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Link mentions and write one JSON trace per line.
    Link {
        /// Mention JSONL; `-` reads stdin. Defaults to --dataset.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a dataset and write report.json, report.txt and traces.jsonl.
    Evaluate {
        #[arg(long, default_value = "eval-out")]
        out_dir: PathBuf,
        /// Also time a serial, unbatched pass.
        #[arg(long)]
        throughput: bool,
    },
    /// Write chat-format set-wise training samples.
    ExportTraining {
        #[arg(long)]
        out: PathBuf,
        /// Keep options in retrieval order.
        #[arg(long)]
        no_shuffle: bool,
    },
    /// Combine evaluation reports into source x target CSV tables.
    TransferMatrix {
        /// Output prefix; writes <prefix>.acc.csv, .delta.csv, .pvalue.csv, .marker.csv.
        #[arg(long)]
        out: PathBuf,
        /// `SOURCE:TARGET:REPORT_JSON`, one per run.
        #[arg(required = true)]
        runs: Vec<String>,
    },
}

/// Reads `--config` (if any) and applies flag overrides on top.
pub fn resolve_config(o: &Overrides) -> Result<PipelineConfig, CliError> {
    let mut c = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str::<PipelineConfig>(&text)
                .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = &o.kb {
        c.kb_path = Some(v.clone());
    }
    if let Some(v) = &o.dataset {
        c.dataset_path = Some(v.clone());
    }
    if let Some(v) = &o.index {
        c.index_path = Some(v.clone());
    }
    if let Some(v) = &o.cache {
        c.cache_path = Some(v.clone());
    }
    if let Some(v) = o.k {
        c.k = v;
    }
    if let Some(v) = o.alpha {
        c.alpha = v;
    }
    if o.genqr {
        c.genqr_enabled = true;
    }
    if o.no_genqr {
        c.genqr_enabled = false;
    }
    if let Some(v) = o.rerank {
        c.rerank_mode = v.into();
    }
    if o.nil_sensitive {
        c.nil_sensitive = true;
    }
    if let Some(v) = o.threshold {
        c.pointwise_threshold = v;
    }
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.max_inflight {
        c.max_inflight = v;
    }
    if o.mock_backends {
        c.mock_backends = true;
    }
    c.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(c)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

pub fn main_with_args<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => Ok(()),
                _ => Err(CliError::usage("")),
            };
        }
    };
    init_logging(cli.verbose);
    run(cli)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = resolve_config(&cli.overrides)?;
    match cli.command {
        Command::Index { out } => {
            let summary = cmd_index(&config, out.as_deref())?;
            eprintln!(
                "indexed {} aliases (dim {}) -> {}",
                summary.aliases,
                summary.dim,
                summary.path.display()
            );
        }
        Command::Link { input, out } => {
            let input = match input.or_else(|| config.dataset_path.clone()) {
                Some(p) if p.as_os_str() == "-" => LinkInput::Stdin,
                Some(p) => LinkInput::File(p),
                None => return Err(CliError::usage("link needs --input or --dataset")),
            };
            cmd_link(&config, input, out.as_deref())?;
        }
        Command::Evaluate { out_dir, throughput } => {
            let ev = cmd_evaluate(&config, &out_dir, throughput)?;
            print!("{}", ev.report.to_text_table());
        }
        Command::ExportTraining { out, no_shuffle } => {
            let mut config = config;
            if no_shuffle {
                config.training_shuffle = false;
            }
            let records = cmd_export_training(&config, &out)?;
            let flagged = records.iter().filter(|r| r.gold_not_retrieved).count();
            eprintln!(
                "wrote {} samples to {} ({flagged} with gold not retrieved)",
                records.len(),
                out.display()
            );
        }
        Command::TransferMatrix { out, runs } => {
            let runs = runs.iter().map(|s| s.parse()).collect::<Result<Vec<TransferRun>, _>>()?;
            let m = cmd_transfer_matrix(&config, &runs, &out)?;
            print!("{}", m.acc_csv());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("biolinker").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_defaults() {
        let cli = parse(&["evaluate", "--k", "5", "--alpha", "1", "--no-genqr", "--rerank", "pointwise", "--nil-sensitive"]);
        let c = resolve_config(&cli.overrides).unwrap();
        assert_eq!(c.k, 5);
        assert_eq!(c.alpha, 1.0);
        assert!(!c.genqr_enabled);
        assert_eq!(c.rerank_mode, RerankMode::Pointwise);
        assert!(c.nil_sensitive);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "k = 7\nalpha = 0.3\nseed = 9\n[mock]\nembed_dim = 16\n").unwrap();
        let cli = parse(&["--config", path.to_str().unwrap(), "index", "--alpha", "0.8"]);
        let c = resolve_config(&cli.overrides).unwrap();
        assert_eq!((c.k, c.alpha, c.seed, c.mock.embed_dim), (7, 0.8, 9, 16));
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let cli = parse(&["index", "--alpha", "2"]);
        assert_eq!(resolve_config(&cli.overrides).unwrap_err().code, EXIT_USAGE);
        assert_eq!(main_with_args(["biolinker", "frobnicate"]).unwrap_err().code, EXIT_USAGE);
        assert!(Cli::try_parse_from(["biolinker", "link", "--genqr", "--no-genqr"]).is_err());
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(biolinker::Error::Transport("x".into())).code, EXIT_BACKEND);
        assert_eq!(CliError::from(biolinker::Error::EmptyKnowledgeBase).code, EXIT_DATA);
    }
}
