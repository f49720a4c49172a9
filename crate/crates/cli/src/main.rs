//! `reco`: the taxonomy, curation, training and evaluation pipeline behind one binary.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reco_core::ErrorClass;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] reco_core::Error),
    #[error("{0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
        }
    }

    /// 2 configuration, 3 data, 4 numeric divergence.
    fn exit_code(&self) -> u8 {
        let class = match self {
            CliError::Core(e) => e.class(),
            CliError::Config(_) => ErrorClass::Config,
            CliError::Io { .. } => ErrorClass::Data,
        };
        match class {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "reco", version, about = "Relational contrastive learning toolkit")]
struct Cli {
    /// Run configuration (TOML). Every key is optional.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the configuration's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate a taxonomy, or export its similarity tables.
    #[command(subcommand)]
    Taxonomy(TaxonomyCommand),
    /// Concept filtering, realm selection and image de-duplication.
    #[command(subcommand)]
    Curate(CurateCommand),
    /// Synthetic hierarchical datasets.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Train an encoder; writes checkpoint.bin, checkpoint.toml and loss_history.csv.
    Train(TrainArgs),
    /// Fit per-realm linear probes on frozen features; writes results.csv.
    Probe(ProbeArgs),
    /// Compare probe results against a baseline; writes deltas.csv and deltas.svg.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TaxonomyInput {
    /// Edge file: one `parent<TAB>child` pair per line.
    #[arg(long, value_name = "FILE")]
    pub edges: PathBuf,
    /// Node file: `id<TAB>name<TAB>is_class<TAB>image_count<TAB>flags`.
    #[arg(long, value_name = "FILE")]
    pub nodes: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum TaxonomyCommand {
    /// Check the taxonomy loads; prints node, edge, class and depth counts.
    Validate {
        #[command(flatten)]
        input: TaxonomyInput,
    },
    /// Write raw.csv and normalized.csv for the leaf classes (or `--classes`).
    Similarity {
        #[command(flatten)]
        input: TaxonomyInput,
        /// Comma-separated class ids; defaults to every leaf class.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum CurateCommand {
    /// Apply the concept rules; writes valid.csv and rejected.csv.
    Filter {
        #[arg(long, value_name = "FILE")]
        edges: PathBuf,
        #[arg(long, value_name = "FILE")]
        nodes: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Filter concepts, then select realms among the candidates; writes realms.csv.
    Realms {
        #[arg(long, value_name = "FILE")]
        edges: PathBuf,
        #[arg(long, value_name = "FILE")]
        nodes: PathBuf,
        /// Comma-separated candidate sub-tree roots.
        #[arg(long, value_delimiter = ',', required = true)]
        candidates: Vec<String>,
        /// Comma-separated roots rejected by judgment.
        #[arg(long, value_delimiter = ',')]
        excluded: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Remove candidates whose hash matches a reference image; writes kept.csv,
    /// removed.csv, hashes.csv and warnings.txt.
    Dedup {
        /// Candidate manifest (`id,path`).
        #[arg(long, value_name = "FILE")]
        candidates: PathBuf,
        /// Reference manifest; repeat for several corpora.
        #[arg(long = "reference", value_name = "FILE")]
        references: Vec<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Write dataset.csv for the taxonomy's leaf classes.
    Generate {
        #[command(flatten)]
        input: TaxonomyInput,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    input: TaxonomyInput,
    /// Dataset CSV from `synth generate`.
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Encoder checkpoint; without it the raw features are probed.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Candidate results.csv.
    #[arg(long, value_name = "FILE")]
    candidate: PathBuf,
    /// Baseline results.csv.
    #[arg(long, value_name = "FILE")]
    baseline: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    match cli.command {
        Command::Taxonomy(TaxonomyCommand::Validate { input }) => commands::taxonomy_validate(&input),
        Command::Taxonomy(TaxonomyCommand::Similarity { input, classes, out }) => {
            commands::taxonomy_similarity(&cfg, &input, &classes, &out)
        }
        Command::Curate(CurateCommand::Filter { edges, nodes, out }) => commands::curate_filter(&cfg, &edges, &nodes, &out),
        Command::Curate(CurateCommand::Realms { edges, nodes, candidates, excluded, out }) => {
            commands::curate_realms(&cfg, &edges, &nodes, &candidates, &excluded, &out)
        }
        Command::Curate(CurateCommand::Dedup { candidates, references, out }) => {
            commands::curate_dedup(&cfg, &candidates, &references, &out)
        }
        Command::Synth(SynthCommand::Generate { input, out }) => commands::synth_generate(&cfg, &input, &out),
        Command::Train(a) => commands::train(&cfg, &a.input, &a.dataset, &a.out),
        Command::Probe(a) => commands::probe(&cfg, &a.dataset, a.checkpoint.as_deref(), &a.out),
        Command::Report(a) => commands::report(&cfg, &a.candidate, &a.baseline, &a.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.code());
            ExitCode::from(e.exit_code())
        }
    }
}
