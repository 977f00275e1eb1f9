//! Command-line pipeline: world generation, posterior training, PCA, annotation,
//! attention training, evaluation and heatmaps, with file-based handoffs.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{AnnotateKind, Context, Method};
pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "glimpse", version, about = "Glimpse sequence design and partially supervised attention")]
pub struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory (overrides the config); must already exist.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Global seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-image parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the world and sample the train/val/test/bank splits.
    WorldGen,
    /// Train the amortised posterior.
    AvpTrain,
    /// Fit PCA to the retrieval bank.
    PcaFit,
    /// Produce glimpse supervision for the training split.
    Annotate {
        #[arg(long, value_enum)]
        kind: AnnotateKind,
    },
    /// Train an attention network.
    AttnTrain {
        #[arg(long, value_enum)]
        method: Method,
        /// Supervision records to use instead of the annotation output.
        #[arg(long)]
        sup: Option<PathBuf>,
    },
    /// Evaluate a trained network on the test split.
    Eval {
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Export EPE heatmaps along the greedy sequence of one test image.
    Heatmap {
        #[arg(long, default_value_t = 0)]
        image: u64,
    },
}

/// Loads the config and resolves the overrides.
pub fn context(cli: &Cli) -> Result<Context, CliError> {
    let text = match &cli.config {
        Some(path) => artifacts::read_text(path)?,
        None => "{}".to_string(),
    };
    let config = RunConfig::parse(&text)?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| CliError::Config("no output directory (--out or config.out)".into()))?;
    let seed = cli.seed.unwrap_or(config.seed);
    Ok(Context::new(config, text, out, seed))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        // Fails only if a pool already exists (repeated in-process runs); the first one stays.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = context(cli)?;
    match &cli.command {
        Command::WorldGen => commands::world_gen(&ctx),
        Command::AvpTrain => commands::avp_train_cmd(&ctx),
        Command::PcaFit => commands::pca_fit_cmd(&ctx),
        Command::Annotate { kind } => commands::annotate_cmd(&ctx, *kind),
        Command::AttnTrain { method, sup } => commands::attn_train_cmd(&ctx, *method, sup.as_deref()).map(|_| ()),
        Command::Eval { method } => commands::eval_cmd(&ctx, *method).map(|_| ()),
        Command::Heatmap { image } => commands::heatmap_cmd(&ctx, *image),
    }
}

/// Parses `args` (including the program name) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
