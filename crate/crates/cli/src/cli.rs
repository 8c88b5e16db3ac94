use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "biplink", version, about = "Covariate-informed Bayesian link prediction for bipartite meta-networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model and write posterior link probabilities.
    Fit(CommonArgs),
    /// Hold out recorded pairs and score how well they are recovered.
    Cv(CommonArgs),
    /// Trait importance and signed trait-partner correlations.
    Traits {
        #[command(flatten)]
        common: CommonArgs,
        /// Reuse the samples of an earlier `fit` instead of fitting again.
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Recompute summaries from the samples of an earlier `fit`.
    Summarize {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory of the fit to summarize.
        #[arg(long)]
        fit: PathBuf,
    },
    /// Generate a synthetic dataset with known truth.
    Simulate(CommonArgs),
    /// Check input files for consistency without fitting.
    Validate(CommonArgs),
}

/// Options shared by every subcommand; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Output directory (default: $BIPLINK_OUT/<command>).
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    /// Directory holding interactions.csv, studies.csv and optional trait and
    /// phylogeny files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Trait kind as LABEL=continuous|binary; repeatable.
    #[arg(long = "trait-kind", value_parser = parse_key_value)]
    pub trait_kind: Vec<(String, String)>,
    /// Sampler: coil or coilplus (cv also accepts both).
    #[arg(long)]
    pub variant: Option<String>,
    /// Occurrence prior: naive, default75, expert or file:<path>.
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    /// Fraction of post-burn-in sweeps kept.
    #[arg(long)]
    pub thin: Option<f64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: one per chain).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Sweeps between checkpoints; 0 disables them.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue chains from checkpoints in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop every chain after this many sweeps, leaving checkpoints to resume from.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Probability threshold for new-link reports; repeatable.
    #[arg(long)]
    pub threshold: Vec<f64>,
    /// Cross-validation replicates.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Recorded pairs held out per replicate.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Permutations per trait for importance scores.
    #[arg(long)]
    pub permutations: Option<usize>,
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected LABEL=KIND, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
