use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "wda", version, about = "Adversarial unsupervised domain adaptation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random substream; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with any subset of the experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Wgan,
    Gan,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic device-shift dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        severity: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the source extractor and classifier.
    TrainSource {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Adapt a copy of the source extractor to the target domain.
    Adapt {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        source_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        n_d: Option<usize>,
        #[arg(long)]
        clip: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        steps_per_epoch: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate checkpoints on both domains and print the comparison table.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        ckpts: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate source/target divergences before and after adaptation.
    Divergence {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Render confusion heat-maps and adaptation-history curves.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Adaptation history files (`history.jsonl`) to draw.
        #[arg(long, num_args = 1..)]
        history: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}
